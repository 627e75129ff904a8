"""Acceptance suite: one test per numbered criterion, in order.

Each test prints an ``ACCEPTANCE n: PASS`` line on success (visible with
``pytest -s``).  Criteria 6-9 evaluate published benchmark values and need
the real dataset files under ``data/`` (or ``$IMPLICITCF_DATA_DIR``); when
the files are absent those tests fail with instructions rather than being
silently skipped.  Everything else runs self-contained.
"""

import math
import os
import time

import numpy as np
import pytest

from implicitcf.cli import main
from implicitcf.data import (
    InteractionMatrix,
    SplitDataset,
    TestCase,
    read_canonical,
    sample_test_negatives,
    sample_train_negatives,
)
from implicitcf.evaluation import (
    evaluate,
    hit_ratio_at_k,
    item_pop_score_fn,
    model_score_fn,
    ndcg_at_k,
    rank_and_truncate,
)
from implicitcf.kernels import central_difference
from implicitcf.models import ArchSpec, backward, forward, fuse_pretrained, init_params
from implicitcf.synthetic import generate_ratings, write_ratings
from implicitcf.training import (
    STREAM_INIT,
    STREAM_TEST_NEGATIVES,
    TrainConfig,
    bce_loss,
    train,
)

DATA_DIR = os.environ.get(
    "IMPLICITCF_DATA_DIR",
    os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data"))

MISSING_DATA = """\
{name} dataset files not found.

Looked for: {looked}

This criterion checks published benchmark numbers and cannot run without the
real data (the build environment has no route to download it).  Place the
files under {data_dir} (or set IMPLICITCF_DATA_DIR); see README.md section
"Benchmark datasets" for the exact layout, then rerun:

    pytest tests/test_acceptance.py -m requires_dataset -v
"""


def _pass(n, message):
    print(f"\nACCEPTANCE {n}: PASS - {message}")


def _canonical_triple(directory, name):
    return [os.path.join(directory, f"{name}.{kind}")
            for kind in ("train.rating", "test.rating", "test.negative")]


def _load_lastfm():
    candidates = [DATA_DIR, os.path.join(DATA_DIR, "lastfm")]
    looked = []
    for directory in candidates:
        paths = _canonical_triple(directory, "lastfm")
        looked.extend(paths[:1])
        if all(os.path.exists(p) for p in paths):
            return read_canonical(directory, "lastfm")
    pytest.fail(MISSING_DATA.format(name="lastfm", looked=", ".join(looked),
                                    data_dir=DATA_DIR), pytrace=False)


def _load_ml1m():
    # canonical triple first, then raw MovieLens which we prepare and cache
    for directory in (DATA_DIR, os.path.join(DATA_DIR, "ml-1m")):
        if all(os.path.exists(p) for p in _canonical_triple(directory, "ml-1m")):
            return read_canonical(directory, "ml-1m")
    prepared = os.path.join(DATA_DIR, "prepared")
    if all(os.path.exists(p) for p in _canonical_triple(prepared, "ml-1m")):
        return read_canonical(prepared, "ml-1m")
    raw_candidates = [os.path.join(DATA_DIR, "ml-1m", "ratings.dat"),
                      os.path.join(DATA_DIR, "ml-1m.dat")]
    for raw in raw_candidates:
        if os.path.exists(raw):
            rc = main(["prepare", "--raw", raw, "--name", "ml-1m",
                       "--out", prepared, "--no-filter", "--seed", "42"])
            assert rc == 0, "preparing ml-1m failed"
            return read_canonical(prepared, "ml-1m")
    looked = [os.path.join(DATA_DIR, "ml-1m.train.rating")] + raw_candidates
    pytest.fail(MISSING_DATA.format(name="ml-1m", looked=", ".join(looked),
                                    data_dir=DATA_DIR), pytrace=False)


def _train_variant(variant, split, cases, factors, ratio, epochs, seed,
                   eval_every=2, lr=0.001, batch=256):
    arch = ArchSpec.default(variant, split.num_users, split.num_items, factors)
    params = init_params(arch, np.random.default_rng([seed, STREAM_INIT]))
    config = TrainConfig(batch_size=batch, learning_rate=lr, optimizer="adam",
                         epochs=epochs, negative_ratio=ratio, seed=seed,
                         eval_every=eval_every)
    return train(params, split, cases, config, k=10)


def _fused_pipeline(split, cases, factors, ratio, epochs, seed, eval_every=2):
    """Pre-train both branches with Adam, fuse, then SGD fine-tune."""
    rl_params, rl_hist = _train_variant("rl", split, cases, factors, ratio,
                                        epochs, seed, eval_every)
    ml_params, ml_hist = _train_variant("ml", split, cases, factors, ratio,
                                        epochs, seed, eval_every)
    fused = fuse_pretrained(rl_params, ml_params, alpha=0.5)
    config = TrainConfig(batch_size=256, learning_rate=0.001, optimizer="sgd",
                         epochs=epochs, negative_ratio=ratio, seed=seed,
                         eval_every=eval_every)
    best, hist = train(fused, split, cases, config, k=10)
    report = evaluate(model_score_fn(best, split.train), cases, k=10)
    return best, report, (rl_hist, ml_hist, hist)


def _subsample_users(split, cases, fraction, rng):
    keep = np.sort(rng.choice(split.num_users,
                              size=int(fraction * split.num_users), replace=False))
    remap = {int(u): k for k, u in enumerate(keep)}
    users, items = [], []
    times = []
    for new_u, old_u in enumerate(keep):
        row = split.train.user_items[old_u]
        users.append(np.full(row.size, new_u, dtype=np.int64))
        items.append(row)
        times.append(split.train_times[old_u])
    train = InteractionMatrix.from_pairs(
        len(keep), split.num_items, np.concatenate(users), np.concatenate(items))
    sub = SplitDataset(train=train,
                       train_times=[t.copy() for t in times],
                       test_items=split.test_items[keep].copy(),
                       test_times=split.test_times[keep].copy())
    sub_cases = [TestCase(user=remap[c.user], positive_item=c.positive_item,
                          negatives=c.negatives)
                 for c in cases if c.user in remap]
    return sub, sub_cases


# ---------------------------------------------------------------------------
# 1. gradient correctness
# ---------------------------------------------------------------------------

def test_criterion_1_gradient_correctness():
    start = time.perf_counter()
    checked = 0
    for variant in ("rl", "ml", "fused"):
        for seed in (17, 40, 91):
            for label in (1.0, 0.0):
                arch = ArchSpec.default(variant, 5, 6, 2)   # all dims <= 8
                params = init_params(arch, np.random.default_rng(seed),
                                     stddev=0.5)
                row = np.array([0, 2, 5])
                col = np.array([1, 4])

                def loss(tensors):
                    probe = params.__class__(params.arch, tensors)
                    _, logits, _ = forward(probe, [row], [col])
                    return float(bce_loss(logits, label)[0])

                numeric = central_difference(loss, params.tensors, h=1e-5)
                probs, _, cache = forward(params, [row], [col])
                grads = backward(params, cache, np.array([probs[0] - label]))
                for name in params.tensors:
                    denom = np.maximum(1.0, np.abs(numeric[name]))
                    rel = np.abs(grads[name] - numeric[name]) / denom
                    assert rel.max() <= 1e-4, (variant, seed, label, name)
                    checked += grads[name].size
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"gradient check took {elapsed:.1f}s"
    _pass(1, f"{checked} parameter gradients within 1e-4 of central "
             f"differences in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. metric oracles
# ---------------------------------------------------------------------------

def test_criterion_2_metric_oracles():
    assert ndcg_at_k(1, 10) == 1.0
    assert abs(ndcg_at_k(3, 10) - 0.5) < 1e-15
    rng = np.random.default_rng(123)
    k = 10
    for trial in range(1000):
        positive = int(rng.integers(0, 500))
        pool = np.setdiff1d(np.arange(500), [positive])
        case = TestCase(user=0, positive_item=positive,
                        negatives=rng.choice(pool, size=100, replace=False))
        scores = np.round(rng.normal(size=101), 2)   # induce score ties
        ranked = rank_and_truncate(scores, case)
        # brute force: full naive sort, generic truncated DCG with IDCG = 1
        cands = np.concatenate(([case.positive_item], case.negatives))
        order = sorted(range(101), key=lambda j: (-scores[j], cands[j]))
        rank = [cands[j] for j in order].index(case.positive_item) + 1
        brute_hr = 1.0 if rank <= k else 0.0
        brute_dcg = sum((1.0 if [cands[j] for j in order][pos] == positive
                         else 0.0) / math.log2(pos + 2)
                        for pos in range(k))
        assert ranked.rank_of_positive == rank
        assert hit_ratio_at_k(ranked.rank_of_positive, k) == brute_hr
        assert abs(ndcg_at_k(ranked.rank_of_positive, k) - brute_dcg) <= 1e-12
    _pass(2, "HR/NDCG match brute force on 1000 random rank lists")


# ---------------------------------------------------------------------------
# 3. loss anchor
# ---------------------------------------------------------------------------

def _synthetic_split(num_users, num_items, seed, **kwargs):
    log = generate_ratings(num_users=num_users, num_items=num_items, seed=seed,
                           **kwargs)
    from implicitcf.data import build_split
    _, split = build_split(log)
    return split


def test_criterion_3_initial_loss_anchor():
    datasets = [
        _synthetic_split(300, 160, seed=7),
        _synthetic_split(150, 400, seed=9, min_interactions=5,
                         max_interactions=12),
    ]
    worst = 0.0
    for split in datasets:
        for variant in ("rl", "ml", "fused"):
            arch = ArchSpec.default(variant, split.num_users, split.num_items, 8)
            params = init_params(arch, np.random.default_rng([11, STREAM_INIT]),
                                 stddev=0.01)
            config = TrainConfig(epochs=0, negative_ratio=4, seed=11)
            _, history = train(params, split, None, config)
            gap = abs(history.initial_loss - math.log(2))
            worst = max(worst, gap)
            assert gap < 0.05, (variant, history.initial_loss)
    _pass(3, f"initial loss within {worst:.2e} of ln 2 across datasets/variants")


# ---------------------------------------------------------------------------
# 4. capacity check
# ---------------------------------------------------------------------------

def test_criterion_4_capacity_on_3x3_toy():
    pairs = [(0, 0), (0, 1), (1, 0), (1, 1), (2, 2)]
    users = np.array([p[0] for p in pairs])
    items = np.array([p[1] for p in pairs])
    train_matrix = InteractionMatrix.from_pairs(3, 3, users, items)
    split = SplitDataset(train=train_matrix,
                         train_times=[np.zeros(r.size, dtype=np.int64)
                                      for r in train_matrix.user_items],
                         test_items=np.array([2, 2, 0]),
                         test_times=np.zeros(3, dtype=np.int64))
    reached = {}
    for variant in ("rl", "ml", "fused"):
        # toy-scale config: wide head and init keep the ReLU product path alive
        arch = ArchSpec.default(variant, 3, 3, 32)
        params = init_params(arch, np.random.default_rng(0), stddev=0.5)
        config = TrainConfig(batch_size=2, learning_rate=0.05, epochs=200,
                             negative_ratio=2, seed=11)
        _, history = train(params, split, None, config)
        below = [e.epoch for e in history.entries if e.loss < 0.05]
        assert below, f"{variant} never reached loss < 0.05 within 200 epochs"
        reached[variant] = below[0]
    _pass(4, "loss < 0.05 within 200 epochs: "
             + ", ".join(f"{v} at epoch {e}" for v, e in reached.items()))


# ---------------------------------------------------------------------------
# 5. random-scorer sanity
# ---------------------------------------------------------------------------

def test_criterion_5_untrained_model_hits_at_chance_rate():
    split = _synthetic_split(1200, 170, seed=13, min_interactions=6,
                             max_interactions=16)
    assert split.num_users >= 1000
    cases = sample_test_negatives(split, 100,
                                  np.random.default_rng([13, STREAM_TEST_NEGATIVES]))
    arch = ArchSpec.default("fused", split.num_users, split.num_items, 8)
    params = init_params(arch, np.random.default_rng([13, STREAM_INIT]),
                         stddev=0.01)
    report = evaluate(model_score_fn(params, split.train), cases, k=10)
    expected = 10 / 101
    assert abs(report.hr - expected) < 0.02, report.hr
    _pass(5, f"untrained model HR@10 {report.hr:.4f} within 0.02 of "
             f"{expected:.4f} over {split.num_users} users")


# ---------------------------------------------------------------------------
# 6. lastfm reproduction (real data required)
# ---------------------------------------------------------------------------

@pytest.mark.requires_dataset
@pytest.mark.slow
def test_criterion_6_lastfm_fused_reproduction():
    split, cases = _load_lastfm()
    assert split.num_users == 1741, "unexpected lastfm user count"
    assert split.total_interactions == 69149, "unexpected lastfm size"
    start = time.perf_counter()
    best, report, (rl_hist, ml_hist, hist) = _fused_pipeline(
        split, cases, factors=64, ratio=4, epochs=16, seed=42)
    elapsed = time.perf_counter() - start
    # loss anchor holds on the real dataset too (criterion 3, "every dataset")
    assert abs(rl_hist.initial_loss - math.log(2)) < 0.05
    assert report.hr >= 0.86, f"HR@10 {report.hr:.4f} < 0.86"
    assert report.ndcg >= 0.58, f"NDCG@10 {report.ndcg:.4f} < 0.58"
    _pass(6, f"lastfm fused HR@10 {report.hr:.4f} (>=0.86), "
             f"NDCG@10 {report.ndcg:.4f} (>=0.58) in {elapsed/60:.1f} min")


# ---------------------------------------------------------------------------
# 7. pre-training effect (real data required)
# ---------------------------------------------------------------------------

@pytest.mark.requires_dataset
@pytest.mark.slow
def test_criterion_7_pretraining_beats_scratch_on_lastfm():
    split, cases = _load_lastfm()
    seeds = (42, 43, 44)
    epochs = 10
    pre_hr, pre_ndcg, scr_hr, scr_ndcg = [], [], [], []
    for seed in seeds:
        _, report, _ = _fused_pipeline(split, cases, factors=64, ratio=4,
                                       epochs=epochs, seed=seed)
        pre_hr.append(report.hr)
        pre_ndcg.append(report.ndcg)
        arch = ArchSpec.default("fused", split.num_users, split.num_items, 64)
        params = init_params(arch, np.random.default_rng([seed, STREAM_INIT]))
        config = TrainConfig(batch_size=256, learning_rate=0.001,
                             optimizer="adam", epochs=epochs, negative_ratio=4,
                             seed=seed, eval_every=2)
        best, _ = train(params, split, cases, config, k=10)
        report = evaluate(model_score_fn(best, split.train), cases, k=10)
        scr_hr.append(report.hr)
        scr_ndcg.append(report.ndcg)
    mean = lambda xs: sum(xs) / len(xs)
    assert mean(pre_hr) > mean(scr_hr), (pre_hr, scr_hr)
    assert mean(pre_ndcg) > mean(scr_ndcg), (pre_ndcg, scr_ndcg)
    _pass(7, f"pretrained HR {mean(pre_hr):.4f} > scratch {mean(scr_hr):.4f}; "
             f"NDCG {mean(pre_ndcg):.4f} > {mean(scr_ndcg):.4f} over "
             f"{len(seeds)} seeds")


# ---------------------------------------------------------------------------
# 8. ItemPop baselines (real data required)
# ---------------------------------------------------------------------------

@pytest.mark.requires_dataset
def test_criterion_8_itempop_baselines():
    split, cases = _load_lastfm()
    report = evaluate(item_pop_score_fn(split.train), cases, k=10)
    assert abs(report.hr - 0.6628) <= 0.03, f"lastfm ItemPop HR {report.hr:.4f}"
    lastfm_hr = report.hr
    split, cases = _load_ml1m()
    assert split.num_users == 6040
    assert split.num_items == 3706
    assert split.total_interactions == 1000209
    assert abs(split.sparsity - 0.9553) < 5e-4
    report = evaluate(item_pop_score_fn(split.train), cases, k=10)
    assert abs(report.hr - 0.4535) <= 0.03, f"ml-1m ItemPop HR {report.hr:.4f}"
    _pass(8, f"ItemPop HR@10 lastfm {lastfm_hr:.4f} (0.6628±0.03), "
             f"ml-1m {report.hr:.4f} (0.4535±0.03)")


# ---------------------------------------------------------------------------
# 9. predictive-factor trend (real data required)
# ---------------------------------------------------------------------------

@pytest.mark.requires_dataset
@pytest.mark.slow
def test_criterion_9_factor_trend_on_ml1m():
    split, cases = _load_ml1m()
    # full ml-1m training exceeds the desk budget; run the sanctioned
    # 20%-user subsample and require the direction only
    sub, sub_cases = _subsample_users(split, cases, 0.2,
                                      np.random.default_rng(99))
    results = {}
    for factors in (8, 64):
        _, report, _ = _fused_pipeline(sub, sub_cases, factors=factors,
                                       ratio=4, epochs=12, seed=42)
        results[factors] = report.hr
    assert results[64] - results[8] >= 0.02, results
    _pass(9, f"ml-1m (20% users) fused HR@10: d=64 {results[64]:.4f} vs "
             f"d=8 {results[8]:.4f} (gap >= 0.02)")


# ---------------------------------------------------------------------------
# 10. determinism
# ---------------------------------------------------------------------------

def test_criterion_10_pipeline_determinism(tmp_path):
    raw = tmp_path / "raw.dat"
    write_ratings(raw, generate_ratings(num_users=140, num_items=140,
                                        min_interactions=6, max_interactions=12,
                                        seed=21))
    outputs = {}
    for tag in ("one", "two"):
        base = tmp_path / tag
        assert main(["prepare", "--raw", str(raw), "--name", "syn",
                     "--out", str(base / "data"), "--no-filter",
                     "--seed", "17"]) == 0
        assert main(["train", "--variant", "rl", "--dataset",
                     str(base / "data" / "syn"), "--factors", "4",
                     "--epochs", "3", "--neg-ratio", "2", "--seed", "17",
                     "--out", str(base / "run")]) == 0
        assert main(["evaluate", "--dataset", str(base / "data" / "syn"),
                     "--checkpoint", str(base / "run" / "rl-d4.ckpt"),
                     "--seed", "17", "--out", str(base / "eval")]) == 0
        outputs[tag] = {
            "stats": (base / "data" / "syn.stats").read_bytes(),
            "train.log": (base / "run" / "rl-d4.train.log").read_bytes(),
            "train-eval": (base / "run" / "rl-d4.eval.txt").read_bytes(),
            "eval": (base / "eval" / "rl-d4.eval.txt").read_bytes(),
            "ckpt": (base / "run" / "rl-d4.ckpt").read_bytes(),
        }
    for kind in outputs["one"]:
        assert outputs["one"][kind] == outputs["two"][kind], kind
    # reloading the checkpoint reproduces the trainer's own report exactly
    assert outputs["one"]["train-eval"] == outputs["one"]["eval"]
    _pass(10, "two full pipeline runs byte-identical "
              "(stats, training log, eval reports, checkpoint)")
