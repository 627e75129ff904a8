"""Leave-one-out ranking evaluation: HR@K and NDCG@K over fixed candidate
lists, plus the popularity baseline."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import models
from .data import InteractionMatrix, TestCase


@dataclass
class RankedList:
    """Full candidate ordering for one user, best score first.

    Ties are broken by ascending item index, so rankings are reproducible.
    """

    user: int
    ordered_items: np.ndarray
    rank_of_positive: int          # 1-based


@dataclass
class UserResult:
    user: int
    rank: int
    hr: float
    ndcg: float


@dataclass
class EvalReport:
    k: int
    hr: float
    ndcg: float
    per_user: list[UserResult]
    model_id: str = ""
    seed: int = 0


def candidate_items(case: TestCase) -> np.ndarray:
    """Candidates in scoring order: held-out positive first, then negatives."""
    return np.concatenate(([case.positive_item], case.negatives)).astype(np.int64)


def model_score_fn(params: models.ModelParams, train: InteractionMatrix):
    """Scorer closure: probabilities for a test case's candidates, computed
    from the user's train row and each candidate's train column."""
    def score(case: TestCase) -> np.ndarray:
        cands = candidate_items(case)
        cols = [train.item_users[i] for i in cands]
        return models.scores_for_user(params, train.user_items[case.user], cols)
    return score


def item_pop_scores(train: InteractionMatrix) -> np.ndarray:
    """Per-item popularity: the train interaction count, same for every user."""
    return np.asarray([col.size for col in train.item_users], dtype=np.float64)


def item_pop_score_fn(train: InteractionMatrix):
    pop = item_pop_scores(train)

    def score(case: TestCase) -> np.ndarray:
        return pop[candidate_items(case)]
    return score


def rank_and_truncate(scores: np.ndarray, case: TestCase) -> RankedList:
    """Sort candidates by descending score (ties: ascending item index)."""
    cands = candidate_items(case)
    if scores.shape != cands.shape:
        raise ValueError(f"expected {cands.size} scores, got {scores.shape}")
    order = np.lexsort((cands, -np.asarray(scores, dtype=np.float64)))
    ordered = cands[order]
    rank = int(np.flatnonzero(ordered == case.positive_item)[0]) + 1
    return RankedList(user=case.user, ordered_items=ordered, rank_of_positive=rank)


def hit_ratio_at_k(rank: int, k: int) -> float:
    return 1.0 if rank <= k else 0.0


def ndcg_at_k(rank: int, k: int) -> float:
    """Position-discounted credit for the single relevant item (ideal DCG = 1)."""
    if rank > k:
        return 0.0
    return math.log(2.0) / math.log(rank + 1.0)


def evaluate(score_fn, test_cases: list[TestCase], k: int = 10,
             model_id: str = "", seed: int = 0) -> EvalReport:
    """Score, rank and average HR@k / NDCG@k over all test cases, in fixed
    user order so the report is bit-reproducible."""
    if not test_cases:
        raise ValueError("no test cases to evaluate")
    per_user = []
    hr_sum = 0.0
    ndcg_sum = 0.0
    for case in test_cases:
        ranked = rank_and_truncate(np.asarray(score_fn(case)), case)
        hr = hit_ratio_at_k(ranked.rank_of_positive, k)
        ndcg = ndcg_at_k(ranked.rank_of_positive, k)
        hr_sum += hr
        ndcg_sum += ndcg
        per_user.append(UserResult(user=case.user, rank=ranked.rank_of_positive,
                                   hr=hr, ndcg=ndcg))
    n = len(test_cases)
    return EvalReport(k=k, hr=hr_sum / n, ndcg=ndcg_sum / n, per_user=per_user,
                      model_id=model_id, seed=seed)


def write_report(report: EvalReport, path: str | os.PathLike,
                 dataset: str = "") -> None:
    """Persist a report: header, per-user lines, then the means."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# model\t{report.model_id}\n")
        fh.write(f"# dataset\t{dataset}\n")
        fh.write(f"# seed\t{report.seed}\n")
        fh.write(f"# k\t{report.k}\n")
        fh.write("user\trank\thr\tndcg\n")
        for r in report.per_user:
            fh.write(f"{r.user}\t{r.rank}\t{int(r.hr)}\t{r.ndcg:.6f}\n")
        fh.write(f"# mean_hr\t{report.hr:.6f}\n")
        fh.write(f"# mean_ndcg\t{report.ndcg:.6f}\n")
