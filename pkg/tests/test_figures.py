import numpy as np

from implicitcf.evaluation import EvalReport, UserResult
from implicitcf.figures import plot_rank_histogram, plot_sweep, plot_training_history
from implicitcf.training import HistoryEntry, TrainHistory

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _history(with_metrics):
    history = TrainHistory(initial_loss=0.693,
                           initial_hr=0.1 if with_metrics else None,
                           initial_ndcg=0.05 if with_metrics else None)
    for e in range(1, 6):
        entry = HistoryEntry(epoch=e, loss=0.7 / e, seconds=0.1)
        if with_metrics:
            entry.hr = 0.1 + 0.1 * e
            entry.ndcg = 0.05 + 0.05 * e
        history.entries.append(entry)
    return history


def test_plot_training_history_with_metrics(tmp_path):
    path = tmp_path / "hist.png"
    plot_training_history(_history(True), path, title="demo")
    assert path.read_bytes().startswith(PNG_MAGIC)


def test_plot_training_history_loss_only(tmp_path):
    path = tmp_path / "hist.png"
    plot_training_history(_history(False), path)
    assert path.read_bytes().startswith(PNG_MAGIC)


def test_plot_sweep(tmp_path):
    path = tmp_path / "sweep.png"
    plot_sweep([8, 16, 32], [0.3, 0.4, 0.5], [0.2, 0.25, 0.3], "factors", path)
    assert path.read_bytes().startswith(PNG_MAGIC)


def test_plot_rank_histogram(tmp_path):
    rng = np.random.default_rng(0)
    per_user = [UserResult(user=u, rank=int(rng.integers(1, 102)), hr=0.0, ndcg=0.0)
                for u in range(50)]
    report = EvalReport(k=10, hr=0.1, ndcg=0.05, per_user=per_user)
    path = tmp_path / "ranks.png"
    plot_rank_histogram(report, path, title="demo")
    assert path.read_bytes().startswith(PNG_MAGIC)
