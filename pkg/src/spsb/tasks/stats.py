"""Run aggregation: medians across seeds on the circuit-evaluation axis and
trailing rolling means."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import UsageError
from .history import RunHistory

DEFAULT_WINDOWS = {"spsb": 10, "param-shift": 3, "finite-diff": 3}


def rolling_mean(values, window: int) -> np.ndarray:
    """Trailing mean; the first ``window - 1`` points average what is available."""
    values = np.asarray(values, dtype=float)
    if window < 1:
        raise UsageError(f"window must be >= 1, got {window}")
    if window == 1 or values.size == 0:
        return values.copy()
    csum = np.cumsum(np.insert(values, 0, 0.0))
    idx = np.arange(1, values.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def step_interpolate(x_known: np.ndarray, y_known: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Last-value interpolation; grid points before the first record are NaN."""
    pos = np.searchsorted(x_known, grid, side="right") - 1
    out = np.where(pos >= 0, y_known[np.clip(pos, 0, None)], np.nan)
    return out.astype(float)


@dataclass
class RunSummary:
    method: str
    task: str
    lr: float
    window: int
    circuit_evals: np.ndarray
    median_loss: np.ndarray
    median_accuracy: np.ndarray
    smoothed_loss: np.ndarray
    smoothed_accuracy: np.ndarray
    raw_loss: np.ndarray  # (runs, grid)
    raw_accuracy: np.ndarray
    seeds: list[int]

    def first_evals_reaching(self, level: float, smoothed: bool = True) -> float:
        """Fewest circuit evaluations at which the median loss is <= ``level``."""
        series = self.smoothed_loss if smoothed else self.median_loss
        hits = np.flatnonzero(series <= level)
        return float(self.circuit_evals[hits[0]]) if hits.size else float("inf")


def _comparable(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in ("seed", "n_runs")}


def aggregate_runs(histories: list[RunHistory], window: int | None = None) -> RunSummary:
    """Median loss and accuracy across runs, aligned on cumulative circuit
    evaluations, plus a rolling mean of the medians (method default window)."""
    if not histories:
        raise UsageError("aggregate_runs needs at least one history")
    ref = _comparable(histories[0].config)
    for h in histories[1:]:
        if _comparable(h.config) != ref:
            raise UsageError("histories differ in more than their seed; refusing to aggregate")
    if any(len(h) == 0 for h in histories):
        raise UsageError("cannot aggregate an empty history")
    method = histories[0].method
    if window is None:
        window = DEFAULT_WINDOWS.get(method, 1)
    grid = np.unique(np.concatenate([h.column("circuit_evals") for h in histories]))
    loss = np.stack([step_interpolate(h.column("circuit_evals"), h.column("loss"), grid) for h in histories])
    acc = np.stack([step_interpolate(h.column("circuit_evals"), h.column("accuracy"), grid) for h in histories])
    # a grid point counts once every run has a value there
    ok = ~np.isnan(loss).any(axis=0)
    grid, loss, acc = grid[ok], loss[:, ok], acc[:, ok]
    med_loss = np.median(loss, axis=0)
    med_acc = np.median(acc, axis=0)
    return RunSummary(
        method=method,
        task=histories[0].task,
        lr=histories[0].lr,
        window=window,
        circuit_evals=grid,
        median_loss=med_loss,
        median_accuracy=med_acc,
        smoothed_loss=rolling_mean(med_loss, window),
        smoothed_accuracy=rolling_mean(med_acc, window),
        raw_loss=loss,
        raw_accuracy=acc,
        seeds=[h.seed for h in histories],
    )
