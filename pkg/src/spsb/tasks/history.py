"""Per-step training records and their CSV form."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError

CSV_FIELDS = ("step", "circuit_evals", "loss", "accuracy", "method", "task", "lr", "seed")


def fmt(x: float) -> str:
    """17 significant digits: enough for an exact float64 round trip."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class StepRecord:
    step: int
    circuit_evals: int
    loss: float
    accuracy: float


@dataclass
class RunHistory:
    records: list[StepRecord] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def method(self) -> str:
        return self.config.get("differentiator", "")

    @property
    def task(self) -> str:
        return self.config.get("task", "")

    @property
    def lr(self) -> float:
        return float(self.config.get("learning_rate", float("nan")))

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def __len__(self) -> int:
        return len(self.records)


def histories_to_csv(histories: list[RunHistory]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for h in histories:
        for r in h.records:
            w.writerow(
                [r.step, r.circuit_evals, fmt(r.loss), fmt(r.accuracy), h.method, h.task, fmt(h.lr), h.seed]
            )
    return buf.getvalue()


def write_csv(path, histories: list[RunHistory] | RunHistory) -> Path:
    if isinstance(histories, RunHistory):
        histories = [histories]
    path = Path(path)
    path.write_text(histories_to_csv(histories))
    return path


def read_csv(path) -> list[RunHistory]:
    """Read a history CSV; one :class:`RunHistory` per (method, task, lr, seed)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from exc
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise DataError(f"{path}: no records")
    missing = set(CSV_FIELDS) - set(rows[0])
    if missing:
        raise DataError(f"{path}: missing columns {sorted(missing)}")
    runs: dict[tuple, RunHistory] = {}
    for line, row in enumerate(rows, start=2):
        try:
            key = (row["method"], row["task"], row["lr"], int(row["seed"]))
            rec = StepRecord(int(row["step"]), int(row["circuit_evals"]), float(row["loss"]), float(row["accuracy"]))
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}: bad value on line {line}: {exc}") from exc
        if key not in runs:
            cfg = {"differentiator": key[0], "task": key[1], "learning_rate": float(key[2]), "seed": key[3]}
            runs[key] = RunHistory([], cfg, key[3])
        runs[key].records.append(rec)
    return list(runs.values())
