"""Experiment configuration and the mini-batch training loop."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import graph as g
from ..diff import make_differentiator
from ..errors import ConfigurationError, NumericalAbort
from ..optim import Optimizer
from ..qsim import EvalCounter
from .data import Dataset, fixture_paths, gen_random_dataset, load_pooled_images
from .history import RunHistory, StepRecord
from .models import TASKS, HybridModel, build_model
from .streams import DELTA, INIT, SHOTS, SHUFFLE, substream

log = logging.getLogger(__name__)

METHODS = ("spsb", "param-shift", "finite-diff")


@dataclass
class ExperimentConfig:
    task: str = "random-b"
    n_qubits: int = 5
    n_layers: int = 3
    batch_size: int = 25
    learning_rate: float = 0.01
    epochs: int = 10
    max_steps: int | None = None
    seed: int = 0
    differentiator: str = "spsb"
    epsilon: float = 0.01
    spsb_samples: int = 1
    n_runs: int = 1
    optimizer: str = "adam"
    n_points: int = 100
    shots: int | None = None
    deterministic: bool = True
    workers: int = 1
    images: str | None = None
    labels: str | None = None
    n_images: int = 1000

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigurationError(f"task: unknown value {self.task!r} (choose from {', '.join(TASKS)})")
        if self.differentiator not in METHODS:
            raise ConfigurationError(
                f"differentiator: unknown value {self.differentiator!r} (choose from {', '.join(METHODS)})"
            )
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"optimizer: unknown value {self.optimizer!r}")
        for key in ("n_qubits", "n_layers", "batch_size", "epochs", "spsb_samples", "n_runs", "n_points", "workers", "n_images"):
            if int(getattr(self, key)) < 1:
                raise ConfigurationError(f"{key}: must be >= 1, got {getattr(self, key)!r}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigurationError(f"max_steps: must be >= 1, got {self.max_steps}")
        if self.shots is not None and self.shots < 1:
            raise ConfigurationError(f"shots: must be >= 1, got {self.shots}")
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon: must be > 0, got {self.epsilon}")
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ConfigurationError(f"learning_rate: must be finite and >= 0, got {self.learning_rate}")
        if self.task == "quanv" and self.n_qubits != 4:
            raise ConfigurationError(f"n_qubits: quanv needs 4 (one per window pixel), got {self.n_qubits}")

    @classmethod
    def field_types(cls) -> dict[str, type]:
        hints = {"int": int, "float": float, "str": str, "bool": bool}
        out = {}
        for f in dataclasses.fields(cls):
            base = str(f.type).split("|")[0].strip()
            out[f.name] = hints[base]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown configuration key(s): {', '.join(unknown)}")
        types = cls.field_types()
        values = {}
        for k, v in data.items():
            if v is None:
                values[k] = None
                continue
            try:
                values[k] = coerce(v, types[k])
            except (TypeError, ValueError) as exc:
                raise ConfigurationError(f"{k}: cannot interpret {v!r} as {types[k].__name__}") from exc
        return cls(**values)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def coerce(value, kind: type):
    if kind is bool:
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ValueError(value)
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(value)
        return int(value)
    return kind(value)


def load_dataset(config: ExperimentConfig, seed: int) -> Dataset:
    if config.task == "quanv":
        images, labels = config.images, config.labels
        if (images is None) != (labels is None):
            raise ConfigurationError("images and labels must be given together")
        if images is None:
            images, labels = fixture_paths()
        return load_pooled_images(images, labels, count=config.n_images)
    return gen_random_dataset(config.n_points, config.n_qubits, seed)


def make_model(config: ExperimentConfig, seed: int, counter: EvalCounter | None = None) -> HybridModel:
    run_kwargs = {}
    if config.shots is not None:
        run_kwargs.update(shots=config.shots, rng=substream(seed, SHOTS))
    if not config.deterministic and config.workers > 1:
        run_kwargs["workers"] = config.workers
    diff = make_differentiator(config.differentiator, config.epsilon, config.spsb_samples)
    return build_model(
        config.task, config.n_qubits, config.n_layers, diff, substream(seed, INIT), counter, **run_kwargs
    )


def evals_per_step(model: HybridModel, batch_size: int) -> int:
    """Circuit executions per optimisation step: one forward plus the
    differentiator's cost, for every window of every sample."""
    per_app = 1 + model.differentiator.evals_per_jacobian(model.circuit.n_trainable)
    return batch_size * model.windows_per_sample * per_app


def evaluate(model: HybridModel, dataset: Dataset) -> tuple[float, float]:
    """Loss and accuracy over the full dataset. Uses a scratch counter, so
    the model's training count is untouched."""
    saved = model.counter
    model.counter = EvalCounter()
    try:
        out = model.forward(g.Tensor(dataset.features))
        loss = float(model.loss(out, dataset.labels).value)
        acc = float(np.mean(model.predict(out.value) == dataset.labels))
    finally:
        model.counter = saved
    return loss, acc


def train(
    model: HybridModel,
    dataset: Dataset,
    config: ExperimentConfig,
    seed: int | None = None,
    callback: Callable[[StepRecord], None] | None = None,
) -> RunHistory:
    """Mini-batch training. Each epoch shuffles the data and splits it into
    full batches (the remainder is dropped); every batch is one step."""
    seed = config.seed if seed is None else seed
    n = len(dataset)
    b = config.batch_size
    if b > n:
        raise ConfigurationError(f"batch_size: {b} exceeds dataset size {n}")
    if config.task != "quanv" and dataset.n_features != model.circuit.n_inputs:
        raise ConfigurationError(
            f"n_qubits: circuit takes {model.circuit.n_inputs} features, dataset has {dataset.n_features}"
        )
    snapshot = config.to_dict() | {"seed": seed}
    history = RunHistory([], snapshot, seed)
    opt = Optimizer(config.optimizer, config.learning_rate)
    counter = model.counter
    step = 0
    for epoch in range(config.epochs):
        perm = substream(seed, SHUFFLE, epoch).permutation(n)
        for k in range(n // b):
            if config.max_steps is not None and step >= config.max_steps:
                return history
            step += 1
            idx = perm[k * b : (k + 1) * b]
            labels = dataset.labels[idx]

            def rng_factory(row: int, app: int, _step=step) -> np.random.Generator:
                return substream(seed, DELTA, _step, row, app)

            with g.Tape() as tape:
                out = model.forward(g.Tensor(dataset.features[idx]), rng_factory)
                loss = model.loss(out, labels)
            loss_value = float(loss.value)
            acc = float(np.mean(model.predict(out.value) == labels))
            if not math.isfinite(loss_value):
                record = {"step": step, "circuit_evals": counter.total, "loss": loss_value, "accuracy": acc}
                raise NumericalAbort(f"non-finite loss at step {step}", record)
            grads = tape.backward(loss)
            new = opt.step(
                {name: t.value for name, t in model.params.items()},
                {name: grads.get(t, np.zeros_like(t.value)) for name, t in model.params.items()},
            )
            model.set_values(new)
            rec = StepRecord(step, counter.total, loss_value, acc)
            history.records.append(rec)
            if callback is not None:
                callback(rec)
        log.debug("epoch %d done: step %d, evals %d", epoch, step, counter.total)
    return history


def run_experiment(config: ExperimentConfig) -> list[RunHistory]:
    """Train ``n_runs`` independent runs with seeds seed, seed+1, ..."""
    histories = []
    for r in range(config.n_runs):
        seed = config.seed + r
        dataset = load_dataset(config, seed)
        model = make_model(config, seed)
        histories.append(train(model, dataset, config, seed))
        last = histories[-1].records[-1] if histories[-1].records else None
        if last is not None:
            log.info(
                "%s/%s lr=%g seed=%d: %d steps, %d evals, loss %.4f",
                config.task, config.differentiator, config.learning_rate, seed,
                last.step, last.circuit_evals, last.loss,
            )
    return histories
