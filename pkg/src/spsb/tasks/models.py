"""The three hybrid models.

random-a
    IQP circuit -> <Z_0> -> p = (1 - <Z_0>) / 2 -> BCE
random-b
    IQP circuit -> all <Z_q> -> dense(N_q -> 1) -> sigmoid -> BCE
quanv
    4x4 image -> four 2x2 windows (stride 2) -> shared 4-qubit IQP kernel per
    window -> 16 concatenated expectations -> dense(16 -> 2) -> softmax -> CE
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .. import graph as g
from ..diff import Differentiator
from ..errors import ConfigurationError
from ..qsim import Circuit, EvalCounter, build_iqp_circuit

TASKS = ("random-a", "random-b", "quanv")
IMAGE_SIDE = 4
WINDOW = 2

RngFactory = Callable[[int, int], np.random.Generator]


def image_windows(features: np.ndarray, side: int = IMAGE_SIDE, window: int = WINDOW) -> list[np.ndarray]:
    """Split flattened (B, side*side) images into non-overlapping windows.

    Returns one (B, window*window) array per window, row-major window order,
    pixels row-major inside each window.
    """
    imgs = np.asarray(features).reshape(-1, side, side)
    out = []
    for r in range(0, side, window):
        for c in range(0, side, window):
            out.append(imgs[:, r : r + window, c : c + window].reshape(imgs.shape[0], -1))
    return out


class HybridModel:
    task = ""
    windows_per_sample = 1

    def __init__(
        self,
        circuit: Circuit,
        differentiator: Differentiator,
        rng: np.random.Generator,
        counter: EvalCounter | None = None,
        **run_kwargs,
    ):
        self.circuit = circuit
        self.differentiator = differentiator
        self.counter = counter if counter is not None else EvalCounter()
        self.run_kwargs = run_kwargs
        theta = rng.uniform(-0.1, 0.1, size=circuit.n_trainable)
        self.params: dict[str, g.Tensor] = {"theta": g.Tensor(theta, requires_grad=True, name="theta")}

    def _dense_params(self, fan_in: int, fan_out: int, rng: np.random.Generator) -> None:
        bound = 1.0 / math.sqrt(fan_in)
        self.params["W"] = g.Tensor(rng.uniform(-bound, bound, size=(fan_out, fan_in)), True, "W")
        self.params["b"] = g.Tensor(np.zeros(fan_out), True, "b")

    def quantum(self) -> g.QuantumNode:
        return g.QuantumNode(
            self.circuit, self.params["theta"], self.differentiator, self.counter, **self.run_kwargs
        )

    @property
    def n_circuit_params(self) -> int:
        return self.params["theta"].value.size

    @property
    def n_classical_params(self) -> int:
        return sum(t.value.size for k, t in self.params.items() if k != "theta")

    def get_values(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self.params.items()}

    def set_values(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            self.params[k].value = np.asarray(v, dtype=float)

    def forward(self, x: g.Tensor, rng_factory: RngFactory | None = None) -> g.Tensor:
        raise NotImplementedError

    def loss(self, out: g.Tensor, labels: np.ndarray) -> g.Tensor:
        return g.bce_loss(out, labels)

    def predict(self, out: np.ndarray) -> np.ndarray:
        # p == 0.5 goes to class 0
        return (out > 0.5).astype(int)


def _row_factory(rng_factory: RngFactory | None, application: int):
    if rng_factory is None:
        return None
    return lambda row: rng_factory(row, application)


class RandomModelA(HybridModel):
    task = "random-a"

    def forward(self, x, rng_factory=None):
        z = self.quantum()(x, _row_factory(rng_factory, 0))
        return g.affine(g.take(z, 0, axis=-1), -0.5, 0.5)


class RandomModelB(HybridModel):
    task = "random-b"

    def __init__(self, circuit, differentiator, rng, counter=None, **run_kwargs):
        super().__init__(circuit, differentiator, rng, counter, **run_kwargs)
        self._dense_params(circuit.n_qubits, 1, rng)

    def forward(self, x, rng_factory=None):
        z = self.quantum()(x, _row_factory(rng_factory, 0))
        logits = g.dense(z, self.params["W"], self.params["b"])
        return g.take(g.sigmoid(logits), 0, axis=-1)


class QuanvModel(HybridModel):
    task = "quanv"
    windows_per_sample = (IMAGE_SIDE // WINDOW) ** 2

    def __init__(self, circuit, differentiator, rng, counter=None, **run_kwargs):
        super().__init__(circuit, differentiator, rng, counter, **run_kwargs)
        self._dense_params(self.windows_per_sample * circuit.n_qubits, 2, rng)

    def forward(self, x, rng_factory=None):
        node = self.quantum()
        outs = [
            node(g.Tensor(w), _row_factory(rng_factory, k))
            for k, w in enumerate(image_windows(x.value))
        ]
        logits = g.dense(g.concat(outs, axis=-1), self.params["W"], self.params["b"])
        return g.softmax(logits)

    def loss(self, out, labels):
        return g.cross_entropy(out, np.eye(2)[np.asarray(labels, dtype=int)])

    def predict(self, out):
        return np.argmax(out, axis=-1)


def build_model(
    task: str,
    n_qubits: int,
    n_layers: int,
    differentiator: Differentiator,
    rng: np.random.Generator,
    counter: EvalCounter | None = None,
    **run_kwargs,
) -> HybridModel:
    if task == "quanv":
        if n_qubits != WINDOW * WINDOW:
            raise ConfigurationError(
                f"quanv uses a {WINDOW}x{WINDOW} window, so n_qubits must be {WINDOW * WINDOW}, got {n_qubits}"
            )
        cls = QuanvModel
    elif task == "random-a":
        cls = RandomModelA
    elif task == "random-b":
        cls = RandomModelB
    else:
        raise ConfigurationError(f"unknown task {task!r} (choose from {', '.join(TASKS)})")
    circuit = build_iqp_circuit(n_qubits, n_layers)
    return cls(circuit, differentiator, rng, counter, **run_kwargs)
