"""Define-by-run reverse-mode autodiff over numpy arrays.

Operations executed inside ``with Tape() as tape:`` are recorded in order.
:meth:`Tape.backward` then walks the nodes in reverse, turning the upstream
vector of each node's output into upstream vectors for its inputs
(``upstream . J``). Quantum nodes obtain their local Jacobian from a
:class:`~spsb.diff.Differentiator` instead of an analytic formula.

>>> W = Tensor([[1.0, 2.0]], requires_grad=True)
>>> with Tape() as tape:
...     y = dense(Tensor([3.0, 4.0]), W, Tensor([0.0]))
>>> y.value
array([11.])
>>> tape.backward()[W]
array([[3., 4.]])
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .diff import Differentiator
from .errors import DataError, InvariantViolation, UsageError
from .qsim import Circuit, EvalCounter, run_circuits

PROB_CLIP = 1e-7

_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("value", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.array(value, dtype=float)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    nodes: list[Node] = field(default_factory=list)
    parameters: list[Tensor] = field(default_factory=list)
    _done: bool = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: Node) -> None:
        for t in node.inputs:
            if t.requires_grad and not any(t is p for p in self.parameters) and self._is_leaf(t):
                self.parameters.append(t)
        self.nodes.append(node)

    def _is_leaf(self, t: Tensor) -> bool:
        return not any(n.output is t for n in self.nodes)

    def backward(self, output: Tensor | None = None, seed=None) -> dict[Tensor, np.ndarray]:
        """Propagate ``seed`` (default: ones) from ``output`` back to the parameters.

        Returns gradients keyed by parameter tensor and also stores them in
        ``tensor.grad``. A tape can be differentiated only once.
        """
        if self._done:
            raise UsageError("backward already ran on this tape; run a new forward pass")
        if not self.nodes:
            raise UsageError("empty tape")
        self._done = True
        output = output if output is not None else self.nodes[-1].output
        seed = np.ones_like(output.value) if seed is None else np.asarray(seed, dtype=float)
        if seed.shape != output.shape:
            raise InvariantViolation(f"seed shape {seed.shape} != output shape {output.shape}")

        upstream: dict[int, np.ndarray] = {id(output): seed}
        for node in reversed(self.nodes):
            up = upstream.pop(id(node.output), None)
            if up is None or not node.output.requires_grad:
                continue
            grads = node.vjp(up)
            for t, g in zip(node.inputs, grads):
                if g is None or not t.requires_grad:
                    continue
                if g.shape != t.shape:
                    raise InvariantViolation(
                        f"{node.op}: gradient shape {g.shape} does not match input shape {t.shape}"
                    )
                key = id(t)
                upstream[key] = upstream[key] + g if key in upstream else g

        result = {}
        for p in self.parameters:
            g = upstream.get(id(p), np.zeros_like(p.value))
            p.grad = g
            result[p] = g
        return result


def _record(op: str, inputs: Sequence[Tensor], value: np.ndarray, vjp) -> Tensor:
    out = Tensor(value, requires_grad=any(t.requires_grad for t in inputs))
    if _ACTIVE:
        _ACTIVE[-1].record(Node(op, tuple(inputs), out, vjp))
    return out


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def forward(model: Callable[[Tensor], Tensor], inputs) -> tuple[Tensor, Tape]:
    """Run ``model`` on ``inputs`` under a fresh tape."""
    with Tape() as tape:
        out = model(_tensor(inputs))
    return out, tape


def backward(tape: Tape, seed=None) -> dict[Tensor, np.ndarray]:
    return tape.backward(seed=seed)


# --- classical operations --------------------------------------------------


def identity(x: Tensor) -> Tensor:
    return _record("identity", (x,), x.value.copy(), lambda up: (up,))


def dense(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``x @ W.T + b`` for x of shape (..., in), W (out, in), b (out,)."""
    x, W, b = _tensor(x), _tensor(W), _tensor(b)
    if W.value.ndim != 2 or x.shape[-1:] != W.shape[1:] or b.shape != W.shape[:1]:
        raise InvariantViolation(
            f"dense: incompatible shapes x{x.shape}, W{W.shape}, b{b.shape}"
        )
    xv = x.value

    def vjp(up):
        gx = up @ W.value
        x2 = xv.reshape(-1, xv.shape[-1])
        u2 = up.reshape(-1, up.shape[-1])
        return gx, u2.T @ x2, u2.sum(axis=0)

    return _record("dense", (x, W, b), xv @ W.value.T + b.value, vjp)


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.value))
    return _record("sigmoid", (x,), s, lambda up: (up * s * (1.0 - s),))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(up):
        return (s * (up - np.sum(up * s, axis=-1, keepdims=True)),)

    return _record("softmax", (x,), s, vjp)


def affine(x: Tensor, scale: float, shift: float) -> Tensor:
    return _record("affine", (x,), scale * x.value + shift, lambda up: (scale * up,))


def take(x: Tensor, index: int, axis: int = -1) -> Tensor:
    """Select one slice along ``axis`` (dimension removed)."""
    axis = axis % x.value.ndim
    if not -x.shape[axis] <= index < x.shape[axis]:
        raise InvariantViolation(f"take: index {index} out of range for axis of size {x.shape[axis]}")

    def vjp(up):
        g = np.zeros_like(x.value)
        sl = [slice(None)] * x.value.ndim
        sl[axis] = index
        g[tuple(sl)] = up
        return (g,)

    return _record("take", (x,), np.take(x.value, index, axis=axis), vjp)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        value = x.value.reshape(shape)
    except ValueError as exc:
        raise InvariantViolation(f"reshape: cannot view {x.shape} as {tuple(shape)}") from exc
    return _record("reshape", (x,), value, lambda up: (up.reshape(x.shape),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise InvariantViolation("concat: nothing to concatenate")
    try:
        value = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError as exc:
        raise InvariantViolation(f"concat: {exc}") from exc
    splits = np.cumsum([t.value.shape[axis] for t in tensors])[:-1]

    def vjp(up):
        return tuple(np.split(up, splits, axis=axis))

    return _record("concat", tuple(tensors), value, vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise InvariantViolation(f"add: shapes {a.shape} and {b.shape} differ")
    return _record("add", (a, b), a.value + b.value, lambda up: (up, up))


def total(x: Tensor) -> Tensor:
    return _record("sum", (x,), np.sum(x.value), lambda up: (np.full(x.shape, up),))


def bce_loss(p: Tensor, y) -> Tensor:
    """Mean binary cross-entropy; probabilities are clipped to [1e-7, 1 - 1e-7]."""
    y = np.asarray(y, dtype=float)
    if y.shape != p.shape:
        raise InvariantViolation(f"bce_loss: labels {y.shape} vs probabilities {p.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("bce_loss: labels must be 0 or 1")
    pc = np.clip(p.value, PROB_CLIP, 1 - PROB_CLIP)
    inside = (p.value >= PROB_CLIP) & (p.value <= 1 - PROB_CLIP)
    n = max(y.size, 1)
    loss = -np.sum(y * np.log(pc) + (1 - y) * np.log(1 - pc)) / n

    def vjp(up):
        return (up * inside * (pc - y) / (pc * (1 - pc)) / n,)

    return _record("bce", (p,), loss, vjp)


def cross_entropy(q: Tensor, y) -> Tensor:
    """Mean categorical cross-entropy against one-hot targets (rows of ``y``)."""
    y = np.asarray(y, dtype=float)
    if y.shape != q.shape:
        raise InvariantViolation(f"cross_entropy: targets {y.shape} vs probabilities {q.shape}")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=-1) == 1)):
        raise DataError("cross_entropy: targets must be one-hot")
    qc = np.clip(q.value, PROB_CLIP, 1 - PROB_CLIP)
    inside = (q.value >= PROB_CLIP) & (q.value <= 1 - PROB_CLIP)
    n = max(int(np.prod(y.shape[:-1])), 1)
    loss = -np.sum(y * np.log(qc)) / n
    return _record("cross_entropy", (q,), loss, lambda up: (-up * inside * y / qc / n,))


# --- quantum node ----------------------------------------------------------


class QuantumNode:
    """A circuit used as a layer: features (B, n_inputs) -> <Z> (B, n_qubits).

    Gradients flow to the trainable parameters only; features are data.
    ``rng_factory(row)`` supplies the generator for each row's perturbation.
    """

    def __init__(
        self,
        circuit: Circuit,
        params: Tensor,
        differentiator: Differentiator,
        counter: EvalCounter | None = None,
        **run_kwargs,
    ):
        if params.shape != (circuit.n_trainable,):
            raise InvariantViolation(
                f"QuantumNode: {circuit.n_trainable} trainable slots but params shape {params.shape}"
            )
        differentiator.check_circuit(circuit)
        self.circuit = circuit
        self.params = params
        self.differentiator = differentiator
        self.counter = counter
        self.run_kwargs = run_kwargs

    def __call__(self, features: Tensor, rng_factory: Callable[[int], np.random.Generator] | None = None) -> Tensor:
        features = _tensor(features)
        x = np.atleast_2d(features.value)
        if x.shape[-1] != self.circuit.n_inputs:
            raise InvariantViolation(
                f"quantum: expected {self.circuit.n_inputs} features per row, got shape {features.shape}"
            )
        theta = self.params.value.copy()
        out = run_circuits(self.circuit, np.broadcast_to(theta, (x.shape[0], theta.size)), x, self.counter, **self.run_kwargs)
        diff = self.differentiator

        def vjp(up):
            rngs = None
            if diff.stochastic:
                if rng_factory is None:
                    raise UsageError("stochastic differentiator needs an rng_factory")
                rngs = [rng_factory(i) for i in range(x.shape[0])]
            jac = diff.jacobians(self.circuit, theta, x, self.counter, rngs, **self.run_kwargs)
            g = np.einsum("bm,bmn->n", up.reshape(x.shape[0], -1), jac)
            return g, None

        value = out if features.value.ndim == 2 else out[0]
        return _record("quantum", (self.params, features), value, vjp)
