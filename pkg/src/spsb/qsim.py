"""Exact statevector simulation for circuits over the gate set {H, RX, RZ, RZZ}.

Conventions
-----------
* Qubit 0 is the least-significant bit of the basis index.
* ``RX(t) = exp(-i t X / 2)``, ``RZ(t) = exp(-i t Z / 2)``,
  ``RZZ(t) = exp(-i t Z(x)Z / 2)``.
* Every full execution of a circuit through :func:`run_circuit` or
  :func:`run_circuits` increments an :class:`EvalCounter` by one per circuit.

The batched engine keeps states as a ``(B, 2**n)`` array and fuses runs of
diagonal gates (RZ, RZZ) into a single phase multiplication.
"""
from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, InvariantViolation

MAX_QUBITS = 24
GATE_KINDS = ("H", "RX", "RZ", "RZZ")
PARAMETRIC = frozenset({"RX", "RZ", "RZZ"})
DIAGONAL = frozenset({"RZ", "RZZ"})
IQP_ENTANGLER_ANGLE = math.pi / 4

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
# Amplitudes per batch chunk; keeps working sets cache-sized.
_CHUNK_AMPLITUDES = 1 << 20


class EvalCounter:
    """Thread-safe, monotone count of circuit executions."""

    def __init__(self) -> None:
        self._total = 0
        self._lock = threading.Lock()

    @property
    def total(self) -> int:
        return self._total

    def add(self, n: int = 1) -> None:
        if n < 0:
            raise InvariantViolation("circuit-evaluation counter cannot decrease")
        with self._lock:
            self._total += n

    def __repr__(self) -> str:
        return f"EvalCounter(total={self._total})"


GLOBAL_COUNTER = EvalCounter()


def _check_n_qubits(n_qubits: int) -> None:
    if not isinstance(n_qubits, (int, np.integer)) or not 1 <= n_qubits <= MAX_QUBITS:
        raise ConfigurationError(
            f"n_qubits must be an integer in [1, {MAX_QUBITS}], got {n_qubits!r}"
        )


@dataclass
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        _check_n_qubits(self.n_qubits)
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (1 << self.n_qubits,):
            raise InvariantViolation(
                f"expected {1 << self.n_qubits} amplitudes, got shape {self.amplitudes.shape}"
            )

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True)
class Gate:
    """One gate. Its angle is either fixed (``angle``), bound to a trainable
    parameter (``param``) or bound to an input feature (``feature``)."""

    kind: str
    qubits: tuple[int, ...]
    angle: float | None = None
    param: int | None = None
    feature: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in GATE_KINDS:
            raise InvariantViolation(f"unknown gate kind {self.kind!r}")
        arity = 2 if self.kind == "RZZ" else 1
        if len(self.qubits) != arity:
            raise InvariantViolation(f"{self.kind} acts on {arity} qubit(s), got {self.qubits}")
        if len(set(self.qubits)) != len(self.qubits):
            raise InvariantViolation(f"{self.kind} qubits must be distinct, got {self.qubits}")
        bindings = sum(x is not None for x in (self.angle, self.param, self.feature))
        if self.kind == "H" and bindings:
            raise InvariantViolation("H carries no angle")
        if self.kind in PARAMETRIC and bindings > 1:
            raise InvariantViolation(f"{self.kind} must carry exactly one angle binding")

    @property
    def is_parametric(self) -> bool:
        return self.kind in PARAMETRIC


@dataclass
class Circuit:
    n_qubits: int
    gates: list[Gate] = field(default_factory=list)
    n_trainable: int = 0
    n_inputs: int = 0

    def __post_init__(self) -> None:
        _check_n_qubits(self.n_qubits)
        self.validate()

    def validate(self) -> None:
        param_seen: set[int] = set()
        feature_uses: dict[int, int] = {}
        for g in self.gates:
            if any(q < 0 or q >= self.n_qubits for q in g.qubits):
                raise InvariantViolation(f"gate {g} addresses a qubit outside [0, {self.n_qubits})")
            if g.param is not None:
                if not 0 <= g.param < self.n_trainable:
                    raise InvariantViolation(f"param slot {g.param} outside [0, {self.n_trainable})")
                param_seen.add(g.param)
            if g.feature is not None:
                if not 0 <= g.feature < self.n_inputs:
                    raise InvariantViolation(f"input slot {g.feature} outside [0, {self.n_inputs})")
                feature_uses[g.feature] = feature_uses.get(g.feature, 0) + 1
        if param_seen != set(range(self.n_trainable)):
            missing = sorted(set(range(self.n_trainable)) - param_seen)
            raise InvariantViolation(f"trainable slots never used: {missing}")
        if sorted(feature_uses) != list(range(self.n_inputs)) or any(
            c != 1 for c in feature_uses.values()
        ):
            raise InvariantViolation("every input slot must be used exactly once")

    def bind(self, params: Sequence[float], inputs: Sequence[float]) -> list[tuple[Gate, float | None]]:
        """Resolve every gate's angle for one concrete (params, inputs) pair."""
        params = np.asarray(params, dtype=float)
        inputs = np.asarray(inputs, dtype=float)
        self._check_dims(params, inputs)
        bound = []
        for g in self.gates:
            if g.param is not None:
                bound.append((g, float(params[g.param])))
            elif g.feature is not None:
                bound.append((g, float(inputs[g.feature])))
            else:
                bound.append((g, g.angle))
        return bound

    def _check_dims(self, params: np.ndarray, inputs: np.ndarray) -> None:
        if params.shape[-1:] != (self.n_trainable,) and not (self.n_trainable == 0 and params.size == 0):
            raise InvariantViolation(
                f"expected {self.n_trainable} trainable parameters, got shape {params.shape}"
            )
        if inputs.shape[-1:] != (self.n_inputs,) and not (self.n_inputs == 0 and inputs.size == 0):
            raise InvariantViolation(f"expected {self.n_inputs} inputs, got shape {inputs.shape}")

    def trainable_kinds(self) -> set[str]:
        return {g.kind for g in self.gates if g.param is not None}


def new_state(n_qubits: int) -> StateVector:
    _check_n_qubits(n_qubits)
    amps = np.zeros(1 << n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


# --- batched kernels -------------------------------------------------------
# States are (B, 2**n). Angles are scalars or (B,) arrays.


def _z_signs(n_qubits: int) -> np.ndarray:
    """(2**n, n) matrix of +1/-1: the Z eigenvalue of each qubit per basis index."""
    idx = np.arange(1 << n_qubits)[:, None]
    bits = (idx >> np.arange(n_qubits)[None, :]) & 1
    return 1.0 - 2.0 * bits


def _apply_1q(states: np.ndarray, qubit: int, n: int, u00, u01, u10, u11) -> np.ndarray:
    b = states.shape[0]
    view = states.reshape(b, 1 << (n - qubit - 1), 2, 1 << qubit)
    a0 = view[:, :, 0, :]
    a1 = view[:, :, 1, :]
    out = np.empty_like(view)
    o0 = out[:, :, 0, :]
    o1 = out[:, :, 1, :]
    np.multiply(u00, a0, out=o0)
    o0 += u01 * a1
    np.multiply(u10, a0, out=o1)
    o1 += u11 * a1
    return out.reshape(b, -1)


def _col(angle, b: int) -> np.ndarray:
    """Broadcast an angle (scalar or (B,)) into a (B, 1, 1) column."""
    return np.broadcast_to(np.asarray(angle, dtype=float), (b,)).reshape(b, 1, 1)


def _butterfly(states: np.ndarray, qubit: int, n: int) -> np.ndarray:
    """Hadamard on ``qubit`` without the 1/sqrt(2) factor."""
    b = states.shape[0]
    view = states.reshape(b, 1 << (n - qubit - 1), 2, 1 << qubit)
    out = np.empty_like(view)
    np.add(view[:, :, 0, :], view[:, :, 1, :], out=out[:, :, 0, :])
    np.subtract(view[:, :, 0, :], view[:, :, 1, :], out=out[:, :, 1, :])
    return out.reshape(b, -1)


def _apply_h(states: np.ndarray, qubit: int, n: int) -> np.ndarray:
    return _butterfly(states, qubit, n) * _INV_SQRT2


def _apply_rx(states: np.ndarray, qubit: int, n: int, angle) -> np.ndarray:
    t = _col(angle, states.shape[0])
    c = np.cos(t / 2)
    s = -1j * np.sin(t / 2)
    return _apply_1q(states, qubit, n, c, s, s, c)


def _diag_row(gate: Gate, signs: np.ndarray) -> np.ndarray:
    """Generator eigenvalues z(b) such that the gate is diag(exp(-i t z / 2))."""
    if gate.kind == "RZ":
        return signs[:, gate.qubits[0]]
    return signs[:, gate.qubits[0]] * signs[:, gate.qubits[1]]


def _simulate_chunk(circuit: Circuit, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    n = circuit.n_qubits
    b = params.shape[0]
    signs = _z_signs(n)
    pending_rows: list[np.ndarray] = []
    pending_angles: list[np.ndarray] = []

    def angle_of(g: Gate) -> np.ndarray:
        if g.param is not None:
            return params[:, g.param]
        if g.feature is not None:
            return inputs[:, g.feature]
        if g.angle is None:
            raise InvariantViolation(f"unbound angle on parametric gate {g}")
        return np.full(b, g.angle)

    # Hadamards are applied unnormalised; the accumulated 2**(-k/2) is
    # folded into the next phase multiplication or the final state.
    n_h = 0

    def flush(states: np.ndarray) -> np.ndarray:
        nonlocal n_h
        scale = _INV_SQRT2**n_h
        n_h = 0
        if not pending_rows:
            return states * scale if scale != 1.0 else states
        coeff = np.stack(pending_angles, axis=1)  # (B, K)
        rows = np.stack(pending_rows, axis=0)  # (K, 2**n)
        half_phase = (coeff @ rows) * -0.5
        pending_rows.clear()
        pending_angles.clear()
        factor = np.empty(half_phase.shape, dtype=np.complex128)
        factor.real = np.cos(half_phase)
        factor.imag = np.sin(half_phase)
        if scale != 1.0:
            factor *= scale
        states *= factor
        return states

    # Leading single-qubit gates act on a product state: track one 2-vector
    # per qubit and expand only when the first entangling gate arrives.
    factors = np.zeros((n, b, 2), dtype=np.complex128)
    factors[:, :, 0] = 1.0
    start = 0
    for g in circuit.gates:
        if g.kind == "RZZ":
            break
        q = g.qubits[0]
        a0, a1 = factors[q, :, 0].copy(), factors[q, :, 1]
        if g.kind == "H":
            factors[q, :, 0] = (a0 + a1) * _INV_SQRT2
            factors[q, :, 1] = (a0 - a1) * _INV_SQRT2
        elif g.kind == "RX":
            t = angle_of(g) / 2
            c, s = np.cos(t), -1j * np.sin(t)
            factors[q, :, 0] = c * a0 + s * a1
            factors[q, :, 1] = s * a0 + c * a1
        else:
            t = angle_of(g) / 2
            factors[q, :, 0] = a0 * np.exp(-1j * t)
            factors[q, :, 1] = a1 * np.exp(1j * t)
        start += 1
    states = factors[0]
    for q in range(1, n):
        states = (factors[q][:, :, None] * states[:, None, :]).reshape(b, -1)

    for g in circuit.gates[start:]:
        if g.kind in DIAGONAL:
            pending_rows.append(_diag_row(g, signs))
            pending_angles.append(angle_of(g))
            continue
        if g.kind == "H":
            if pending_rows:
                states = flush(states)
            states = _butterfly(states, g.qubits[0], n)
            n_h += 1
        else:
            states = flush(states)
            states = _apply_rx(states, g.qubits[0], n, angle_of(g))
    return flush(states)


def simulate(
    circuit: Circuit,
    params: np.ndarray,
    inputs: np.ndarray,
    workers: int = 1,
) -> np.ndarray:
    """Final statevectors for a batch: params (B, P), inputs (B, I) -> (B, 2**n).

    Does not touch any evaluation counter.
    """
    params = np.atleast_2d(np.asarray(params, dtype=float))
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if circuit.n_trainable == 0:
        params = params.reshape(max(params.shape[0], inputs.shape[0]), 0)
    if circuit.n_inputs == 0:
        inputs = inputs.reshape(params.shape[0], 0)
    circuit._check_dims(params, inputs)
    if params.shape[0] != inputs.shape[0]:
        raise InvariantViolation(
            f"batch mismatch: {params.shape[0]} parameter rows vs {inputs.shape[0]} input rows"
        )
    b = params.shape[0]
    chunk = max(1, _CHUNK_AMPLITUDES >> circuit.n_qubits)
    bounds = [(i, min(i + chunk, b)) for i in range(0, b, chunk)]
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ij: _simulate_chunk(circuit, params[ij[0]:ij[1]], inputs[ij[0]:ij[1]]), bounds))
    else:
        parts = [_simulate_chunk(circuit, params[i:j], inputs[i:j]) for i, j in bounds]
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, 1 << circuit.n_qubits), complex)


def z_expectations(states: np.ndarray, n_qubits: int) -> np.ndarray:
    """Exact <Z_q> for every qubit of every state: (B, 2**n) -> (B, n)."""
    probs = np.abs(states) ** 2
    return probs @ _z_signs(n_qubits)


def sampled_z_expectations(
    states: np.ndarray, n_qubits: int, shots: int, rng: np.random.Generator
) -> np.ndarray:
    """Shot-noise estimate of <Z_q>: sample bitstrings, average the +1/-1 outcomes."""
    if shots < 1:
        raise ConfigurationError(f"shots must be >= 1, got {shots}")
    probs = np.abs(states) ** 2
    cdf = np.cumsum(probs, axis=1)
    cdf /= cdf[:, -1:]
    signs = _z_signs(n_qubits)
    out = np.empty((states.shape[0], n_qubits))
    for k in range(states.shape[0]):
        idx = np.searchsorted(cdf[k], rng.random(shots), side="right")
        idx = np.minimum(idx, cdf.shape[1] - 1)
        out[k] = signs[idx].mean(axis=0)
    return out


# --- single-state interface -------------------------------------------------


def apply_gate(state: StateVector, gate: Gate, bound_angle: float | None = None) -> StateVector:
    n = state.n_qubits
    if any(q >= n for q in gate.qubits):
        raise InvariantViolation(f"gate {gate} addresses a qubit outside [0, {n})")
    angle = bound_angle if bound_angle is not None else gate.angle
    if gate.is_parametric and angle is None:
        raise InvariantViolation(f"unbound angle on parametric gate {gate.kind}{gate.qubits}")
    amps = state.amplitudes[None, :]
    if gate.kind == "H":
        out = _apply_h(amps, gate.qubits[0], n)
    elif gate.kind == "RX":
        out = _apply_rx(amps, gate.qubits[0], n, angle)
    else:
        z = _diag_row(gate, _z_signs(n))
        out = amps * np.exp(-0.5j * angle * z)[None, :]
    return StateVector(n, out[0])


def expectation_z(state: StateVector, qubit: int) -> float:
    if not 0 <= qubit < state.n_qubits:
        raise InvariantViolation(f"qubit {qubit} out of range for {state.n_qubits} qubits")
    probs = state.probabilities()
    bits = (np.arange(probs.size) >> qubit) & 1
    return float(np.sum(probs * (1.0 - 2.0 * bits)))


def build_iqp_circuit(n_qubits: int, n_layers: int) -> Circuit:
    """RX angle-encoding layer followed by ``n_layers`` IQP layers.

    Each IQP layer is an H wall, a trainable RZ per qubit and a fixed RZZ(pi/4)
    on every neighbouring pair. Parameter ``layer * n_qubits + q`` drives the
    RZ on qubit ``q``.
    """
    _check_n_qubits(n_qubits)
    if n_layers < 1:
        raise ConfigurationError(f"n_layers must be >= 1, got {n_layers}")
    gates = [Gate("RX", (q,), feature=q) for q in range(n_qubits)]
    for layer in range(n_layers):
        gates += [Gate("H", (q,)) for q in range(n_qubits)]
        gates += [Gate("RZ", (q,), param=layer * n_qubits + q) for q in range(n_qubits)]
        gates += [
            Gate("RZZ", (q, q + 1), angle=IQP_ENTANGLER_ANGLE) for q in range(n_qubits - 1)
        ]
    return Circuit(n_qubits, gates, n_trainable=n_qubits * n_layers, n_inputs=n_qubits)


def run_circuits(
    circuit: Circuit,
    params: np.ndarray,
    inputs: np.ndarray,
    counter: EvalCounter | None = None,
    shots: int | None = None,
    rng: np.random.Generator | None = None,
    workers: int = 1,
) -> np.ndarray:
    """Evaluate B circuits at once; returns (B, n_qubits) Z expectations.

    Counts B circuit evaluations.
    """
    states = simulate(circuit, params, inputs, workers=workers)
    (counter or GLOBAL_COUNTER).add(states.shape[0])
    if shots is None:
        return z_expectations(states, circuit.n_qubits)
    if rng is None:
        raise ConfigurationError("shot mode needs an explicit random generator")
    return sampled_z_expectations(states, circuit.n_qubits, shots, rng)


def run_circuit(
    circuit: Circuit,
    params: Sequence[float],
    inputs: Sequence[float],
    counter: EvalCounter | None = None,
    shots: int | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    if params.ndim != 1 or inputs.ndim != 1:
        raise InvariantViolation("run_circuit takes one parameter vector and one input vector")
    return run_circuits(circuit, params[None, :], inputs[None, :], counter, shots, rng)[0]
