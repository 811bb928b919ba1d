"""Jacobian estimators for quantum-circuit nodes.

Three strategies share one batched interface (:meth:`Differentiator.jacobians`):

``SPSB``
    Rank-one simultaneous-perturbation estimate, two circuit evaluations per
    Jacobian whatever the number of parameters.
``ParameterShift``
    Exact gradients for Pauli-rotation parameters, ``2 * n_trainable``
    evaluations per Jacobian.
``FiniteDifference``
    Central differences, used as a test oracle.

Jacobians have shape ``(m, n)``: circuit outputs by trainable parameters.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, InvariantViolation
from .qsim import Circuit, EvalCounter, run_circuits

__all__ = [
    "EvalCounter",
    "Differentiator",
    "SPSB",
    "ParameterShift",
    "FiniteDifference",
    "make_differentiator",
    "sample_delta",
    "spsb_estimate",
    "spsb_jacobian",
    "param_shift_jacobian",
    "finite_diff_jacobian",
    "central_difference",
]

SHIFT = math.pi / 2
SHIFT_COEFF = 0.5
# Pauli rotations exp(-i t P / 2): generator eigenvalues +-1/2.
PAULI_ROTATIONS = frozenset({"RX", "RZ", "RZZ"})


def sample_delta(n: int, rng: np.random.Generator) -> np.ndarray:
    """Rademacher vector of length n (entries -1 or +1 with probability 1/2)."""
    if n < 1:
        raise ConfigurationError(f"perturbation length must be >= 1, got {n}")
    return 2.0 * rng.integers(0, 2, size=n) - 1.0


def spsb_estimate(f_plus, f_minus, delta, epsilon: float) -> np.ndarray:
    """(f+ - f-) / (2 eps) outer Delta^-1. Delta entries are +-1, so Delta^-1 = Delta."""
    f_plus = np.atleast_1d(np.asarray(f_plus, dtype=float))
    f_minus = np.atleast_1d(np.asarray(f_minus, dtype=float))
    delta = np.asarray(delta, dtype=float)
    return np.outer((f_plus - f_minus) / (2.0 * epsilon), 1.0 / delta)


def central_difference(f: Callable[[np.ndarray], np.ndarray], x, h: float = 1e-5) -> np.ndarray:
    """Jacobian of an arbitrary vector function by central differences."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e.flat[j] = h
        cols.append((np.atleast_1d(f(x + e)) - np.atleast_1d(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def _as_rows(params: np.ndarray, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    params = np.asarray(params, dtype=float)
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if params.ndim == 1:
        params = np.broadcast_to(params, (inputs.shape[0], params.size))
    if params.shape[0] != inputs.shape[0]:
        raise InvariantViolation(
            f"{params.shape[0]} parameter rows for {inputs.shape[0]} input rows"
        )
    return params, inputs


class Differentiator:
    """Base class. Subclasses produce a stack of Jacobians, one per input row."""

    name = "base"
    stochastic = False

    def evals_per_jacobian(self, n_trainable: int) -> int:
        raise NotImplementedError

    def check_circuit(self, circuit: Circuit) -> None:
        pass

    def jacobians(
        self,
        circuit: Circuit,
        params,
        inputs,
        counter: EvalCounter | None = None,
        rngs: Sequence[np.random.Generator] | None = None,
        **run_kwargs,
    ) -> np.ndarray:
        """Return (B, n_qubits, n_trainable) for B input rows."""
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class SPSB(Differentiator):
    """Simultaneous-perturbation Jacobian estimator.

    Each input row draws its own Delta from its own generator, so results
    do not depend on how rows are grouped into batches.
    """

    name = "spsb"
    stochastic = True

    def __init__(self, epsilon: float = 0.01, samples: int = 1):
        if not epsilon > 0:
            raise ConfigurationError(f"epsilon must be > 0, got {epsilon}")
        if samples < 1:
            raise ConfigurationError(f"spsb_samples must be >= 1, got {samples}")
        self.epsilon = float(epsilon)
        self.samples = int(samples)

    def evals_per_jacobian(self, n_trainable: int) -> int:
        return 2 * self.samples

    def jacobians(self, circuit, params, inputs, counter=None, rngs=None, **run_kwargs):
        params, inputs = _as_rows(params, inputs)
        b, n = params.shape
        k = self.samples
        if rngs is None:
            raise ConfigurationError("SPSB needs one random generator per input row")
        if len(rngs) != b:
            raise InvariantViolation(f"{len(rngs)} generators for {b} input rows")
        deltas = np.stack([[sample_delta(n, rng) for _ in range(k)] for rng in rngs])  # (B, k, n)
        shifted = self.epsilon * deltas
        plus = params[:, None, :] + shifted
        minus = params[:, None, :] - shifted
        rows = np.concatenate([plus.reshape(b * k, n), minus.reshape(b * k, n)])
        x = np.repeat(inputs, k, axis=0)
        out = run_circuits(circuit, rows, np.concatenate([x, x]), counter, **run_kwargs)
        f_plus = out[: b * k].reshape(b, k, -1)
        f_minus = out[b * k:].reshape(b, k, -1)
        diff = (f_plus - f_minus) / (2.0 * self.epsilon)  # (B, k, m)
        jac = np.einsum("bkm,bkn->bmn", diff, 1.0 / deltas)
        return jac / k

    def __repr__(self) -> str:
        return f"SPSB(epsilon={self.epsilon}, samples={self.samples})"


class ParameterShift(Differentiator):
    """Two-term shift rule with shift pi/2 and coefficient 1/2."""

    name = "param-shift"

    def evals_per_jacobian(self, n_trainable: int) -> int:
        return 2 * n_trainable

    def check_circuit(self, circuit: Circuit) -> None:
        uses: dict[int, int] = {}
        for g in circuit.gates:
            if g.param is None:
                continue
            if g.kind not in PAULI_ROTATIONS:
                raise ConfigurationError(f"no shift rule for {g.kind} bound to slot {g.param}")
            uses[g.param] = uses.get(g.param, 0) + 1
        shared = sorted(j for j, c in uses.items() if c > 1)
        if shared:
            raise ConfigurationError(
                f"slots {shared} drive several gates; the two-term shift rule needs one gate per slot"
            )

    def jacobians(self, circuit, params, inputs, counter=None, rngs=None, **run_kwargs):
        self.check_circuit(circuit)
        params, inputs = _as_rows(params, inputs)
        return _shift_jacobians(circuit, params, inputs, SHIFT, SHIFT_COEFF, counter, run_kwargs)


class FiniteDifference(Differentiator):
    name = "finite-diff"

    def __init__(self, h: float = 1e-5):
        if not h > 0:
            raise ConfigurationError(f"finite-difference step must be > 0, got {h}")
        self.h = float(h)

    def evals_per_jacobian(self, n_trainable: int) -> int:
        return 2 * n_trainable

    def jacobians(self, circuit, params, inputs, counter=None, rngs=None, **run_kwargs):
        params, inputs = _as_rows(params, inputs)
        return _shift_jacobians(
            circuit, params, inputs, self.h, 1.0 / (2.0 * self.h), counter, run_kwargs
        )

    def __repr__(self) -> str:
        return f"FiniteDifference(h={self.h})"


def _shift_jacobians(circuit, params, inputs, shift, coeff, counter, run_kwargs):
    b, n = params.shape
    eye = np.eye(n) * shift
    plus = (params[:, None, :] + eye[None]).reshape(b * n, n)
    minus = (params[:, None, :] - eye[None]).reshape(b * n, n)
    x = np.repeat(inputs, n, axis=0)
    out = run_circuits(circuit, np.concatenate([plus, minus]), np.concatenate([x, x]), counter, **run_kwargs)
    f_plus = out[: b * n].reshape(b, n, -1)
    f_minus = out[b * n:].reshape(b, n, -1)
    return np.transpose(coeff * (f_plus - f_minus), (0, 2, 1))


def make_differentiator(method: str, epsilon: float = 0.01, samples: int = 1, h: float = 1e-5) -> Differentiator:
    if method == "spsb":
        return SPSB(epsilon, samples)
    if method == "param-shift":
        return ParameterShift()
    if method == "finite-diff":
        return FiniteDifference(h)
    raise ConfigurationError(f"unknown differentiator {method!r} (spsb, param-shift, finite-diff)")


# --- single-Jacobian helpers ------------------------------------------------


def spsb_jacobian(
    circuit: Circuit,
    params,
    inputs,
    epsilon: float = 0.01,
    rng: np.random.Generator | None = None,
    counter: EvalCounter | None = None,
) -> np.ndarray:
    if rng is None:
        raise ConfigurationError("spsb_jacobian needs a random generator")
    return SPSB(epsilon).jacobians(circuit, np.asarray(params, float)[None], np.asarray(inputs, float)[None], counter, [rng])[0]


def param_shift_jacobian(circuit: Circuit, params, inputs, counter: EvalCounter | None = None) -> np.ndarray:
    return ParameterShift().jacobians(circuit, np.asarray(params, float)[None], np.asarray(inputs, float)[None], counter)[0]


def finite_diff_jacobian(
    circuit: Circuit, params, inputs, h: float = 1e-5, counter: EvalCounter | None = None
) -> np.ndarray:
    return FiniteDifference(h).jacobians(circuit, np.asarray(params, float)[None], np.asarray(inputs, float)[None], counter)[0]
