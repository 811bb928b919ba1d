"""Oracle checks run by ``spsb verify``.

Each check returns a :class:`Check` row; the CLI prints them as a table.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .diff import SPSB, ParameterShift, finite_diff_jacobian, param_shift_jacobian
from .qsim import (
    Circuit,
    EvalCounter,
    Gate,
    apply_gate,
    build_iqp_circuit,
    expectation_z,
    new_state,
    run_circuit,
)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def random_circuit(n_qubits: int, n_gates: int, rng: np.random.Generator) -> list[tuple[Gate, float | None]]:
    """Random gate list over {H, RX, RZ, RZZ} with bound angles."""
    gates = []
    for _ in range(n_gates):
        kind = rng.choice(["H", "RX", "RZ", "RZZ"] if n_qubits > 1 else ["H", "RX", "RZ"])
        if kind == "RZZ":
            q = tuple(int(x) for x in rng.choice(n_qubits, size=2, replace=False))
        else:
            q = (int(rng.integers(n_qubits)),)
        angle = None if kind == "H" else float(rng.uniform(-2 * math.pi, 2 * math.pi))
        gates.append((Gate(kind, q), angle))
    return gates


def check_simulator(n_circuits: int = 100, seed: int = 11) -> Check:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_norm = worst_dm = 0.0
    z = np.diag([1.0, -1.0])
    for _ in range(n_circuits):
        n = int(rng.integers(1, 4))
        state = new_state(n)
        for gate, angle in random_circuit(n, int(rng.integers(1, 31)), rng):
            state = apply_gate(state, gate, angle)
            worst_norm = max(worst_norm, abs(state.norm() - 1.0))
        rho = np.outer(state.amplitudes, state.amplitudes.conj())
        for q in range(n):
            # qubit 0 is the least-significant bit, i.e. the rightmost kron factor
            ops = [np.eye(2)] * n
            ops[n - 1 - q] = z
            zq = ops[0]
            for op in ops[1:]:
                zq = np.kron(zq, op)
            worst_dm = max(worst_dm, abs(np.trace(rho @ zq).real - expectation_z(state, q)))
    ok = worst_norm < 1e-12 and worst_dm < 1e-12
    return Check("simulator norm + density matrix", ok,
                 f"max norm dev {worst_norm:.1e}, max |Tr(rho Z)-<Z>| {worst_dm:.1e}",
                 time.perf_counter() - t0)


def check_shift_vs_fd(n_circuits: int = 20, seed: int = 12, tol: float = 1e-7) -> Check:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_circuits):
        c = build_iqp_circuit(int(rng.integers(1, 5)), int(rng.integers(1, 4)))
        theta = rng.uniform(-math.pi, math.pi, c.n_trainable)
        x = rng.uniform(0, math.pi, c.n_inputs)
        worst = max(worst, np.abs(param_shift_jacobian(c, theta, x) - finite_diff_jacobian(c, theta, x)).max())
    return Check("param-shift vs finite-diff", worst < tol, f"max abs err {worst:.1e} (tol {tol:g})",
                 time.perf_counter() - t0)


def spsb_mean_vs_shift(n_samples: int = 10_000, epsilon: float = 0.01, seed: int = 13):
    """Mean and standard error of ``n_samples`` single-sample SPSB Jacobians on
    a 3-qubit, 3-layer IQP circuit, alongside the parameter-shift Jacobian."""
    rng = np.random.default_rng(seed)
    c = build_iqp_circuit(3, 3)
    theta = rng.uniform(-math.pi, math.pi, c.n_trainable)
    x = rng.uniform(0, math.pi, c.n_inputs)
    exact = param_shift_jacobian(c, theta, x)
    rngs = [np.random.default_rng([seed, k]) for k in range(n_samples)]
    jacs = SPSB(epsilon).jacobians(c, theta, np.repeat(x[None], n_samples, axis=0), EvalCounter(), rngs)
    mean = jacs.mean(axis=0)
    se = jacs.std(axis=0, ddof=1) / math.sqrt(n_samples)
    return mean, se, exact


def check_spsb_unbiased(n_samples: int = 10_000) -> Check:
    t0 = time.perf_counter()
    mean, se, exact = spsb_mean_vs_shift(n_samples)
    tol = np.maximum(3 * se, 1e-3)
    err = np.abs(mean - exact)
    ok = bool(np.all(err <= tol))
    return Check("SPSB mean vs param-shift", ok,
                 f"{int(np.sum(err <= tol))}/{err.size} entries within max(3 SE, 1e-3)",
                 time.perf_counter() - t0)


def check_costs() -> Check:
    t0 = time.perf_counter()
    shapes = {1: (1, 1), 9: (3, 3), 15: (5, 3), 48: (16, 3)}
    rows = []
    ok = True
    for n_tr, (nq, nl) in shapes.items():
        c = build_iqp_circuit(nq, nl)
        theta = np.zeros(c.n_trainable)
        x = np.zeros(c.n_inputs)
        counter = EvalCounter()
        SPSB().jacobians(c, theta, x[None], counter, [np.random.default_rng(0)])
        spsb_cost = counter.total
        counter = EvalCounter()
        ParameterShift().jacobians(c, theta, x[None], counter)
        ps_cost = counter.total
        ok &= spsb_cost == 2 and ps_cost == 2 * n_tr
        rows.append(f"n={n_tr}: {spsb_cost}/{ps_cost}")
    return Check("evaluation counts (spsb/shift)", ok, ", ".join(rows), time.perf_counter() - t0)


def check_analytic() -> Check:
    t0 = time.perf_counter()
    c = Circuit(1, [Gate("RX", (0,), param=0)], n_trainable=1)
    worst = 0.0
    for theta in np.linspace(-math.pi, math.pi, 25):
        worst = max(worst, abs(run_circuit(c, [theta], [], EvalCounter())[0] - math.cos(theta)))
        worst = max(worst, abs(param_shift_jacobian(c, [theta], [], EvalCounter())[0, 0] + math.sin(theta)))
    return Check("RX analytic <Z>=cos, d/dt=-sin", worst < 1e-12, f"max err {worst:.1e}", time.perf_counter() - t0)


def run_all(n_samples: int = 10_000) -> list[Check]:
    return [
        check_simulator(),
        check_analytic(),
        check_shift_vs_fd(),
        check_spsb_unbiased(n_samples),
        check_costs(),
    ]
