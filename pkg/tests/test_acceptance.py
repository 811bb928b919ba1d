"""Acceptance criteria, one test each. Every test reports a PASS/FAIL line
(collected into the terminal summary) before asserting."""
import math
import time

import numpy as np
import pytest

from spsb import graph as g
from spsb.cli import run_command
from spsb.diff import SPSB, ParameterShift, central_difference, finite_diff_jacobian, param_shift_jacobian
from spsb.qsim import EvalCounter, apply_gate, build_iqp_circuit, expectation_z, new_state
from spsb.tasks import ExperimentConfig, aggregate_runs, evaluate, load_dataset, make_model, run_experiment, train
from spsb.verify import random_circuit, spsb_mean_vs_shift


def test_1_param_shift_matches_finite_difference(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(20):
        c = build_iqp_circuit(int(rng.integers(1, 5)), int(rng.integers(1, 4)))
        theta = rng.uniform(-math.pi, math.pi, c.n_trainable)
        x = rng.uniform(0, math.pi, c.n_inputs)
        err = np.abs(param_shift_jacobian(c, theta, x) - finite_diff_jacobian(c, theta, x, h=1e-5)).max()
        worst = max(worst, err)
    secs = time.perf_counter() - t0
    ok = worst < 1e-7 and secs < 10
    report(1, ok, f"max |PS - FD| = {worst:.2e} (tol 1e-7) over 20 circuits, {secs:.2f}s (limit 10s)")
    assert ok


def test_2_spsb_mean_is_unbiased(report):
    t0 = time.perf_counter()
    mean, se, exact = spsb_mean_vs_shift(n_samples=10_000, epsilon=0.01)
    secs = time.perf_counter() - t0
    assert exact.shape == (3, 9)
    tol = np.maximum(3 * se, 1e-3)
    inside = np.abs(mean - exact) <= tol
    ok = bool(inside.all()) and secs < 60
    report(2, ok, f"{int(inside.sum())}/{inside.size} entries within max(3 SE, 1e-3), {secs:.2f}s (limit 60s)")
    assert ok


def test_3_evaluation_costs_are_exact(report):
    shapes = {1: (1, 1), 9: (3, 3), 15: (5, 3), 48: (16, 3)}
    rows, ok = [], True
    for n, (nq, nl) in shapes.items():
        c = build_iqp_circuit(nq, nl)
        assert c.n_trainable == n
        theta, x = np.full(n, 0.1), np.full(c.n_inputs, 0.2)
        spsb, ps = EvalCounter(), EvalCounter()
        SPSB().jacobians(c, theta, x[None], spsb, [np.random.default_rng(n)])
        ParameterShift().jacobians(c, theta, x[None], ps)
        ok &= spsb.total == 2 and ps.total == 2 * n
        rows.append(f"n={n}: spsb {spsb.total}, shift {ps.total}")
    report(3, ok, "; ".join(rows))
    assert ok


@pytest.mark.slow
def test_4_spsb_needs_fewer_evaluations(report):
    t0 = time.perf_counter()
    base = ExperimentConfig(task="random-b", n_qubits=10, n_layers=3, batch_size=25, learning_rate=0.01, n_runs=5)
    # 60 shift steps cost 60 * 25 * 61 = 91500 evals; 305 epochs of SPSB cost 1220 * 75 = 91500
    shift = aggregate_runs(run_experiment(base.replace(differentiator="param-shift", epochs=15)))
    spsb = aggregate_runs(run_experiment(base.replace(differentiator="spsb", epochs=305)))
    secs = time.perf_counter() - t0
    budget = float(shift.circuit_evals[-1])
    target = float(shift.smoothed_loss[-1])
    needed = spsb.first_evals_reaching(target, smoothed=True)
    raw_needed = spsb.first_evals_reaching(float(shift.median_loss[-1]), smoothed=False)
    ratio = needed / budget
    ok = ratio <= 0.5 and secs < 900
    report(
        4, ok,
        f"SPSB reaches shift final loss {target:.4f} at {needed:.0f}/{budget:.0f} evals "
        f"(ratio {ratio:.3f}, limit 0.5; unsmoothed {raw_needed / budget:.3f}), {secs:.0f}s (limit 900s)",
    )
    assert ok


@pytest.mark.slow
def test_5_quanvolutional_pipeline_learns(report):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(task="quanv", n_qubits=4, n_layers=3, batch_size=50, learning_rate=0.05,
                           differentiator="spsb", epochs=10)
    accs = []
    for seed in range(3):
        data = load_dataset(cfg, seed)
        assert len(data) == 1000
        model = make_model(cfg, seed)
        h = train(model, data, cfg, seed=seed)
        assert h.records[-1].step == 200
        accs.append(evaluate(model, data)[1])
    secs = time.perf_counter() - t0
    med = float(np.median(accs))
    ok = med >= 0.85 and secs < 900
    report(5, ok, f"median training accuracy after 200 steps {med:.3f} (seeds {accs}), limit 0.85, {secs:.0f}s")
    assert ok


def _classical_cases(rng):
    """(name, scalar function of one array, point) triples."""
    b, k, m = int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(2, 4))
    x = rng.normal(size=(b, k))
    W = rng.normal(size=(m, k))
    bias = rng.normal(size=m)
    y_bin = rng.integers(0, 2, size=b)
    y_hot = np.eye(m)[rng.integers(0, m, size=b)]
    p = rng.uniform(0.05, 0.95, size=b)
    w = rng.normal(size=(b, m))

    return [
        ("dense/W", lambda v: g.total(g.sigmoid(g.dense(g.Tensor(x), v, g.Tensor(bias)))), W),
        ("dense/b", lambda v: g.total(g.sigmoid(g.dense(g.Tensor(x), g.Tensor(W), v))), bias),
        ("sigmoid", lambda v: g.total(g.sigmoid(v)), x),
        ("softmax", lambda v: g.cross_entropy(g.softmax(v), y_hot), w),
        ("concat", lambda v: g.total(g.sigmoid(g.concat([v, g.affine(v, 2.0, 1.0)], axis=-1))), x),
        ("bce", lambda v: g.bce_loss(v, y_bin), p),
        ("cross_entropy", lambda v: g.cross_entropy(v, y_hot), rng.uniform(0.05, 0.95, size=(b, m))),
        ("dense-sigmoid-bce", lambda v: g.bce_loss(
            g.take(g.sigmoid(g.dense(g.Tensor(x), v, g.Tensor(bias[:1]))), 0, axis=-1), y_bin), W[:1]),
    ]


def test_6_classical_gradients_match_fd(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(606)
    worst, n_cases = 0.0, 0
    while n_cases < 64:
        for name, f, point in _classical_cases(rng):
            t = g.Tensor(point, requires_grad=True)
            with g.Tape() as tape:
                out = f(t)
            analytic = tape.backward(out)[t]
            fd = central_difference(lambda v: float(f(g.Tensor(v.reshape(point.shape))).value), point.ravel(), 1e-5)
            fd = fd.reshape(point.shape)
            rel = np.abs(analytic - fd) / np.maximum(np.abs(fd), 1e-4)
            worst = max(worst, float(rel.max()))
            n_cases += 1
    secs = time.perf_counter() - t0
    ok = worst < 1e-6 and secs < 5
    report(6, ok, f"max relative error {worst:.2e} (tol 1e-6) over {n_cases} cases, {secs:.2f}s (limit 5s)")
    assert ok


def test_7_snapshot_rerun_is_byte_identical(report, tmp_path):
    runs = [
        (["random-task", "--method", "spsb", "--steps", "20", "--runs", "2", "--seed", "4"], "random-b_spsb_lr0.01"),
        (["random-task", "--model", "a", "--method", "param-shift", "--steps", "5"], "random-a_param-shift_lr0.01"),
        (["quanv", "--lr", "0.05", "--steps", "3"], "quanv_spsb_lr0.05"),
    ]
    same = []
    for i, (argv, name) in enumerate(runs):
        first, second = tmp_path / f"a{i}", tmp_path / f"b{i}"
        assert run_command(argv + ["--deterministic", "--out", str(first)]) == 0
        cmd = argv[0]
        assert run_command([cmd, "--config", str(first / f"{name}.config.json"), "--out", str(second)]) == 0
        same.append((first / f"{name}.csv").read_bytes() == (second / f"{name}.csv").read_bytes())
    ok = all(same)
    report(7, ok, f"{sum(same)}/{len(same)} experiments reproduced byte-for-byte from their snapshots")
    assert ok


PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Z = np.diag([1.0, -1.0]).astype(complex)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)


def _embed(op, qubit, n):
    """Full-register matrix of a one-qubit op; qubit 0 is the rightmost factor."""
    mats = [np.eye(2, dtype=complex)] * n
    mats[n - 1 - qubit] = op
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def _unitary(gate, angle, n):
    if gate.kind == "H":
        return _embed(HADAMARD, gate.qubits[0], n)
    if gate.kind in ("RX", "RZ"):
        p = _embed(PAULI_X if gate.kind == "RX" else PAULI_Z, gate.qubits[0], n)
    else:
        p = _embed(PAULI_Z, gate.qubits[0], n) @ _embed(PAULI_Z, gate.qubits[1], n)
    return math.cos(angle / 2) * np.eye(2**n) - 1j * math.sin(angle / 2) * p


def test_8_simulator_matches_density_matrices(report):
    rng = np.random.default_rng(808)
    worst_norm = worst_dm = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 4))
        state = new_state(n)
        rho = np.zeros((2**n, 2**n), dtype=complex)
        rho[0, 0] = 1
        for gate, angle in random_circuit(n, int(rng.integers(1, 31)), rng):
            state = apply_gate(state, gate, angle)
            u = _unitary(gate, angle, n)
            rho = u @ rho @ u.conj().T
            worst_norm = max(worst_norm, abs(state.norm() - 1))
        for q in range(n):
            worst_dm = max(worst_dm, abs(np.trace(rho @ _embed(PAULI_Z, q, n)).real - expectation_z(state, q)))
    ok = worst_norm < 1e-12 and worst_dm < 1e-12
    report(8, ok, f"max norm deviation {worst_norm:.1e}, max density-matrix <Z> error {worst_dm:.1e} (tol 1e-12)")
    assert ok
