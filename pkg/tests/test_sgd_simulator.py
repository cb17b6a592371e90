"""Tests for the online SGD simulator."""
import csv
import math

import numpy as np
import pytest

import geqlab.sgd_simulator as sgd_mod
from geqlab.activations import ActivationKind, evaluate
from geqlab.generators import Identity, SingleLayer, Teacher
from geqlab.moments import moments_from_matrices
from geqlab.ode_dynamics import init_state, order_params
from geqlab.sgd_simulator import (
    RunConfig,
    Student,
    default_record_steps,
    measure_order_params,
    run,
    sgd_step,
    write_sgd_trajectory_csv,
)
from geqlab.sgd_simulator import test_error_mc as mc_test_error

ERF = ActivationKind.ERF
LINEAR = ActivationKind.LINEAR


def identity_world(N, K, M, seed, *, scale=1.0):
    rng = np.random.default_rng(seed)
    gen = Identity(N)
    ms = moments_from_matrices(np.eye(N), np.eye(N))
    teacher = Teacher(W=rng.standard_normal((M, N)), v=np.ones(M), kind=ERF)
    student = Student(
        W=scale * rng.standard_normal((K, N)), v=0.5 + rng.random(K), kind=ERF
    )
    return gen, ms, teacher, student


def test_student_validation():
    with pytest.raises(ValueError, match="hidden unit"):
        Student(W=np.empty((0, 4)), v=np.empty(0), kind=ERF)
    with pytest.raises(ValueError, match="entries"):
        Student(W=np.ones((2, 4)), v=np.ones(3), kind=ERF)
    with pytest.raises(ValueError, match="finite"):
        Student(W=np.array([[np.nan, 0.0]]), v=np.ones(1), kind=ERF)


def test_sgd_step_linear_explicit():
    # N=2, w=(1,0), v=1, x=(1,1), y=0: lambda = Delta = 1/sqrt(2), so
    # dW = -(eta/2)(1,1) and dv = -eta/4
    s = Student(W=np.array([[1.0, 0.0]]), v=np.array([1.0]), kind=LINEAR)
    eta = 0.3
    nxt = sgd_step(s, np.array([1.0, 1.0]), 0.0, eta)
    np.testing.assert_allclose(nxt.W, [[1.0 - eta / 2, -eta / 2]], rtol=1e-15)
    np.testing.assert_allclose(nxt.v, [1.0 - eta / 4], rtol=1e-15)


def test_sgd_step_matches_finite_difference_gradient():
    """The update is -eta * grad of the per-sample loss, with the v-gradient
    carrying an extra 1/N relative to the W-gradient."""
    rng = np.random.default_rng(0)
    K, N = 2, 5
    s = Student(W=rng.standard_normal((K, N)), v=rng.standard_normal(K), kind=ERF)
    x = rng.standard_normal(N)
    y = 0.37
    eta = 0.8

    def loss(W, v):
        lam = W @ x / math.sqrt(N)
        return 0.5 * (v @ evaluate(ERF, lam) - y) ** 2

    nxt = sgd_step(s, x, y, eta)
    h = 1e-6
    for k in range(K):
        for i in range(N):
            Wp, Wm = s.W.copy(), s.W.copy()
            Wp[k, i] += h
            Wm[k, i] -= h
            grad = (loss(Wp, s.v) - loss(Wm, s.v)) / (2 * h)
            assert nxt.W[k, i] - s.W[k, i] == pytest.approx(-eta * grad, abs=1e-8)
        vp, vm = s.v.copy(), s.v.copy()
        vp[k] += h
        vm[k] -= h
        grad = (loss(s.W, vp) - loss(s.W, vm)) / (2 * h)
        assert nxt.v[k] - s.v[k] == pytest.approx(-eta / N * grad, abs=1e-8)


def test_sgd_step_no_residual_no_change():
    rng = np.random.default_rng(1)
    s = Student(W=rng.standard_normal((2, 4)), v=rng.standard_normal(2), kind=ERF)
    x = rng.standard_normal(4)
    y = float(s.predict(x))
    nxt = sgd_step(s, x, y, eta=0.9)
    np.testing.assert_array_equal(nxt.W, s.W)
    np.testing.assert_array_equal(nxt.v, s.v)


def test_sgd_step_eta_zero():
    rng = np.random.default_rng(2)
    s = Student(W=rng.standard_normal((2, 4)), v=rng.standard_normal(2), kind=ERF)
    nxt = sgd_step(s, rng.standard_normal(4), 1.0, eta=0.0)
    np.testing.assert_array_equal(nxt.W, s.W)
    np.testing.assert_array_equal(nxt.v, s.v)


def test_sgd_step_dimension_mismatch():
    s = Student(W=np.ones((1, 4)), v=np.ones(1), kind=ERF)
    with pytest.raises(ValueError, match="shape"):
        sgd_step(s, np.ones(5), 0.0, 0.1)


def test_measure_order_params_basic():
    gen, ms, teacher, student = identity_world(16, 2, 2, seed=3)
    zero = Student(W=np.zeros((2, 16)), v=np.ones(2), kind=ERF)
    op = measure_order_params(zero, ms, teacher)
    assert not op.Q.any() and not op.R.any()
    np.testing.assert_array_equal(op.T, teacher.overlaps())

    aligned = Student(W=teacher.W, v=teacher.v, kind=ERF)
    op = measure_order_params(aligned, ms, teacher)
    np.testing.assert_allclose(op.Q, op.T, rtol=1e-12)
    np.testing.assert_allclose(op.R, op.T, rtol=1e-12)


def test_measure_order_params_matches_projected_route():
    rng = np.random.default_rng(4)
    N, D, K, M = 20, 30, 3, 2
    A = rng.standard_normal((N, D)) / math.sqrt(D)
    ms = moments_from_matrices(A @ A.T, A)
    teacher = Teacher(W=rng.standard_normal((M, D)), v=np.ones(M), kind=ERF)
    student = Student(W=rng.standard_normal((K, N)), v=np.ones(K), kind=ERF)
    direct = measure_order_params(student, ms, teacher)
    projected = order_params(init_state(ms, student.W, student.v, teacher, ERF))
    np.testing.assert_allclose(direct.Q, projected.Q, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(direct.R, projected.R, rtol=1e-10, atol=1e-12)


def test_measure_order_params_dimension_checks():
    gen, ms, teacher, student = identity_world(16, 2, 2, seed=5)
    with pytest.raises(ValueError, match="N ="):
        measure_order_params(Student(W=np.ones((1, 9)), v=np.ones(1), kind=ERF), ms, teacher)
    with pytest.raises(ValueError, match="latent"):
        measure_order_params(student, ms, Teacher(W=np.ones((1, 9)), v=np.ones(1), kind=ERF))


def test_test_error_mc_aligned_student_is_exact_zero():
    gen, ms, teacher, _ = identity_world(12, 2, 2, seed=6)
    aligned = Student(W=teacher.W, v=teacher.v, kind=ERF)
    err, se = mc_test_error(aligned, teacher, gen, 500, seed=7)
    assert err == 0.0
    assert se == 0.0


def test_test_error_mc_null_student_erf_closed_form():
    # W = 0, v = 0 against an Erf teacher with T = I and vtilde = (1, 1):
    # the error is the teacher self-term (2/pi) asin(1/2) = 1/3
    D = 60
    rng = np.random.default_rng(8)
    basis, _ = np.linalg.qr(rng.standard_normal((D, 2)))
    teacher = Teacher(W=math.sqrt(D) * basis.T, v=np.array([1.0, 1.0]), kind=ERF)
    np.testing.assert_allclose(teacher.overlaps(), np.eye(2), atol=1e-12)
    null = Student(W=np.zeros((1, D)), v=np.zeros(1), kind=ERF)
    err, se = mc_test_error(null, teacher, Identity(D), 40_000, seed=9)
    assert err == pytest.approx(1.0 / 3.0, abs=4 * se)


def test_test_error_mc_determinism_and_validation():
    gen, ms, teacher, student = identity_world(10, 1, 1, seed=10)
    a = mc_test_error(student, teacher, gen, 600, seed=11)
    b = mc_test_error(student, teacher, gen, 600, seed=11)
    assert a == b
    c = mc_test_error(student, teacher, gen, 600, seed=12)
    assert a != c
    with pytest.raises(ValueError, match="at least 100"):
        mc_test_error(student, teacher, gen, 99, seed=0)


def test_default_record_steps_log_spacing():
    marks = default_record_steps(1000, points_per_decade=4)
    assert marks[0] == 0 and marks[-1] == 1000
    assert marks == sorted(set(marks))
    inner = [m for m in marks if 0 < m < 1000]
    # roughly 4 points per decade over three decades
    assert 10 <= len(inner) <= 14
    assert default_record_steps(0) == [0]


def test_run_zero_steps_records_initial_state():
    gen, ms, teacher, student = identity_world(10, 1, 1, seed=13)
    points = run(student, teacher, gen, RunConfig(eta=0.5, steps=0, seed=1, n_test=200), ms)
    assert len(points) == 1
    assert points[0].t == 0.0
    op = measure_order_params(student, ms, teacher)
    np.testing.assert_array_equal(points[0].Q, op.Q)


def test_run_deterministic_per_seed():
    gen, ms, teacher, student = identity_world(12, 2, 1, seed=14)
    cfg = RunConfig(eta=0.4, steps=300, seed=5, n_test=200)
    a = run(student, teacher, gen, cfg, ms)
    b = run(student, teacher, gen, cfg, ms)
    assert [p.pmse_mc for p in a] == [p.pmse_mc for p in b]
    for pa, pb in zip(a, b):
        np.testing.assert_array_equal(pa.Q, pb.Q)


def test_run_batching_invariance(monkeypatch):
    """The sample at step s depends only on (seed, s), not on batch size.

    The tolerance is loose only at the last bit: BLAS may round batched
    teacher labels differently than it rounds in a 7-row batch.
    """
    gen, ms, teacher, student = identity_world(12, 1, 1, seed=15)
    cfg = RunConfig(eta=0.4, steps=100, seed=6, n_test=200)
    baseline = run(student, teacher, gen, cfg, ms)
    monkeypatch.setattr(sgd_mod, "_TRAIN_BATCH", 7)
    small_batches = run(student, teacher, gen, cfg, ms)
    for pa, pb in zip(baseline, small_batches):
        np.testing.assert_allclose(pa.Q, pb.Q, rtol=1e-12, atol=1e-14)
        assert pa.pmse_mc == pytest.approx(pb.pmse_mc, rel=1e-12)


def test_run_matches_plain_sgd_reference():
    """Identity generator reduces to classic i.i.d. teacher-student SGD.

    A minimal reference loop (no generator layer, its own Gaussian stream)
    must land on the same learning curve statistically.
    """
    N, steps, eta = 100, 4000, 0.8
    gen, ms, teacher, student = identity_world(N, 1, 1, seed=16, scale=1e-1)
    cfg = RunConfig(eta=eta, steps=steps, seed=7, n_test=5000)
    points = run(student, teacher, gen, cfg, ms)

    rng = np.random.default_rng(12345)
    W, v = student.W.copy(), student.v.copy()
    wt, vt = teacher.W, teacher.v
    for _ in range(steps):
        x = rng.standard_normal(N)
        lam = W @ x / math.sqrt(N)
        nu = wt @ x / math.sqrt(N)
        delta = v @ evaluate(ERF, lam) - vt @ evaluate(ERF, nu)
        gprime = np.sqrt(2 / np.pi) * np.exp(-lam**2 / 2)
        W -= eta / math.sqrt(N) * np.outer(v * delta * gprime, x)
        v -= eta / N * delta * evaluate(ERF, lam)
    ref = Student(W=W, v=v, kind=ERF)
    ref_err, ref_se = mc_test_error(ref, teacher, gen, 5000, seed=8)

    start, end = points[0].pmse_mc, points[-1].pmse_mc
    assert end < 0.5 * start
    assert abs(end - ref_err) < 0.05


def test_run_order_param_pmse_tracks_mc_pmse():
    gen, ms, teacher, student = identity_world(100, 2, 2, seed=17, scale=1e-1)
    cfg = RunConfig(eta=0.5, steps=2000, seed=9, n_test=4000)
    points = run(student, teacher, gen, cfg, ms)
    for p in points:
        assert p.pmse >= 0.0
        assert p.pmse == pytest.approx(p.pmse_mc, abs=4 * p.pmse_mc_stderr + 0.02)


def test_run_single_layer_generator_smoke():
    rng = np.random.default_rng(18)
    N, D = 40, 20
    A = rng.standard_normal((N, D))
    gen = SingleLayer(A=A, kind=ActivationKind.SIGN)
    latent = rng.standard_normal((4000, D))
    X = evaluate(ActivationKind.SIGN, latent @ A.T)
    ms = moments_from_matrices(X.T @ X / len(X), X.T @ latent / len(latent))
    teacher = Teacher(W=rng.standard_normal((2, D)), v=np.ones(2), kind=ERF)
    student = Student(W=1e-3 * rng.standard_normal((2, N)), v=rng.standard_normal(2), kind=ERF)
    cfg = RunConfig(eta=0.3, steps=500, seed=10, n_test=500, record_steps=(0, 100, 500))
    points = run(student, teacher, gen, cfg, ms)
    assert [p.t for p in points] == [0.0, 100 / N, 500 / N]
    assert all(np.isfinite(p.pmse_mc) for p in points)


def test_run_config_validation():
    with pytest.raises(ValueError, match="eta"):
        RunConfig(eta=-0.1, steps=10)
    with pytest.raises(ValueError, match="steps"):
        RunConfig(eta=0.1, steps=-1)
    with pytest.raises(ValueError, match="n_test"):
        RunConfig(eta=0.1, steps=10, n_test=50)


def test_sgd_csv_round_trip(tmp_path):
    gen, ms, teacher, student = identity_world(10, 2, 1, seed=20)
    cfg = RunConfig(eta=0.4, steps=50, seed=11, n_test=200, record_steps=(0, 25))
    points = run(student, teacher, gen, cfg, ms)
    path = tmp_path / "sgd.csv"
    write_sgd_trajectory_csv(points, path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        assert reader.fieldnames == [
            "t", "pmse", "Q11", "Q12", "Q22", "R11", "R21", "v1", "v2",
            "pmse_mc", "pmse_mc_stderr",
        ]
        rows = list(reader)
    assert len(rows) == len(points)
    assert float(rows[-1]["pmse_mc"]) == points[-1].pmse_mc
    with pytest.raises(ValueError, match="empty"):
        write_sgd_trajectory_csv([], tmp_path / "none.csv")
