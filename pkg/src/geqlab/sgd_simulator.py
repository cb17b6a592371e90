"""Ground-truth online SGD for the two-layer student.

One fresh sample per step: at step s the network sees x = generate(gen, c_s)
with c_s drawn from the reproducible latent stream, takes a single gradient
step on the per-sample loss (1/2)(phi(x) - y)^2 with the two-layer learning
rates

    w^k <- w^k - (eta / sqrt N) v^k Delta g'(lambda^k) x,
    v^k <- v^k - (eta / N) g(lambda^k) Delta,

and never revisits the sample.  `run` records, on a log-spaced schedule in
t = step / N, both the order-parameter prediction error (through estimated
input moments) and a Monte-Carlo test error on held-out samples; the gap
between the two columns is a direct check of the Gaussian-equivalence
approximation underlying the theory modules.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .activations import ActivationKind, evaluate, deriv
from .generators import Teacher, generate, latent_block, teacher_label
from .moments import MomentSet
from .ode_dynamics import OrderParams, _point_row, pmse, trajectory_header
from .seeds import derive_seed

__all__ = [
    "Student",
    "RunConfig",
    "SgdTrajectoryPoint",
    "sgd_step",
    "measure_order_params",
    "test_error_mc",
    "run",
    "default_record_steps",
    "write_sgd_trajectory_csv",
]

_TRAIN_BATCH = 512
_TEST_BATCH = 4096


@dataclass(frozen=True)
class Student:
    W: np.ndarray  # K x N first-layer rows
    v: np.ndarray  # K second-layer weights
    kind: ActivationKind

    def __post_init__(self):
        object.__setattr__(self, "W", np.atleast_2d(np.asarray(self.W, dtype=float)))
        object.__setattr__(self, "v", np.atleast_1d(np.asarray(self.v, dtype=float)))
        if self.W.shape[0] < 1:
            raise ValueError("student needs at least one hidden unit")
        if len(self.v) != self.W.shape[0]:
            raise ValueError(
                f"v has {len(self.v)} entries for {self.W.shape[0]} hidden units"
            )
        if not (np.isfinite(self.W).all() and np.isfinite(self.v).all()):
            raise ValueError("student weights must be finite")

    @property
    def K(self) -> int:
        return self.W.shape[0]

    @property
    def N(self) -> int:
        return self.W.shape[1]

    def predict(self, x: np.ndarray) -> np.ndarray:
        """phi(x) = v . g(W x / sqrt N) for one sample or a batch."""
        lam = np.asarray(x, dtype=float) @ self.W.T / math.sqrt(self.N)
        return evaluate(self.kind, lam) @ self.v


@dataclass(frozen=True)
class RunConfig:
    eta: float
    steps: int
    seed: int = 0
    n_test: int = 10_000
    points_per_decade: int = 20
    record_steps: tuple | None = None

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError(f"eta must be nonnegative, got {self.eta}")
        if self.steps < 0:
            raise ValueError(f"steps must be nonnegative, got {self.steps}")
        if self.n_test < 100:
            raise ValueError(f"n_test must be at least 100, got {self.n_test}")
        if self.points_per_decade < 1:
            raise ValueError("points_per_decade must be at least 1")


@dataclass(frozen=True)
class SgdTrajectoryPoint:
    t: float
    pmse: float
    Q: np.ndarray
    R: np.ndarray
    v: np.ndarray
    pmse_mc: float
    pmse_mc_stderr: float


def sgd_step(s: Student, x: np.ndarray, y: float, eta: float) -> Student:
    """One online gradient step; both layers use the pre-update fields."""
    x = np.asarray(x, dtype=float)
    if x.shape != (s.N,):
        raise ValueError(f"sample has shape {x.shape}, want ({s.N},)")
    root_n = math.sqrt(s.N)
    lam = s.W @ x / root_n
    glam = evaluate(s.kind, lam)
    delta = float(s.v @ glam - y)
    coef = (eta / root_n) * s.v * delta * deriv(s.kind, lam)
    return Student(
        W=s.W - np.outer(coef, x),
        v=s.v - (eta / s.N) * delta * glam,
        kind=s.kind,
    )


def measure_order_params(s: Student, ms: MomentSet, teacher: Teacher) -> OrderParams:
    """Overlaps of the current weights under the estimated input moments."""
    if s.N != ms.N:
        raise ValueError(f"student has N = {s.N}, moments have N = {ms.N}")
    if teacher.latent_dim != ms.D:
        raise ValueError(
            f"teacher acts on {teacher.latent_dim} latents, moments have D = {ms.D}"
        )
    Q = s.W @ ms.Omega @ s.W.T / ms.N
    R = s.W @ ms.Phi @ teacher.W.T / (ms.N * math.sqrt(ms.delta))
    return OrderParams(
        Q=Q, R=R, T=teacher.overlaps(), v=s.v.copy(), vtilde=teacher.v.copy()
    )


def test_error_mc(s: Student, teacher: Teacher, gen, n_test: int, seed: int):
    """Monte-Carlo prediction error (1/2) E[(phi(x) - y)^2] on fresh samples.

    Returns (estimate, standard error); both are deterministic given seed.
    """
    if n_test < 100:
        raise ValueError(f"n_test must be at least 100, got {n_test}")
    total = 0.0
    total_sq = 0.0
    for start in range(0, n_test, _TEST_BATCH):
        count = min(_TEST_BATCH, n_test - start)
        c = latent_block(teacher.latent_dim, seed, start, count)
        z = 0.5 * (s.predict(generate(gen, c)) - teacher_label(teacher, c)) ** 2
        total += z.sum()
        total_sq += (z**2).sum()
    mean = total / n_test
    var = max(total_sq / n_test - mean**2, 0.0) * n_test / (n_test - 1)
    return float(mean), float(math.sqrt(var / n_test))


def _psd_projected_pmse(op: OrderParams, kind, teacher_kind) -> float:
    """Order-parameter pmse, tolerant of sampling noise in the moments.

    Estimated (Omega, Phi) combined with the exact teacher overlap can leave
    the joint field covariance slightly indefinite; project it back onto the
    PSD cone before evaluating.
    """
    block = op.block_covariance()
    w, V = np.linalg.eigh(block)
    if w[0] < 0:
        fixed = (V * np.clip(w, 0.0, None)) @ V.T
        K = op.K
        op = OrderParams(
            Q=fixed[:K, :K], R=fixed[:K, K:], T=fixed[K:, K:],
            v=op.v, vtilde=op.vtilde,
        )
    return pmse(op, kind, teacher_kind)


def default_record_steps(steps: int, points_per_decade: int = 20) -> list:
    """Log-spaced step indices, always including 0 and the final step."""
    marks = {0, steps}
    k = 0
    while steps >= 1:
        step = round(10.0 ** (k / points_per_decade))
        if step > steps:
            break
        marks.add(step)
        k += 1
    return sorted(marks)


def run(student0: Student, teacher: Teacher, gen, cfg: RunConfig, ms: MomentSet):
    """Online SGD for cfg.steps samples, recording on a schedule in t = step/N.

    The training sample at step s depends only on (cfg.seed, s), never on the
    batching, and each sample is used exactly once.
    """
    if cfg.record_steps is not None:
        schedule = {min(max(int(s), 0), cfg.steps) for s in cfg.record_steps}
        schedule.update((0, cfg.steps))
    else:
        schedule = set(default_record_steps(cfg.steps, cfg.points_per_decade))
    train_seed = derive_seed(cfg.seed, "sgd-train")

    student = student0
    points = []

    def record(step):
        op = measure_order_params(student, ms, teacher)
        mc, se = test_error_mc(
            student, teacher, gen, cfg.n_test, derive_seed(cfg.seed, "sgd-test", step)
        )
        points.append(SgdTrajectoryPoint(
            t=step / student.N,
            pmse=_psd_projected_pmse(op, student.kind, teacher.kind),
            Q=op.Q, R=op.R, v=op.v,
            pmse_mc=mc, pmse_mc_stderr=se,
        ))

    for batch_start in range(0, cfg.steps, _TRAIN_BATCH):
        count = min(_TRAIN_BATCH, cfg.steps - batch_start)
        c = latent_block(teacher.latent_dim, train_seed, batch_start, count)
        x = generate(gen, c)
        y = teacher_label(teacher, c)
        for i in range(count):
            step = batch_start + i
            if step in schedule:
                record(step)
            student = sgd_step(student, x[i], y[i], cfg.eta)
    record(cfg.steps)
    return points


def write_sgd_trajectory_csv(points, path) -> None:
    if not points:
        raise ValueError("empty trajectory")
    K, M = points[0].Q.shape[0], points[0].R.shape[1]
    header = trajectory_header(K, M, extra=("pmse_mc", "pmse_mc_stderr"))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for p in points:
            row = _point_row(p) + [p.pmse_mc, p.pmse_mc_stderr]
            writer.writerow([repr(float(x)) for x in row])
