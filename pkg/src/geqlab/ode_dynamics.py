"""Closed order-parameter dynamics of online SGD in the eigenbasis of Omega.

A two-layer student phi(x) = sum_k v^k g(w^k . x / sqrt N) trained online
against a latent teacher admits, in the wide-input limit, a closed set of
ordinary differential equations for the overlaps

    Q = W Omega W^T / N,   R = W Phi Wt^T / (N sqrt delta),   T = Wt Wt^T / D,

once the joint law of the fields (lambda, nu) is Gaussian.  Rather than
tracking densities over the spectrum of Omega on a rho-grid, this module
carries one product matrix per eigenvalue tau,

    s_tau = Gamma_tau Gamma_tau^T,  r_tau = Gamma_tau GammaTilde_tau^T,
    ttilde_tau = GammaTilde_tau GammaTilde_tau^T,

where Gamma/GammaTilde are the weight projections from `moments.project`.
This is exact at finite N and removes the binning width as a parameter.
Per step, the drift of Gamma_tau is rho_tau L Gamma_tau + C GammaTilde_tau
with coefficient matrices L, C built from the auxiliary h-functions; the
products then evolve by the product rule plus the eta^2 diffusion term.

The prediction error pmse depends on the state only through (Q, R, T, v,
vtilde) and the two activation kinds.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .activations import ActivationKind, i2, i3, i4
from .generators import Teacher
from .moments import MomentSet, project

__all__ = [
    "QuadVariant",
    "OdeConfig",
    "OdeState",
    "OrderParams",
    "HFunctions",
    "TrajectoryPoint",
    "DegenerateFieldError",
    "init_state",
    "order_params",
    "h_functions",
    "ode_step",
    "pmse",
    "integrate",
    "write_trajectory_csv",
    "trajectory_header",
]

# relative floor for 2x2 field-pair determinants: below this the pair is
# treated as perfectly correlated (see h_functions)
_DEGENERACY_REL = 1e-12
_VARIANCE_FLOOR = 1e-12


class DegenerateFieldError(ValueError):
    pass


class QuadVariant(str, Enum):
    """Which spectral weight multiplies the eta^2 diffusion term.

    PER_EIGENVALUE uses rho_tau slice by slice (E[beta_tau^2] = rho_tau);
    SPECTRUM_AVERAGED uses the constant gamma = tr(Omega)/N, the form the
    integrated Q-equation takes.  The two coincide for Omega = I.
    """

    PER_EIGENVALUE = "per_eigenvalue"
    SPECTRUM_AVERAGED = "spectrum_averaged"


@dataclass(frozen=True)
class OdeConfig:
    eta: float
    t_max: float
    dt: float = 0.01
    record_every: float = 0.1
    quad_variant: QuadVariant = QuadVariant.PER_EIGENVALUE
    record_times: tuple | None = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.eta < 0:
            raise ValueError(f"eta must be nonnegative, got {self.eta}")
        if self.t_max < 0:
            raise ValueError(f"t_max must be nonnegative, got {self.t_max}")


@dataclass(frozen=True)
class OrderParams:
    Q: np.ndarray       # K x K
    R: np.ndarray       # K x M
    T: np.ndarray       # M x M
    v: np.ndarray       # K
    vtilde: np.ndarray  # M

    @property
    def K(self) -> int:
        return self.Q.shape[0]

    @property
    def M(self) -> int:
        return self.T.shape[0]

    def block_covariance(self) -> np.ndarray:
        """The (K+M) x (K+M) second-moment matrix of (lambda, nu)."""
        return np.block([[self.Q, self.R], [self.R.T, self.T]])


@dataclass(frozen=True)
class OdeState:
    rho_tau: np.ndarray     # N
    s_tau: np.ndarray       # N x K x K
    r_tau: np.ndarray       # N x K x M
    ttilde_tau: np.ndarray  # N x M x M, constant
    v: np.ndarray           # K
    vtilde: np.ndarray      # M, constant
    T: np.ndarray           # M x M, constant
    delta: float
    gamma: float
    kind: ActivationKind
    teacher_kind: ActivationKind
    t: float = 0.0

    @property
    def K(self) -> int:
        return self.s_tau.shape[1]

    @property
    def M(self) -> int:
        return self.T.shape[0]


@dataclass(frozen=True)
class HFunctions:
    """Auxiliary Gaussian averages entering the equations of motion.

    h1/h2 are K x K with zero diagonal (defined for j != k), h3 is K,
    h4/h5 are K x M, h6 is K x K, and h7 comes in the student-student and
    student-teacher flavours used by the v-equation.
    """

    h1: np.ndarray
    h2: np.ndarray
    h3: np.ndarray
    h4: np.ndarray
    h5: np.ndarray
    h6: np.ndarray
    h7_student: np.ndarray
    h7_teacher: np.ndarray


@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    pmse: float
    Q: np.ndarray
    R: np.ndarray
    v: np.ndarray


# ---------------------------------------------------------------------------
# construction and order parameters
# ---------------------------------------------------------------------------

def init_state(ms: MomentSet, W0: np.ndarray, v0: np.ndarray,
               teacher: Teacher, kind: ActivationKind) -> OdeState:
    """Project initial weights into the eigenbasis of Omega.

    delta = D/N is taken from the moment set, and the teacher side of the
    state (ttilde_tau, T, vtilde) is frozen here: nothing in the dynamics
    ever updates it.
    """
    W0 = np.atleast_2d(np.asarray(W0, dtype=float))
    v0 = np.atleast_1d(np.asarray(v0, dtype=float))
    if teacher.latent_dim != ms.D:
        raise ValueError(
            f"teacher acts on {teacher.latent_dim} latents, moments have D = {ms.D}"
        )
    if len(v0) != W0.shape[0]:
        raise ValueError(f"v0 has {len(v0)} entries for {W0.shape[0]} student rows")
    Gamma, GammaTilde, _ = project(ms, W0, teacher.W)
    return OdeState(
        rho_tau=ms.rho,
        s_tau=np.einsum("kt,lt->tkl", Gamma, Gamma),
        r_tau=np.einsum("kt,mt->tkm", Gamma, GammaTilde),
        ttilde_tau=np.einsum("nt,mt->tnm", GammaTilde, GammaTilde),
        v=v0.copy(),
        vtilde=teacher.v.copy(),
        T=teacher.overlaps(),
        delta=ms.D / ms.N,
        gamma=ms.gamma,
        kind=kind,
        teacher_kind=teacher.kind,
    )


def order_params(state: OdeState) -> OrderParams:
    n = len(state.rho_tau)
    Q = np.einsum("t,tkl->kl", state.rho_tau, state.s_tau) / n
    R = state.r_tau.sum(axis=0) / (n * math.sqrt(state.delta))
    return OrderParams(Q=Q, R=R, T=state.T, v=state.v, vtilde=state.vtilde)


# ---------------------------------------------------------------------------
# h-functions
# ---------------------------------------------------------------------------

def _cov_entry(op: OrderParams, a, b) -> float:
    sa, ia = a
    sb, ib = b
    if sa == "s" and sb == "s":
        return op.Q[ia, ib]
    if sa == "s":
        return op.R[ia, ib]
    if sb == "s":
        return op.R[ib, ia]
    return op.T[ia, ib]


def _field_cov(op: OrderParams, labels) -> np.ndarray:
    n = len(labels)
    C = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            C[i, j] = C[j, i] = _cov_entry(op, labels[i], labels[j])
    return C


def _I3(op, kind, teacher_kind, first, second, third) -> float:
    C = _field_cov(op, (first, second, third))
    kind3 = kind if third[0] == "s" else teacher_kind
    return i3(kind, C, kind3=kind3)


def _I4(op, kind, teacher_kind, k, l, third, fourth) -> float:
    C = _field_cov(op, (("s", k), ("s", l), third, fourth))
    kind3 = kind if third[0] == "s" else teacher_kind
    kind4 = kind if fourth[0] == "s" else teacher_kind
    return i4(kind, C, kind3=kind3, kind4=kind4)


def h_functions(op: OrderParams, kind: ActivationKind,
                teacher_kind: ActivationKind | None = None) -> HFunctions:
    """Evaluate h1..h7 for every index combination at the current overlaps.

    Student-student pairs (h1, h2) require a nondegenerate 2x2 covariance:
    two perfectly correlated student fields make the equations singular
    and raise DegenerateFieldError.  Student-teacher pairs (h4, h5) reach
    perfect correlation *by design* when a student node aligns with a
    teacher node, so there the degenerate limit is taken instead: the pair
    average collapses onto the student field alone,

        h4 -> I3(k, k, n) / Q^kk,   h5 -> 0,

    which keeps aligned fixed points exactly stationary.
    """
    teacher_kind = kind if teacher_kind is None else teacher_kind
    K, M = op.K, op.M
    Q, R, T = op.Q, op.R, op.T

    for k in range(K):
        if Q[k, k] < _VARIANCE_FLOOR:
            raise DegenerateFieldError(
                f"student field {k} has vanishing variance Q[{k},{k}] = {Q[k, k]:.3e}"
            )

    h1 = np.zeros((K, K))
    h2 = np.zeros((K, K))
    h3 = np.empty(K)
    h4 = np.empty((K, M))
    h5 = np.empty((K, M))
    h6 = np.empty((K, K))
    h7_student = np.empty((K, K))
    h7_teacher = np.empty((K, M))

    for k in range(K):
        sk = ("s", k)
        h3[k] = _I3(op, kind, teacher_kind, sk, sk, sk) / Q[k, k]
        for j in range(K):
            if j == k:
                continue
            sj = ("s", j)
            denom = Q[k, k] * Q[j, j] - Q[k, j] ** 2
            if denom <= _DEGENERACY_REL * Q[k, k] * Q[j, j]:
                raise DegenerateFieldError(
                    f"degenerate field pair: student units ({k}, {j})"
                )
            a = _I3(op, kind, teacher_kind, sk, sk, sj)
            b = _I3(op, kind, teacher_kind, sk, sj, sj)
            h1[k, j] = (Q[j, j] * a - Q[k, j] * b) / denom
            h2[k, j] = (Q[k, k] * b - Q[k, j] * a) / denom
        for n in range(M):
            tn = ("t", n)
            a = _I3(op, kind, teacher_kind, sk, sk, tn)
            denom = Q[k, k] * T[n, n] - R[k, n] ** 2
            if denom <= _DEGENERACY_REL * Q[k, k] * T[n, n]:
                h4[k, n] = a / Q[k, k]
                h5[k, n] = 0.0
            else:
                b = _I3(op, kind, teacher_kind, sk, tn, tn)
                h4[k, n] = (T[n, n] * a - R[k, n] * b) / denom
                h5[k, n] = (Q[k, k] * b - R[k, n] * a) / denom

    v, vt = op.v, op.vtilde
    for k in range(K):
        for l in range(k, K):
            acc = 0.0
            for j in range(K):
                for i in range(K):
                    acc += v[j] * v[i] * _I4(op, kind, teacher_kind, k, l, ("s", j), ("s", i))
            for j in range(K):
                for m in range(M):
                    acc -= 2.0 * v[j] * vt[m] * _I4(op, kind, teacher_kind, k, l, ("s", j), ("t", m))
            for n in range(M):
                for m in range(M):
                    acc += vt[n] * vt[m] * _I4(op, kind, teacher_kind, k, l, ("t", n), ("t", m))
            h6[k, l] = h6[l, k] = acc

    for k in range(K):
        sk = ("s", k)
        for j in range(K):
            h7_student[k, j] = i2(kind, _field_cov(op, (sk, ("s", j))))
        for n in range(M):
            h7_teacher[k, n] = i2(
                kind, _field_cov(op, (sk, ("t", n))), kind2=teacher_kind
            )

    return HFunctions(h1=h1, h2=h2, h3=h3, h4=h4, h5=h5, h6=h6,
                      h7_student=h7_student, h7_teacher=h7_teacher)


# ---------------------------------------------------------------------------
# time evolution
# ---------------------------------------------------------------------------

def _drift_matrices(op: OrderParams, h: HFunctions, eta: float, delta: float):
    """Coefficients of dGamma_tau/dt = rho_tau L Gamma_tau + C GammaTilde_tau."""
    v, vt = op.v, op.vtilde
    L = -eta * np.outer(v, v) * h.h2
    diag = h.h1 @ v + v * h.h3 - h.h4 @ vt
    L[np.diag_indices_from(L)] = -eta * v * diag
    C = eta / math.sqrt(delta) * np.outer(v, vt) * h.h5
    return L, C


def ode_step(state: OdeState, cfg: OdeConfig) -> OdeState:
    """One explicit Euler step of duration cfg.dt."""
    op = order_params(state)
    h = h_functions(op, state.kind, state.teacher_kind)
    L, C = _drift_matrices(op, h, cfg.eta, state.delta)

    S, r, tt = state.s_tau, state.r_tau, state.ttilde_tau
    rho = state.rho_tau[:, None, None]

    LS = np.matmul(L, S)
    Cr = np.matmul(C, np.swapaxes(r, 1, 2))
    dS = rho * (LS + np.swapaxes(LS, 1, 2)) + Cr + np.swapaxes(Cr, 1, 2)
    eta_sq = cfg.eta**2 * np.outer(op.v, op.v) * h.h6
    if cfg.quad_variant is QuadVariant.PER_EIGENVALUE:
        dS = dS + rho * eta_sq
    else:
        dS = dS + state.gamma * eta_sq

    dr = rho * np.matmul(L, r) + np.matmul(C, tt)
    dv = cfg.eta * (h.h7_teacher @ op.vtilde - h.h7_student @ op.v)

    return replace(
        state,
        s_tau=S + cfg.dt * dS,
        r_tau=r + cfg.dt * dr,
        v=state.v + cfg.dt * dv,
        t=state.t + cfg.dt,
    )


def pmse(op: OrderParams, kind: ActivationKind,
         teacher_kind: ActivationKind | None = None) -> float:
    """Prediction mean-squared error (1/2) E[(phi(x) - y)^2] from overlaps."""
    teacher_kind = kind if teacher_kind is None else teacher_kind
    block = op.block_covariance()
    w = np.linalg.eigvalsh(block)
    tol = 1e-8 * max(np.trace(block), _VARIANCE_FLOOR)
    if w[0] < -tol:
        raise ValueError(
            f"field covariance is not PSD (min eigenvalue {w[0]:.3e})"
        )
    acc = 0.0
    for k in range(op.K):
        for l in range(op.K):
            acc += op.v[k] * op.v[l] * i2(kind, _field_cov(op, (("s", k), ("s", l))))
        for m in range(op.M):
            acc -= 2.0 * op.v[k] * op.vtilde[m] * i2(
                kind, _field_cov(op, (("s", k), ("t", m))), kind2=teacher_kind
            )
    for n in range(op.M):
        for m in range(op.M):
            acc += op.vtilde[n] * op.vtilde[m] * i2(
                teacher_kind, _field_cov(op, (("t", n), ("t", m)))
            )
    value = 0.5 * acc
    if value < 0.0:
        if value < -1e-12:
            raise ValueError(f"pmse evaluated to {value:.3e} < -1e-12")
        value = 0.0
    return value


def _record_steps(cfg: OdeConfig) -> set:
    n_steps = round(cfg.t_max / cfg.dt)
    if cfg.record_times is not None:
        steps = {min(max(round(t / cfg.dt), 0), n_steps) for t in cfg.record_times}
    else:
        every = max(1, round(cfg.record_every / cfg.dt))
        steps = set(range(0, n_steps + 1, every))
    steps.update((0, n_steps))
    return steps


def integrate(state: OdeState, cfg: OdeConfig):
    """Run Euler steps to t_max, returning TrajectoryPoints at the schedule."""
    n_steps = round(cfg.t_max / cfg.dt)
    record = _record_steps(cfg)
    points = []
    for step in range(n_steps + 1):
        if step in record:
            op = order_params(state)
            points.append(TrajectoryPoint(
                t=state.t,
                pmse=pmse(op, state.kind, state.teacher_kind),
                Q=op.Q,
                R=op.R,
                v=op.v.copy(),
            ))
        if step < n_steps:
            state = ode_step(state, cfg)
    return points


# ---------------------------------------------------------------------------
# trajectory persistence
# ---------------------------------------------------------------------------

def trajectory_header(K: int, M: int, extra=()) -> list:
    cols = ["t", "pmse"]
    cols += [f"Q{k + 1}{l + 1}" for k in range(K) for l in range(k, K)]
    cols += [f"R{k + 1}{m + 1}" for k in range(K) for m in range(M)]
    cols += [f"v{k + 1}" for k in range(K)]
    return cols + list(extra)


def _point_row(p: TrajectoryPoint) -> list:
    K, M = p.Q.shape[0], p.R.shape[1]
    row = [p.t, p.pmse]
    row += [p.Q[k, l] for k in range(K) for l in range(k, K)]
    row += [p.R[k, m] for k in range(K) for m in range(M)]
    row += list(p.v)
    return row


def write_trajectory_csv(points, path) -> None:
    if not points:
        raise ValueError("empty trajectory")
    K, M = points[0].Q.shape[0], points[0].R.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(trajectory_header(K, M))
        for p in points:
            writer.writerow([repr(float(x)) for x in _point_row(p)])
