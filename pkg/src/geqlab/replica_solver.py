"""Asymptotic theory of full-batch generalized linear learning on features.

Six coupled scalars (V, q, m, Vhat, qhat, mhat) characterize the minimizer
of a convex empirical risk over features whose second moments are Omega
(feature-feature) and Phi Phi^T (feature-latent, squared).  The fixed point
alternates between

  * a channel half: scalar Gaussian expectations over the label y and the
    effective field omega = sqrt(q) xi, built from the loss's proximal
    operator and the teacher's conditional law of y, and
  * a spectral half: traces of resolvents of Omega evaluated in its
    eigenbasis, where the data geometry enters.

`solve` iterates the two halves with damping, and `test_error` turns the
converged overlaps (rho, m, q) into a prediction error for a given pair of
output nonlinearities.

Conventions: all matrices are feature-space (Ntilde x Ntilde); alpha =
samples / Ntilde, delta = D / Ntilde, and the ridge strength is `lam`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.special import erfinv, expit, ndtr, roots_hermite

from .activations import ActivationKind, evaluate, gaussian_expectation_mc, i2

__all__ = [
    "Loss",
    "ChannelSpec",
    "SpectralInputs",
    "ReplicaState",
    "ReplicaResult",
    "teacher_channel",
    "proximal",
    "prox_derivative",
    "hat_update",
    "trace_update",
    "solve",
    "solve_sweep",
    "test_error",
    "SWEEP_CSV_HEADER",
    "write_sweep_csv",
]

_SUPPORTED_TEACHERS = (ActivationKind.LINEAR, ActivationKind.SIGN, ActivationKind.ERF)
_Q_FLOOR = 1e-14
_VT_FLOOR = 1e-12


def _gauss_hermite(n: int):
    nodes, weights = roots_hermite(n)
    return nodes * math.sqrt(2.0), weights / math.sqrt(math.pi)


# 99 nodes integrate the smooth channel integrands well past 1e-10
_XI, _WXI = _gauss_hermite(99)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _phi(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


class Loss(str, Enum):
    SQUARE = "square"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class ChannelSpec:
    loss: Loss
    teacher_kind: ActivationKind
    rho: float = 1.0

    def __post_init__(self):
        if self.teacher_kind not in _SUPPORTED_TEACHERS:
            raise ValueError(f"unsupported teacher kind: {self.teacher_kind}")
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")


@dataclass(frozen=True)
class SpectralInputs:
    Omega: np.ndarray
    PhiPhiT: np.ndarray
    lam: float
    alpha: float
    delta: float

    def __post_init__(self):
        Omega = np.asarray(self.Omega, dtype=float)
        PhiPhiT = np.asarray(self.PhiPhiT, dtype=float)
        object.__setattr__(self, "Omega", Omega)
        object.__setattr__(self, "PhiPhiT", PhiPhiT)
        for name, mat in (("Omega", Omega), ("PhiPhiT", PhiPhiT)):
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise ValueError(f"{name} must be square, got {mat.shape}")
            if np.abs(mat - mat.T).max() > 1e-8 * (1.0 + np.abs(mat).max()):
                raise ValueError(f"{name} must be symmetric")
        if Omega.shape != PhiPhiT.shape:
            raise ValueError(
                f"shape mismatch: Omega {Omega.shape}, PhiPhiT {PhiPhiT.shape}"
            )
        if self.lam <= 0:
            raise ValueError(f"ridge strength must be positive, got {self.lam}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        self._spectrum  # eigendecomposition doubles as the PSD check

    @property
    def n_features(self) -> int:
        return self.Omega.shape[0]

    @cached_property
    def _spectrum(self):
        """(omega eigenvalues, PhiPhiT diagonal in the omega eigenbasis)."""
        w, U = np.linalg.eigh(self.Omega)
        if w[0] < -1e-8 * max(np.trace(self.Omega), 1.0):
            raise ValueError(f"Omega is not PSD (min eigenvalue {w[0]:.3e})")
        s = np.einsum("ij,ij->j", U, self.PhiPhiT @ U)
        if s.min() < -1e-8 * max(np.trace(self.PhiPhiT), 1.0):
            raise ValueError("PhiPhiT is not PSD in the Omega eigenbasis")
        return np.clip(w, 0.0, None), np.clip(s, 0.0, None)


@dataclass(frozen=True)
class ReplicaState:
    V: float
    q: float
    m: float
    Vhat: float
    qhat: float
    mhat: float


@dataclass(frozen=True)
class ReplicaResult:
    state: ReplicaState
    converged: bool
    iterations: int
    residuals: tuple


# ---------------------------------------------------------------------------
# channel half
# ---------------------------------------------------------------------------

def teacher_channel(spec: ChannelSpec, y, omega_t, V_t):
    """Partition function Ztilde(y | omega_t, V_t) and its omega_t-derivative.

    Ztilde is the conditional law of the label given the effective teacher
    field: a normal CDF for Sign labels, the normal density for Linear, and
    the pushforward density through erf(x / sqrt 2) for Erf.
    """
    omega_t = np.asarray(omega_t, dtype=float)
    if V_t <= 0:
        raise ValueError(f"V_t must be positive, got {V_t}")
    root_vt = math.sqrt(V_t)
    if spec.teacher_kind is ActivationKind.SIGN:
        if y not in (-1, 1):
            raise ValueError(f"Sign teacher labels are +-1, got {y}")
        arg = y * omega_t / root_vt
        return ndtr(arg), y * _phi(arg) / root_vt
    if spec.teacher_kind is ActivationKind.LINEAR:
        z = (y - omega_t) / root_vt
        Zt = _phi(z) / root_vt
        return Zt, Zt * (y - omega_t) / V_t
    # Erf: y = erf(nu / sqrt 2) for nu ~ N(omega_t, V_t)
    y = float(y)
    if abs(y) >= 1.0:
        zero = np.zeros_like(omega_t)
        return zero, zero
    nu = math.sqrt(2.0) * erfinv(y)
    jac = math.sqrt(math.pi / 2.0) * math.exp(0.5 * nu * nu)
    Zt = _phi((nu - omega_t) / root_vt) / root_vt * jac
    return Zt, Zt * (nu - omega_t) / V_t


def proximal(loss: Loss, y, omega, V):
    """eta = argmin_x (x - omega)^2 / (2V) + loss(y, x), elementwise."""
    omega = np.asarray(omega, dtype=float)
    if V <= 0:
        raise ValueError(f"V must be positive, got {V}")
    if loss is Loss.SQUARE:
        return (omega + V * np.asarray(y)) / (1.0 + V)
    # logistic: safeguarded Newton on the stationarity
    #   g(x) = x - omega - V y (1 - sigma(y x)) = 0,
    # which is strictly increasing with the root bracketed by omega and
    # omega + V y (closed interval: in the sigmoid tails the root sits on an
    # endpoint to float precision).  A Newton step is accepted only if it
    # stays inside the bracket and at least halves the previous step;
    # otherwise bisect.  Plain Newton ping-pongs across the flat tails for
    # large V |omega|.
    y = np.asarray(y, dtype=float)
    lo = np.minimum(omega, omega + V * y)
    hi = np.maximum(omega, omega + V * y)
    # one fixed-point sweep as warm start: exact in the sigmoid tails,
    # where the minimizer coincides with a bracket endpoint in floats
    x = omega + V * y * (1.0 - expit(y * omega))
    dx_old = hi - lo
    for _ in range(100):
        s = expit(y * x)
        grad = x - omega - V * y * (1.0 - s)
        if np.abs(grad).max() <= 1e-12:
            return x
        lo = np.where(grad < 0, x, lo)
        hi = np.where(grad > 0, x, hi)
        slope = 1.0 + V * s * (1.0 - s)
        newton = x - grad / slope
        accept = (newton >= lo) & (newton <= hi) & (
            np.abs(2.0 * grad) <= np.abs(dx_old * slope)
        )
        x_new = np.where(accept, newton, 0.5 * (lo + hi))
        dx_old = np.abs(x_new - x)
        x = x_new
    s = expit(y * x)
    grad = x - omega - V * y * (1.0 - s)
    if np.abs(grad).max() > 1e-10:
        raise RuntimeError("proximal Newton did not converge")
    return x


def prox_derivative(loss: Loss, y, eta, V):
    """d eta / d omega by implicit differentiation of the stationarity."""
    if loss is Loss.SQUARE:
        return np.full_like(np.asarray(eta, dtype=float), 1.0 / (1.0 + V))
    s = expit(np.asarray(y) * np.asarray(eta))
    return 1.0 / (1.0 + V * s * (1.0 - s))


def _label_sum(channel: ChannelSpec, omega, omega_t, V_t):
    """Yield (prior weight, Ztilde, dZtilde/domega_t, y) per label branch.

    Sign labels enumerate {+1, -1} exactly; continuous teachers integrate
    over the field nu ~ N(omega_t, V_t) with y = g(nu), in which case the
    score (nu - omega_t)/V_t plays the role of dZtilde/Ztilde.
    """
    if channel.teacher_kind is ActivationKind.SIGN:
        for y in (1.0, -1.0):
            Zt, dZt = teacher_channel(channel, y, omega_t, V_t)
            yield 1.0, Zt, dZt, np.full_like(omega, y)
    else:
        root = math.sqrt(V_t)
        for u, wu in zip(_XI, _WXI):
            nu = omega_t + root * u
            y = evaluate(channel.teacher_kind, nu)
            score = (nu - omega_t) / V_t
            ones = np.ones_like(omega)
            yield wu, ones, score, y


def hat_update(state: ReplicaState, inputs: SpectralInputs, channel: ChannelSpec):
    """Channel half of the fixed point: (Vhat, qhat, mhat) from (V, q, m)."""
    alpha, delta = inputs.alpha, inputs.delta
    V, q, m = state.V, state.q, state.m
    if V <= 0:
        raise ValueError(f"V must be positive, got {V}")
    if alpha == 0.0:
        return 0.0, 0.0, 0.0
    if q > _Q_FLOOR:
        omega = math.sqrt(q) * _XI
        omega_t = (m / math.sqrt(q)) * _XI
        V_t = channel.rho - m * m / q
    else:
        omega = np.zeros_like(_XI)
        omega_t = np.zeros_like(_XI)
        V_t = channel.rho
    V_t = max(V_t, _VT_FLOOR)

    vhat_acc = 0.0
    qhat_acc = 0.0
    mhat_acc = 0.0
    for prior, Zt, dZt, y in _label_sum(channel, omega, omega_t, V_t):
        eta = proximal(channel.loss, y, omega, V)
        f_out = (eta - omega) / V
        one_minus = (1.0 - prox_derivative(channel.loss, y, eta, V)) / V
        vhat_acc += prior * np.dot(_WXI, Zt * one_minus)
        qhat_acc += prior * np.dot(_WXI, Zt * f_out * f_out)
        mhat_acc += prior * np.dot(_WXI, dZt * f_out)
    out = (
        alpha * vhat_acc,
        alpha * qhat_acc,
        alpha / math.sqrt(delta) * mhat_acc,
    )
    if not all(math.isfinite(x) for x in out):
        raise ValueError(f"non-finite channel quadrature: {out}")
    return out


# ---------------------------------------------------------------------------
# spectral half
# ---------------------------------------------------------------------------

def trace_update(hats, inputs: SpectralInputs):
    """Spectral half: (V, q, m) as resolvent traces in the Omega eigenbasis."""
    Vhat, qhat, mhat = hats
    w, s = inputs._spectrum
    n = inputs.n_features
    denom = inputs.lam + Vhat * w
    if np.abs(denom).min() < 1e-14:
        raise ValueError("singular resolvent: lam + Vhat * omega ~ 0")
    V = float(np.sum(w / denom) / n)
    q = float(np.sum((qhat * w + mhat**2 * s) * w / denom**2) / n)
    m = float(mhat / math.sqrt(inputs.delta) * np.sum(s / denom) / n)
    return V, q, m


def solve(inputs: SpectralInputs, channel: ChannelSpec, *, damping: float = 0.5,
          tol: float = 1e-8, max_iter: int = 5000) -> ReplicaResult:
    """Damped alternation of the channel and spectral halves.

    new <- (1 - damping) * update + damping * old for all six scalars;
    converged when the largest absolute change drops below tol.
    """
    if not 0.0 <= damping < 1.0:
        raise ValueError(f"damping must be in [0, 1), got {damping}")
    V, q, m = 1.0, 0.1, 0.01
    hats = hat_update(ReplicaState(V, q, m, 0.0, 0.0, 0.0), inputs, channel)
    residuals = []
    for iteration in range(1, max_iter + 1):
        new_traces = trace_update(hats, inputs)
        V1 = (1.0 - damping) * new_traces[0] + damping * V
        q1 = (1.0 - damping) * new_traces[1] + damping * q
        m1 = (1.0 - damping) * new_traces[2] + damping * m
        raw = hat_update(ReplicaState(V1, q1, m1, *hats), inputs, channel)
        hats1 = tuple(
            (1.0 - damping) * r + damping * h for r, h in zip(raw, hats)
        )
        residual = max(
            abs(V1 - V), abs(q1 - q), abs(m1 - m),
            *(abs(a - b) for a, b in zip(hats1, hats)),
        )
        residuals.append(residual)
        V, q, m = V1, q1, m1
        hats = hats1
        if residual <= tol:
            return ReplicaResult(
                ReplicaState(V, q, m, *hats), True, iteration, tuple(residuals)
            )
    return ReplicaResult(
        ReplicaState(V, q, m, *hats), False, max_iter, tuple(residuals)
    )


# ---------------------------------------------------------------------------
# test error and sweeps
# ---------------------------------------------------------------------------

def test_error(rho: float, m: float, q: float, student_kind: ActivationKind,
               teacher_kind: ActivationKind, *, mc_n: int = 1_000_000,
               seed: int = 0) -> float:
    """eps_g = (1/2) E[(g_teacher(nu) - g_student(lambda))^2] with
    (nu, lambda) centered Gaussian, Var nu = rho, Var lambda = q, Cov = m."""
    Sigma = np.array([[rho, m], [m, q]])
    evals = np.linalg.eigvalsh(Sigma)
    if evals[0] < -1e-10 * max(rho + q, 1.0):
        raise ValueError(f"overlap matrix is not PSD: eigenvalues {evals}")
    pair = (student_kind, teacher_kind)
    if pair == (ActivationKind.LINEAR, ActivationKind.LINEAR):
        return 0.5 * (rho - 2.0 * m + q)
    if pair == (ActivationKind.SIGN, ActivationKind.SIGN):
        if q <= 0.0:
            return 1.0  # a vanishing-variance sign output is a coin flip
        corr = min(max(m / math.sqrt(rho * q), -1.0), 1.0)
        return (2.0 / math.pi) * math.acos(corr)
    if pair == (ActivationKind.ERF, ActivationKind.ERF):
        tt = i2(ActivationKind.ERF, [[rho, rho], [rho, rho]])
        ss = i2(ActivationKind.ERF, [[q, q], [q, q]])
        st = i2(ActivationKind.ERF, [[q, m], [m, rho]])
        return 0.5 * (tt + ss - 2.0 * st)
    est, _ = gaussian_expectation_mc(
        lambda x: 0.5 * (evaluate(teacher_kind, x[:, 0])
                         - evaluate(student_kind, x[:, 1])) ** 2,
        [[rho, m], [m, q]], mc_n, seed,
    )
    return est


SWEEP_CSV_HEADER = "alpha,lambda,delta,V,q,m,Vhat,qhat,mhat,eps_g,converged,iters"


def solve_sweep(inputs: SpectralInputs, channel: ChannelSpec, alpha_grid,
                student_kind: ActivationKind, **solve_kwargs):
    """Solve per alpha and tabulate rows in the sweep CSV column order."""
    rows = []
    for alpha in alpha_grid:
        result = solve(replace(inputs, alpha=float(alpha)), channel, **solve_kwargs)
        st = result.state
        rows.append({
            "alpha": float(alpha), "lambda": inputs.lam, "delta": inputs.delta,
            "V": st.V, "q": st.q, "m": st.m,
            "Vhat": st.Vhat, "qhat": st.qhat, "mhat": st.mhat,
            "eps_g": test_error(channel.rho, st.m, st.q, student_kind,
                                channel.teacher_kind),
            "converged": result.converged, "iters": result.iterations,
        })
    return rows


def write_sweep_csv(rows, path) -> None:
    names = SWEEP_CSV_HEADER.split(",")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in rows:
            writer.writerow([_format_cell(row[name]) for name in names])


def _format_cell(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)
