"""Nonlinearities and the low-dimensional Gaussian integrals built on them.

All analytical machinery in this package closes over expectations of
products of an activation g, its derivative g', and bare Gaussian fields
under small covariance blocks:

    i2 = E[g(x1) g(x2)],  i3 = E[g'(x1) x2 g(x3)],  i4 = E[g'(x1) g'(x2) g(x3) g(x4)].

For the error-function activation (here always x -> erf(x/sqrt(2))) these
have exact closed forms; every other kind falls back to seeded Monte
Carlo.  The module also exposes the first three Hermite coefficients of
each nonlinearity, which control how much of it survives a wide random
projection.
"""
from __future__ import annotations

import math
from enum import Enum
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np
from scipy import special

from .seeds import rng_for_chunk

__all__ = [
    "ActivationKind",
    "HermiteTriple",
    "evaluate",
    "deriv",
    "hermite_coefficients",
    "gauss_hermite_nodes",
    "gaussian_expectation_mc",
    "i2",
    "i3",
    "i4",
]


class ActivationKind(str, Enum):
    LINEAR = "linear"
    ERF = "erf"  # x -> erf(x / sqrt(2))
    SIGN = "sign"
    RELU = "relu"
    TANH = "tanh"


#: Kinds with eval(-x) = -eval(x) exactly.
ODD_KINDS = frozenset(
    {ActivationKind.LINEAR, ActivationKind.ERF, ActivationKind.SIGN, ActivationKind.TANH}
)

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def evaluate(kind: ActivationKind, u):
    """Pointwise activation value; scalar or ndarray input."""
    u = np.asarray(u, dtype=float)
    if kind == ActivationKind.LINEAR:
        return u.copy()
    if kind == ActivationKind.ERF:
        return special.erf(u / math.sqrt(2.0))
    if kind == ActivationKind.SIGN:
        return np.sign(u)
    if kind == ActivationKind.RELU:
        return np.maximum(u, 0.0)
    if kind == ActivationKind.TANH:
        return np.tanh(u)
    raise ValueError(f"unknown activation kind {kind!r}")


def deriv(kind: ActivationKind, u):
    """Pointwise derivative; Sign uses the weak-derivative convention (0)."""
    u = np.asarray(u, dtype=float)
    if kind == ActivationKind.LINEAR:
        return np.ones_like(u)
    if kind == ActivationKind.ERF:
        return _SQRT_2_OVER_PI * np.exp(-0.5 * u * u)
    if kind == ActivationKind.SIGN:
        return np.zeros_like(u)
    if kind == ActivationKind.RELU:
        return (u > 0.0).astype(float)
    if kind == ActivationKind.TANH:
        t = np.tanh(u)
        return 1.0 - t * t
    raise ValueError(f"unknown activation kind {kind!r}")


class HermiteTriple(NamedTuple):
    h1: float
    h2: float
    h3: float


def gauss_hermite_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights (u, w) with sum(w * f(u)) ~ E[f(U)], U standard normal."""
    x, w = special.roots_hermite(n)
    return math.sqrt(2.0) * x, w / math.sqrt(math.pi)


@lru_cache(maxsize=None)
def hermite_coefficients(kind: ActivationKind) -> HermiteTriple:
    """(E[s(u)u], E[s(u)(u^2-1)]/sqrt2, E[s(u)(u^3-3u)]/sqrt6), u ~ N(0,1).

    Closed forms for all kinds except Tanh, which uses a 200-node
    Gauss-Hermite rule (the integrand is smooth, so the rule is accurate
    to machine precision there).
    """
    if kind == ActivationKind.LINEAR:
        return HermiteTriple(1.0, 0.0, 0.0)
    if kind == ActivationKind.SIGN:
        return HermiteTriple(_SQRT_2_OVER_PI, 0.0, -_SQRT_2_OVER_PI / math.sqrt(6.0))
    if kind == ActivationKind.ERF:
        s = 1.0 / math.sqrt(math.pi)
        return HermiteTriple(s, 0.0, -0.5 * s / math.sqrt(6.0))
    if kind == ActivationKind.RELU:
        return HermiteTriple(0.5, 0.5 / math.sqrt(math.pi), 0.0)
    if kind == ActivationKind.TANH:
        u, w = gauss_hermite_nodes(200)
        t = np.tanh(u)
        h1 = float(np.sum(w * t * u))
        h3 = float(np.sum(w * t * (u**3 - 3.0 * u)) / math.sqrt(6.0))
        return HermiteTriple(h1, 0.0, h3)  # h2 = 0 by oddness
    raise ValueError(f"unknown activation kind {kind!r}")


# ---------------------------------------------------------------------------
# Monte Carlo oracle
# ---------------------------------------------------------------------------

_MC_CHUNK = 1 << 16


def _validate_covariance(C: np.ndarray, d: int | None = None) -> np.ndarray:
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"covariance must be square, got shape {C.shape}")
    if d is not None and C.shape[0] != d:
        raise ValueError(f"covariance must be {d}x{d}, got {C.shape[0]}x{C.shape[0]}")
    scale = max(1.0, float(np.max(np.abs(C))))
    if np.max(np.abs(C - C.T)) > 1e-10 * scale:
        raise ValueError("covariance must be symmetric")
    if np.min(np.linalg.eigvalsh(C)) < -1e-10 * scale:
        raise ValueError("covariance is not positive semi-definite")
    return C


def _gaussian_factor(C: np.ndarray) -> np.ndarray:
    """L with L L^T = C; Cholesky when possible, eigen factor for singular C."""
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        lam, V = np.linalg.eigh(C)
        return V * np.sqrt(np.clip(lam, 0.0, None))


def gaussian_expectation_mc(
    f: Callable[[np.ndarray], np.ndarray],
    C,
    n: int,
    seed: int,
) -> tuple[float, float]:
    """Sample mean and standard error of f under N(0, C).

    `f` maps an (m, d) array of samples to m values.  Sampling is chunked
    with one sub-stream per chunk, so the result is bit-reproducible from
    (seed, n) alone.
    """
    C = _validate_covariance(C)
    n = int(n)
    if n < 2:
        raise ValueError("need n >= 2 samples")
    L = _gaussian_factor(C)
    d = C.shape[0]
    s1 = 0.0
    s2 = 0.0
    done = 0
    chunk = 0
    while done < n:
        m = min(_MC_CHUNK, n - done)
        z = rng_for_chunk(seed, chunk).standard_normal((m, d))
        vals = np.asarray(f(z @ L.T), dtype=float)
        s1 += float(np.sum(vals))
        s2 += float(np.sum(vals * vals))
        done += m
        chunk += 1
    mean = s1 / n
    var = max(s2 / n - mean * mean, 0.0)
    return mean, math.sqrt(var / n)


# ---------------------------------------------------------------------------
# I2 / I3 / I4
# ---------------------------------------------------------------------------


def _check_lambda(value: float, name: str) -> float:
    if value <= 1e-14:
        raise ValueError(f"singular covariance: {name} = {value:.3e} <= 1e-14")
    return value


def _asin_arg(x: float) -> float:
    if abs(x) > 1.0 + 1e-12:
        raise ValueError(f"arcsine argument {x} outside [-1, 1]")
    return min(1.0, max(-1.0, x))


def i2(kind: ActivationKind, C, *, kind2: ActivationKind | None = None,
       mc_n: int = 1_000_000, seed: int = 0) -> float:
    """E[g(x1) g2(x2)] under N(0, C); closed form when both kinds are Erf."""
    C = _validate_covariance(C, 2)
    kind2 = kind if kind2 is None else kind2
    if kind == ActivationKind.ERF and kind2 == ActivationKind.ERF:
        s = C[0, 1] / math.sqrt((1.0 + C[0, 0]) * (1.0 + C[1, 1]))
        return (2.0 / math.pi) * math.asin(_asin_arg(s))
    est, _ = gaussian_expectation_mc(
        lambda x: evaluate(kind, x[:, 0]) * evaluate(kind2, x[:, 1]), C, mc_n, seed
    )
    return est


def i3(kind: ActivationKind, C, *, kind3: ActivationKind | None = None,
       mc_n: int = 1_000_000, seed: int = 0) -> float:
    """E[g'(x1) x2 g3(x3)] under N(0, C); closed form for Erf."""
    C = _validate_covariance(C, 3)
    kind3 = kind if kind3 is None else kind3
    if kind == ActivationKind.ERF and kind3 == ActivationKind.ERF:
        lam3 = _check_lambda((1.0 + C[0, 0]) * (1.0 + C[2, 2]) - C[0, 2] ** 2, "Lambda3")
        num = C[1, 2] * (1.0 + C[0, 0]) - C[0, 1] * C[0, 2]
        return (2.0 / math.pi) * num / ((1.0 + C[0, 0]) * math.sqrt(lam3))
    est, _ = gaussian_expectation_mc(
        lambda x: deriv(kind, x[:, 0]) * x[:, 1] * evaluate(kind3, x[:, 2]),
        C, mc_n, seed,
    )
    return est


def i4(kind: ActivationKind, C, *, kind3: ActivationKind | None = None,
       kind4: ActivationKind | None = None, mc_n: int = 1_000_000,
       seed: int = 0) -> float:
    """E[g'(x1) g'(x2) g3(x3) g4(x4)] under N(0, C); closed form for Erf."""
    C = _validate_covariance(C, 4)
    kind3 = kind if kind3 is None else kind3
    kind4 = kind if kind4 is None else kind4
    if kind == ActivationKind.ERF and kind3 == ActivationKind.ERF and kind4 == ActivationKind.ERF:
        c11, c22, c33, c44 = C[0, 0], C[1, 1], C[2, 2], C[3, 3]
        c12, c13, c14 = C[0, 1], C[0, 2], C[0, 3]
        c23, c24, c34 = C[1, 2], C[1, 3], C[2, 3]
        lam4 = _check_lambda((1.0 + c11) * (1.0 + c22) - c12**2, "Lambda4")
        lam0 = (lam4 * c34 - c23 * c24 * (1.0 + c11) - c13 * c14 * (1.0 + c22)
                + c12 * c13 * c24 + c12 * c14 * c23)
        lam1 = _check_lambda(
            lam4 * (1.0 + c33) - c23**2 * (1.0 + c11) - c13**2 * (1.0 + c22)
            + 2.0 * c12 * c13 * c23, "Lambda1")
        lam2 = _check_lambda(
            lam4 * (1.0 + c44) - c24**2 * (1.0 + c11) - c14**2 * (1.0 + c22)
            + 2.0 * c12 * c14 * c24, "Lambda2")
        arg = _asin_arg(lam0 / math.sqrt(lam1 * lam2))
        return (4.0 / math.pi**2) * math.asin(arg) / math.sqrt(lam4)
    est, _ = gaussian_expectation_mc(
        lambda x: (deriv(kind, x[:, 0]) * deriv(kind, x[:, 1])
                   * evaluate(kind3, x[:, 2]) * evaluate(kind4, x[:, 3])),
        C, mc_n, seed,
    )
    return est
