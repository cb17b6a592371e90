"""Audit of the Gaussian-equivalence error terms for one-layer generators.

For data x = sigma(Ac) the joint law of the student/teacher fields departs
from a Gaussian with matched moments by an amount controlled by four terms
built from rho = A A^T, its off-diagonal part rho~, and the equivalence
matrices

    M1 = (1/sqrt N) (h1^2 rho~^2 + h2^2 rho~^2 o rho),
    M2 = h2^2 (rho~ o rho~)^2 + h3^2 (rho~ o rho~)^2 o rho,

with o the entrywise product and h_k the Hermite coefficients of sigma.
This module evaluates the terms exactly for given weights, reproduces the
closed-form spectra available when rho = mu^2 J + (1 - mu^2) I (J the
all-ones matrix), runs eigenvalue scaling studies over N, and measures an
empirical Gaussianity proxy (sliced skewness/kurtosis) on field samples.

The absolute constant multiplying the four-term sum is unknown, so
bound_total is a comparative diagnostic, not a certified bound.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .activations import ActivationKind, HermiteTriple, hermite_coefficients
from .seeds import derive_seed
from .generators import WeightLaw, sample_weights

__all__ = [
    "EigSummary",
    "GetReport",
    "KSpectrum",
    "CumulantReport",
    "ScalingRow",
    "build_equivalence_matrices",
    "k_matrices",
    "get_bound",
    "deterministic_k_spectra",
    "scaling_study",
    "write_scaling_csv",
    "gaussianity_cumulants",
]

K_NAMES = ("K11", "K12", "K21", "K22")
SCALING_CSV_HEADER = "matrix,N,seed,lambda1,lambda2,lambda6,ones_corr"


@dataclass(frozen=True)
class EigSummary:
    """Spectral fingerprint of one audit matrix.

    ones_correlation is the Rayleigh quotient along the all-ones direction,
    (1/N) 1^T M 1; it approaches lambda1 exactly when the leading
    eigenvector aligns with 1/sqrt(N).  leading_cosine is that alignment
    itself, |v1 . 1| / sqrt(N).
    """

    lambda1: float
    lambda2: float
    lambda6: float
    ones_correlation: float
    leading_cosine: float


@dataclass(frozen=True)
class GetReport:
    rho: np.ndarray
    rho_tilde: np.ndarray
    M1: np.ndarray
    M2: np.ndarray
    bound_terms: dict
    bound_total: float
    eig_summary: dict


@dataclass(frozen=True)
class KSpectrum:
    """One K matrix with its all-ones/identity decomposition K = alpha J + beta I."""

    matrix: np.ndarray
    alpha: float
    beta: float
    eigenvalues_numeric: np.ndarray  # descending

    @property
    def eigenvalues_closed(self) -> np.ndarray:
        n = self.matrix.shape[0]
        out = np.full(n, self.beta)
        out[0] = self.alpha * n + self.beta
        return out

    @property
    def leading_cosine(self) -> float:
        return _eig_summary(self.matrix).leading_cosine


@dataclass(frozen=True)
class ScalingRow:
    matrix: str
    N: int
    seed: int
    lambda1: float
    lambda2: float
    lambda6: float
    ones_corr: float


@dataclass(frozen=True)
class CumulantReport:
    directions: np.ndarray        # n_dirs x dims unit vectors
    skewness: np.ndarray          # n_dirs, nan where degenerate
    excess_kurtosis: np.ndarray   # n_dirs, nan where degenerate
    degenerate: np.ndarray        # n_dirs bools (variance < 1e-12)
    n_samples: int

    @property
    def max_abs_skewness(self) -> float:
        return float(np.nanmax(np.abs(self.skewness)))

    @property
    def max_abs_kurtosis(self) -> float:
        return float(np.nanmax(np.abs(self.excess_kurtosis)))


# ---------------------------------------------------------------------------
# equivalence matrices
# ---------------------------------------------------------------------------

def k_matrices(rho: np.ndarray) -> dict:
    """The four building-block matrices of M1 and M2, from rho = A A^T."""
    n = rho.shape[0]
    rho_tilde = rho.copy()
    np.fill_diagonal(rho_tilde, 0.0)
    sq = rho_tilde @ rho_tilde
    had = rho_tilde * rho_tilde
    had_sq = had @ had
    root_n = np.sqrt(n)
    return {
        "K11": sq / root_n,
        "K12": sq * rho / root_n,
        "K21": had_sq,
        "K22": had_sq * rho,
    }


def build_equivalence_matrices(A: np.ndarray, h: HermiteTriple):
    """Compute (rho, rho_tilde, M1, M2) for generator weights A (N x D).

    Rows of A are expected to be unit vectors; a deviation above 1e-6
    triggers a warning because every closed form downstream assumes unit
    diagonal of rho.
    """
    A = np.asarray(A, dtype=float)
    row_norms = np.linalg.norm(A, axis=1)
    worst = float(np.max(np.abs(row_norms - 1.0)))
    if worst > 1e-6:
        warnings.warn(f"rows of A deviate from unit norm by up to {worst:.2e}")
    rho = A @ A.T
    rho_tilde = rho.copy()
    np.fill_diagonal(rho_tilde, 0.0)
    K = k_matrices(rho)
    M1 = h.h1**2 * K["K11"] + h.h2**2 * K["K12"]
    M2 = h.h2**2 * K["K21"] + h.h3**2 * K["K22"]
    return rho, rho_tilde, M1, M2


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(M)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _eig_summary(M: np.ndarray) -> EigSummary:
    n = M.shape[0]
    w, V = np.linalg.eigh(M)
    v1 = V[:, -1]
    return EigSummary(
        lambda1=float(w[-1]),
        lambda2=float(w[-2]) if n >= 2 else float("nan"),
        lambda6=float(w[-6]) if n >= 6 else float("nan"),
        ones_correlation=float(np.sum(M) / n),
        leading_cosine=float(abs(np.sum(v1)) / np.sqrt(n)),
    )


def _matnorm(M: np.ndarray, norm: str) -> float:
    if norm == "spectral":
        return float(np.linalg.norm(M, 2))
    if norm == "frobenius":
        return float(np.linalg.norm(M))
    raise ValueError(f"unknown norm {norm!r}; use 'spectral' or 'frobenius'")


def get_bound(W: np.ndarray, Wt: np.ndarray, A: np.ndarray,
              kind: ActivationKind, *, norm: str = "spectral") -> GetReport:
    """Per-term breakdown of the Gaussianity departure for weights (W, Wt).

    t1 = ||(1/sqrt N) W M1^(1/2)||^2,  t2 = ||(1/sqrt N) W M2^(1/2)||,
    t3 = (1/sqrt N) ||(1/sqrt D) Wt A^T||^2,
    t4 = (1 + sum_{i != j} rho_ij^4) / sqrt N.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    Wt = np.atleast_2d(np.asarray(Wt, dtype=float))
    A = np.asarray(A, dtype=float)
    N, D = A.shape
    if W.shape[1] != N:
        raise ValueError(f"W has {W.shape[1]} columns, want N = {N}")
    if Wt.shape[1] != D:
        raise ValueError(f"Wt has {Wt.shape[1]} columns, want D = {D}")

    h = hermite_coefficients(kind)
    rho, rho_tilde, M1, M2 = build_equivalence_matrices(A, h)
    root_n = np.sqrt(N)
    t1 = _matnorm(W @ _psd_sqrt(M1) / root_n, norm) ** 2
    t2 = _matnorm(W @ _psd_sqrt(M2) / root_n, norm)
    t3 = _matnorm(Wt @ A.T / np.sqrt(D), norm) ** 2 / root_n
    t4 = (1.0 + float(np.sum(rho_tilde**4))) / root_n
    terms = {"t1": t1, "t2": t2, "t3": t3, "t4": t4}
    return GetReport(
        rho=rho,
        rho_tilde=rho_tilde,
        M1=M1,
        M2=M2,
        bound_terms=terms,
        bound_total=sum(terms.values()),
        eig_summary={"rho": _eig_summary(rho), "M1": _eig_summary(M1), "M2": _eig_summary(M2)},
    )


# ---------------------------------------------------------------------------
# deterministic spectra and scaling studies
# ---------------------------------------------------------------------------

def deterministic_k_spectra(mu: float, N: int, h: HermiteTriple | None = None) -> dict:
    """K matrices and exact spectra for rho = mu^2 J + (1 - mu^2) I.

    Each K is alpha J + beta I, whose eigensystem is elementary: lambda1 =
    alpha N + beta along the all-ones vector, every other eigenvalue beta.
    The numeric eigenvalues are computed from the assembled matrices so the
    two routes stay independent.  `h` is accepted for signature symmetry
    with the samplers; the K matrices do not depend on it.
    """
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu must lie in [0, 1], got {mu}")
    if N < 2:
        raise ValueError(f"need N >= 2, got {N}")
    rho = np.full((N, N), mu**2)
    np.fill_diagonal(rho, 1.0)
    K = k_matrices(rho)
    root_n = np.sqrt(N)
    m4 = mu**4
    # exact J/I coefficients of each K for this rho; K21 = mu^4 sqrt(N) K11
    # and K22 = mu^4 sqrt(N) K12
    beta12 = m4 * ((N - 2) * (1 - mu**2) + 1) / root_n
    coeffs = {
        "K11": (m4 * (N - 2) / root_n, m4 / root_n),
        "K12": (m4 * mu**2 * (N - 2) / root_n, beta12),
        "K21": (mu**8 * (N - 2), mu**8),
        "K22": (mu**8 * mu**2 * (N - 2), m4 * root_n * beta12),
    }
    out = {}
    for name in K_NAMES:
        alpha, beta = coeffs[name]
        w = np.linalg.eigvalsh(K[name])[::-1]
        out[name] = KSpectrum(matrix=K[name], alpha=alpha, beta=beta,
                              eigenvalues_numeric=w)
    return out


def scaling_study(beta_exponent: float, delta: float, N_list, seeds,
                  h: HermiteTriple | None = None):
    """Eigenvalue summaries of the K matrices for shifted-iid A over sizes.

    For each N, A is N x round(delta N) with entries (mu + sqrt(1-mu^2) Z)/sqrt(D)
    and mu = N^(-beta_exponent).  Returns (rows, slopes): one ScalingRow per
    (matrix, N, seed), and per-matrix log-log regression slopes of the
    seed-median lambda1 against N.
    """
    N_list = list(N_list)
    if N_list != sorted(N_list):
        raise ValueError("N_list must be ascending")
    rows = []
    for N in N_list:
        D = max(1, round(delta * N))
        mu = float(N) ** (-beta_exponent)
        law = WeightLaw.shifted(mu)
        for seed in seeds:
            A = sample_weights(law, N, D, derive_seed(seed, "scaling-A", N))
            K = k_matrices(A @ A.T)
            for name in K_NAMES:
                w = np.linalg.eigvalsh(K[name])
                rows.append(ScalingRow(
                    matrix=name, N=N, seed=seed, lambda1=float(w[-1]),
                    lambda2=float(w[-2]), lambda6=float(w[-6]) if N >= 6 else float("nan"),
                    ones_corr=float(np.sum(K[name]) / N),
                ))
    slopes = {}
    log_n = np.log(np.array(N_list, dtype=float))
    for name in K_NAMES:
        med = np.array([
            np.median([r.lambda1 for r in rows if r.matrix == name and r.N == N])
            for N in N_list
        ])
        if len(N_list) >= 2 and np.all(med > 0):
            slopes[name] = float(np.polyfit(log_n, np.log(med), 1)[0])
        else:
            slopes[name] = float("nan")
    return rows, slopes


def write_scaling_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCALING_CSV_HEADER.split(","))
        for r in rows:
            writer.writerow([r.matrix, r.N, r.seed, repr(r.lambda1),
                             repr(r.lambda2), repr(r.lambda6), repr(r.ones_corr)])


# ---------------------------------------------------------------------------
# empirical Gaussianity proxy
# ---------------------------------------------------------------------------

def gaussianity_cumulants(samples: np.ndarray, directions=None, *,
                          n_random: int = 64, seed: int = 0) -> CumulantReport:
    """Sliced skewness / excess kurtosis of field samples.

    `samples` is n x dims, one (lambda, nu) draw per row.  Directions
    default to the coordinate axes plus `n_random` seeded random unit
    vectors; every slice z = samples . alpha is summarized by its
    standardized third and fourth cumulants, which vanish under the
    matched-Gaussian null.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2:
        raise ValueError(f"samples must be 2-D, got shape {samples.shape}")
    n, dims = samples.shape
    if n < 1000:
        raise ValueError(f"need at least 1000 samples for cumulants, got {n}")
    if directions is None:
        rng = np.random.default_rng(derive_seed(seed, "cumulant-directions"))
        extra = rng.standard_normal((n_random, dims))
        extra /= np.linalg.norm(extra, axis=1, keepdims=True)
        directions = np.vstack([np.eye(dims), extra])
    else:
        directions = np.atleast_2d(np.asarray(directions, dtype=float))
        if directions.shape[1] != dims:
            raise ValueError(
                f"directions have {directions.shape[1]} entries, want {dims}"
            )
        norms = np.linalg.norm(directions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-8):
            raise ValueError("directions must be unit vectors")

    proj = samples @ directions.T
    variances = np.var(proj, axis=0)
    degenerate = variances < 1e-12
    skew = np.full(len(directions), np.nan)
    kurt = np.full(len(directions), np.nan)
    ok = ~degenerate
    if np.any(ok):
        skew[ok] = stats.skew(proj[:, ok], axis=0)
        kurt[ok] = stats.kurtosis(proj[:, ok], axis=0)
    return CumulantReport(
        directions=directions,
        skewness=skew,
        excess_kurtosis=kurt,
        degenerate=degenerate,
        n_samples=n,
    )
