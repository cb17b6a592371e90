"""Full-batch empirical risk minimization on generated data.

This is the simulation counterpart of the asymptotic fixed-point solver:
sample a finite dataset from a generative model, optionally push it through
a fixed feature map x~ = sigma(F x)/sqrt(Ntilde), fit a regularized linear
readout exactly, and measure the estimator both directly (Monte Carlo test
error) and through its overlaps with the teacher under estimated feature
moments.  Agreement between the two readings of the error is the
finite-size check of the theory.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve
from scipy.special import expit

from .activations import ActivationKind, evaluate
from .generators import Teacher, generate, latent_block, teacher_label
from .moments import MomentSet

_BATCH = 2048

ERM_CSV_HEADER = (
    "alpha,seed,Ntilde,lambda,eps_mc,eps_mc_stderr,m_star,q_star,eps_from_overlaps"
)


class FitConvergenceError(RuntimeError):
    """Raised when an iterative fit stops short of its gradient tolerance."""


@dataclass(frozen=True)
class FeatureMap:
    """Fixed projection x -> sigma(F x) / sqrt(Ntilde).

    F is stored as given; the usual convention keeps its rows near unit
    norm so the pre-activations stay O(1).
    """

    F: np.ndarray  # Ntilde x N
    kind: ActivationKind

    def __post_init__(self):
        F = np.asarray(self.F, dtype=float)
        if F.ndim != 2:
            raise ValueError(f"F must be a matrix, got ndim = {F.ndim}")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "kind", ActivationKind(self.kind))

    @property
    def n_features(self) -> int:
        return self.F.shape[0]

    @property
    def input_dim(self) -> int:
        return self.F.shape[1]

    def raw(self, x: np.ndarray) -> np.ndarray:
        """sigma(F x) without the readout normalization."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_dim:
            raise ValueError(
                f"feature map wants inputs of dim {self.input_dim}, got {x.shape[-1]}"
            )
        return evaluate(self.kind, x @ self.F.T)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.raw(x) / np.sqrt(self.n_features)


@dataclass(frozen=True)
class FeatureSource:
    """Generator followed by the raw feature map; quacks like a generator spec.

    Lets moment estimation treat the map as one more layer of the model.
    The composed output is sigma(F x) WITHOUT the 1/sqrt(Ntilde): the
    overlap and trace formulas carry that normalization in their explicit
    1/Ntilde prefactors, so the moments must be of the raw features.
    """

    gen: object
    fmap: FeatureMap

    def __post_init__(self):
        if self.fmap.input_dim != self.gen.output_dim:
            raise ValueError(
                f"feature map wants dim {self.fmap.input_dim}, "
                f"generator outputs {self.gen.output_dim}"
            )

    @property
    def latent_dim(self) -> int:
        return self.gen.latent_dim

    @property
    def output_dim(self) -> int:
        return self.fmap.n_features

    def apply(self, c: np.ndarray) -> np.ndarray:
        return self.fmap.raw(self.gen.apply(np.asarray(c, dtype=float)))


@dataclass(frozen=True)
class Dataset:
    Xf: np.ndarray  # T x Ntilde
    y: np.ndarray  # T
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        Xf = np.asarray(self.Xf, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if Xf.ndim != 2 or y.ndim != 1:
            raise ValueError("Xf must be T x Ntilde and y a vector")
        if Xf.shape[0] != y.shape[0]:
            raise ValueError(
                f"row mismatch: {Xf.shape[0]} feature rows vs {y.shape[0]} labels"
            )
        object.__setattr__(self, "Xf", Xf)
        object.__setattr__(self, "y", y)

    @property
    def T(self) -> int:
        return self.Xf.shape[0]

    @property
    def n_features(self) -> int:
        return self.Xf.shape[1]


def build_dataset(gen, teacher: Teacher, fmap: FeatureMap | None, T: int,
                  seed: int) -> Dataset:
    """Draw T i.i.d. samples; labels come from the teacher on the latent."""
    if T < 0:
        raise ValueError(f"T must be >= 0, got {T}")
    if teacher.latent_dim != gen.latent_dim:
        raise ValueError(
            f"teacher wants latent dim {teacher.latent_dim}, "
            f"generator has {gen.latent_dim}"
        )
    if fmap is not None and fmap.input_dim != gen.output_dim:
        raise ValueError(
            f"feature map wants dim {fmap.input_dim}, generator outputs {gen.output_dim}"
        )
    width = fmap.n_features if fmap is not None else gen.output_dim
    Xf = np.empty((T, width))
    y = np.empty(T)
    done = 0
    while done < T:
        m = min(_BATCH, T - done)
        c = latent_block(gen.latent_dim, seed, done, m)
        x = generate(gen, c)
        Xf[done:done + m] = fmap.apply(x) if fmap is not None else x
        y[done:done + m] = teacher_label(teacher, c)
        done += m
    meta = {
        "seed": seed,
        "T": T,
        "latent_dim": gen.latent_dim,
        "n_features": width,
        "feature_kind": fmap.kind.value if fmap is not None else None,
    }
    return Dataset(Xf=Xf, y=y, meta=meta)


# ---------------------------------------------------------------------------
# fits
# ---------------------------------------------------------------------------


def ridge_fit(ds: Dataset, lam: float) -> np.ndarray:
    """Exact minimizer of sum 1/2 (y - Xf w)^2 + lam/2 |w|^2."""
    if lam <= 0:
        raise ValueError(f"ridge strength must be positive, got {lam}")
    G = ds.Xf.T @ ds.Xf + lam * np.eye(ds.n_features)
    return solve(G, ds.Xf.T @ ds.y, assume_a="pos")


def _logistic_objective(ds: Dataset, lam: float, w: np.ndarray) -> float:
    z = ds.Xf @ w
    return float(np.logaddexp(0.0, -ds.y * z).sum() + 0.5 * lam * w @ w)


def logistic_fit(ds: Dataset, lam: float, tol: float = 1e-8,
                 max_iter: int = 100_000, w0: np.ndarray | None = None
                 ) -> np.ndarray:
    """Minimize sum log(1 + exp(-y Xf w)) + lam/2 |w|^2 to gradient norm tol.

    Newton steps with Armijo backtracking; the ridge term makes the problem
    strongly convex, so the minimizer is unique and the objective decreases
    monotonically along accepted steps.
    """
    if lam <= 0:
        raise ValueError(f"ridge strength must be positive, got {lam}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    if not np.all(np.isin(ds.y, (-1.0, 1.0))):
        raise ValueError("logistic labels must be +-1")
    w = np.zeros(ds.n_features) if w0 is None else np.asarray(w0, dtype=float).copy()
    if w.shape != (ds.n_features,):
        raise ValueError(f"w0 must have shape ({ds.n_features},)")
    obj = _logistic_objective(ds, lam, w)
    for _ in range(int(max_iter)):
        z = ds.Xf @ w
        s = expit(ds.y * z)  # P(correct label | margin)
        grad = ds.Xf.T @ (-ds.y * (1.0 - s)) + lam * w
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            return w
        curv = s * (1.0 - s)
        H = ds.Xf.T @ (ds.Xf * curv[:, None]) + lam * np.eye(ds.n_features)
        direction = -solve(H, grad, assume_a="pos")
        slope = float(grad @ direction)
        step = 1.0
        for _ in range(60):
            trial = w + step * direction
            trial_obj = _logistic_objective(ds, lam, trial)
            if trial_obj <= obj + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            raise FitConvergenceError("line search failed to decrease the objective")
        w, obj = trial, trial_obj
    raise FitConvergenceError(
        f"gradient norm {gnorm:.3e} above tol {tol:.1e} after {max_iter} iterations"
    )


# ---------------------------------------------------------------------------
# measurement
# ---------------------------------------------------------------------------


def measure_overlaps(w_hat: np.ndarray, feature_moments: MomentSet,
                     teacher: Teacher) -> tuple[float, float]:
    """Teacher alignment and self-overlap of the fitted readout.

    m* = w^ Phi w~ / sqrt(Ntilde D),  q* = w^ Omega w^ / Ntilde, with the
    moments living in feature space.
    """
    w_hat = np.asarray(w_hat, dtype=float)
    n = feature_moments.N
    if w_hat.shape != (n,):
        raise ValueError(f"w_hat must have shape ({n},), got {w_hat.shape}")
    if teacher.latent_dim != feature_moments.D:
        raise ValueError(
            f"teacher wants latent dim {teacher.latent_dim}, "
            f"moments have {feature_moments.D}"
        )
    if teacher.M != 1:
        raise ValueError("overlap measurement needs a single-output teacher")
    wt = teacher.W[0]
    m_star = float(w_hat @ feature_moments.Phi @ wt) / np.sqrt(n * feature_moments.D)
    q_star = float(w_hat @ feature_moments.Omega @ w_hat) / n
    return m_star, q_star


def generalization_error_mc(w_hat: np.ndarray, gen, teacher: Teacher,
                            fmap: FeatureMap | None,
                            student_kind: ActivationKind, n_test: int,
                            seed: int = 0) -> tuple[float, float]:
    """Fresh-sample Monte Carlo of E 1/2 (y - g(x~ . w^))^2."""
    if n_test < 100:
        raise ValueError(f"need at least 100 test samples, got {n_test}")
    w_hat = np.asarray(w_hat, dtype=float)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_test:
        m = min(_BATCH, n_test - done)
        c = latent_block(gen.latent_dim, seed, done, m)
        x = generate(gen, c)
        feats = fmap.apply(x) if fmap is not None else x
        pred = evaluate(student_kind, feats @ w_hat)
        z = 0.5 * (teacher_label(teacher, c) - pred) ** 2
        total += z.sum()
        total_sq += (z * z).sum()
        done += m
    mean = total / n_test
    var = max(total_sq / n_test - mean * mean, 0.0) * n_test / (n_test - 1)
    return float(mean), float(np.sqrt(var / n_test))


def write_erm_csv(rows, path) -> None:
    """Sweep rows (dicts keyed like the header) to CSV with repr floats."""
    names = ERM_CSV_HEADER.split(",")
    with open(path, "w") as fh:
        fh.write(ERM_CSV_HEADER + "\n")
        for row in rows:
            fh.write(",".join(_cell(row[k]) for k in names) + "\n")


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)
