"""Input covariances, their eigensystem, and spectral weight projections.

Both analytical descriptions in this package (the order-parameter ODEs and
the saddle-point equations) see the data distribution only through two
matrices: the input-input covariance Omega = E[x x^T] and the input-latent
covariance Phi = E[x c^T].  This module estimates them by seeded Monte
Carlo over a generator (or an ingested sample stream), diagonalizes Omega
in the convention

    sum_i psi_tau_i psi_tau'_i = N delta_tau,tau'   (rows of Psi),

and projects student/teacher weights onto that basis.  MomentSets persist
in a simple sectioned binary container (magic "GEQMAT01").
"""
from __future__ import annotations

import json
import os
import struct
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .generators import generate, latent_block, open_sample_stream
from .seeds import rng_for_chunk

__all__ = [
    "MomentSet",
    "MomentFormatError",
    "estimate_moments",
    "moments_from_matrices",
    "project",
    "rotated_teacher_overlap",
    "save_moments",
    "load_moments",
    "write_matrix",
    "read_matrices",
]

MATRIX_MAGIC = b"GEQMAT01"
_CHUNK = 2048


class MomentFormatError(ValueError):
    pass


@dataclass(frozen=True)
class MomentSet:
    Omega: np.ndarray   # N x N, symmetric
    Phi: np.ndarray     # N x D
    mean_x: np.ndarray  # N
    n_samples: int
    rho: np.ndarray     # N eigenvalues, descending, clamped at 0
    Psi: np.ndarray     # N x N, rows psi_tau with |psi_tau|^2 = N
    gamma: float        # trace(Omega)/N
    clamp_magnitude: float = 0.0  # total negative eigenvalue mass clamped away

    @property
    def N(self) -> int:
        return self.Omega.shape[0]

    @property
    def D(self) -> int:
        return self.Phi.shape[1]

    @property
    def delta(self) -> float:
        """Aspect ratio D/N of the generator."""
        return self.D / self.N


def _finalize(Omega, Phi, mean_x, n_samples) -> MomentSet:
    Omega = 0.5 * (Omega + Omega.T)
    N = Omega.shape[0]
    w, V = np.linalg.eigh(Omega)
    clamp = float(-np.sum(np.minimum(w, 0.0)))
    rho = np.clip(w[::-1], 0.0, None)
    Psi = np.sqrt(N) * V[:, ::-1].T
    return MomentSet(
        Omega=Omega,
        Phi=Phi,
        mean_x=mean_x,
        n_samples=int(n_samples),
        rho=rho,
        Psi=Psi,
        gamma=float(np.trace(Omega)) / N,
        clamp_magnitude=clamp,
    )


def moments_from_matrices(Omega, Phi, mean_x=None, n_samples: int = 0) -> MomentSet:
    """Build a MomentSet from exactly known covariances (no sampling)."""
    Omega = np.asarray(Omega, dtype=float)
    Phi = np.asarray(Phi, dtype=float)
    if Omega.shape[0] != Omega.shape[1] or Omega.shape[0] != Phi.shape[0]:
        raise ValueError(f"inconsistent shapes: Omega {Omega.shape}, Phi {Phi.shape}")
    if mean_x is None:
        mean_x = np.zeros(Omega.shape[0])
    return _finalize(Omega, Phi, np.asarray(mean_x, dtype=float), n_samples)


def _stream_records(source):
    if isinstance(source, (str, os.PathLike)):
        return open_sample_stream(source)
    return iter(source)


def estimate_moments(source, n_samples: int | None, seed: int = 0, *,
                     center: bool = False) -> MomentSet:
    """Monte-Carlo estimate of (Omega, Phi) from a generator or stream.

    For a generator, draws `n_samples` latent vectors from the stream
    identified by `seed` (indices 0..n-1, so the estimate is independent
    of internal chunking).  For a sample stream (path or iterator of
    (c, x) pairs), consumes up to `n_samples` records, or all of them
    when n_samples is None.  Moments are uncentered unless `center` is
    set, which is only meaningful for ingested data with a mean.
    """
    if hasattr(source, "latent_dim") and hasattr(source, "apply"):
        if not n_samples:
            raise ValueError("n_samples must be positive for a generator source")
        D, N = source.latent_dim, source.output_dim
        n = int(n_samples)
        if n < N:
            raise ValueError(f"need n_samples >= N = {N}, got {n}")
        if n < 10 * N:
            warnings.warn(f"n_samples = {n} < 10 N = {10 * N}: moments will be noisy")
        S_xx = np.zeros((N, N))
        S_xc = np.zeros((N, D))
        s_x = np.zeros(N)
        s_c = np.zeros(D)
        done = 0
        while done < n:
            m = min(_CHUNK, n - done)
            C = latent_block(D, seed, done, m)
            X = generate(source, C)
            S_xx += X.T @ X
            S_xc += X.T @ C
            s_x += X.sum(axis=0)
            s_c += C.sum(axis=0)
            done += m
    else:
        records = _stream_records(source)
        S_xx = S_xc = s_x = s_c = None
        n = 0
        for c, x in records:
            if S_xx is None:
                N, D = len(x), len(c)
                S_xx = np.zeros((N, N))
                S_xc = np.zeros((N, D))
                s_x = np.zeros(N)
                s_c = np.zeros(D)
            if len(x) != N or len(c) != D:
                raise ValueError(
                    f"stream dimension mismatch at record {n}: got ({len(c)}, {len(x)}), want ({D}, {N})"
                )
            S_xx += np.outer(x, x)
            S_xc += np.outer(x, c)
            s_x += x
            s_c += c
            n += 1
            if n_samples is not None and n >= n_samples:
                break
        if n == 0:
            raise ValueError("no samples: empty stream or n_samples = 0")
        if n_samples is not None and n < n_samples:
            raise ValueError(f"stream exhausted after {n} records, wanted {n_samples}")

    mean_x = s_x / n
    Omega = S_xx / n
    Phi = S_xc / n
    if center:
        mean_c = s_c / n
        Omega = Omega - np.outer(mean_x, mean_x)
        Phi = Phi - np.outer(mean_x, mean_c)
    return _finalize(Omega, Phi, mean_x, n)


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------

def project(ms: MomentSet, W: np.ndarray, Wt: np.ndarray):
    """Spectral projections of student rows W (K x N) and teacher rows Wt (M x D).

    Returns (Gamma, GammaTilde, omega_tilde):
      Gamma[k, tau]      = (1/sqrt N) sum_i psi_tau_i W[k, i]
      omega_tilde[m, i]  = sum_r Phi[i, r] Wt[m, r]       (rotated teacher)
      GammaTilde[m, tau] = (1/sqrt N) sum_i psi_tau_i omega_tilde[m, i]
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    Wt = np.atleast_2d(np.asarray(Wt, dtype=float))
    if W.shape[1] != ms.N:
        raise ValueError(f"student rows have {W.shape[1]} columns, want N = {ms.N}")
    if Wt.shape[1] != ms.D:
        raise ValueError(f"teacher rows have {Wt.shape[1]} columns, want D = {ms.D}")
    root_n = np.sqrt(ms.N)
    Gamma = W @ ms.Psi.T / root_n
    omega_tilde = Wt @ ms.Phi.T
    GammaTilde = omega_tilde @ ms.Psi.T / root_n
    return Gamma, GammaTilde, omega_tilde


def rotated_teacher_overlap(ms: MomentSet, Wt: np.ndarray) -> np.ndarray:
    """T~ = (1/N) Wt Phi^T Phi Wt^T, the overlap of the rotated teacher rows."""
    Wt = np.atleast_2d(np.asarray(Wt, dtype=float))
    if Wt.shape[1] != ms.D:
        raise ValueError(f"teacher rows have {Wt.shape[1]} columns, want D = {ms.D}")
    rot = Wt @ ms.Phi.T
    return rot @ rot.T / ms.N


# ---------------------------------------------------------------------------
# GEQMAT01 container
# ---------------------------------------------------------------------------

def write_matrix(fh, name: str, arr: np.ndarray) -> None:
    """Append one named f64 matrix section to an open binary file."""
    arr = np.ascontiguousarray(np.atleast_2d(np.asarray(arr, dtype="<f8")))
    header = json.dumps(
        {"name": name, "rows": arr.shape[0], "cols": arr.shape[1],
         "dtype": "f64", "layout": "row-major"}
    ).encode()
    fh.write(MATRIX_MAGIC)
    fh.write(struct.pack("<I", len(header)))
    fh.write(header)
    fh.write(arr.tobytes())


def _read_matrix(fh):
    magic = fh.read(8)
    if not magic:
        return None
    if magic != MATRIX_MAGIC:
        raise MomentFormatError(f"bad magic {magic!r}, want {MATRIX_MAGIC!r}")
    raw = fh.read(4)
    if len(raw) < 4:
        raise MomentFormatError("file ends inside section header length")
    (hlen,) = struct.unpack("<I", raw)
    blob = fh.read(hlen)
    if len(blob) < hlen:
        raise MomentFormatError("file ends inside section header")
    try:
        head = json.loads(blob.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MomentFormatError(f"unreadable section header: {exc}") from exc
    rows, cols = head["rows"], head["cols"]
    data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
    if data.size < rows * cols:
        raise MomentFormatError(f"section {head.get('name')!r} payload truncated")
    return head["name"], data.reshape(rows, cols).copy()


def read_matrices(path, count: int | None = None) -> dict[str, np.ndarray]:
    """Read the named sections of a GEQMAT01 file (all, or the first `count`)."""
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        while count is None or len(out) < count:
            rec = _read_matrix(fh)
            if rec is None:
                break
            out[rec[0]] = rec[1]
    return out


_SECTIONS = ("omega", "phi", "mean", "rho", "psi")


def save_moments(ms: MomentSet, path) -> None:
    with open(path, "wb") as fh:
        write_matrix(fh, "omega", ms.Omega)
        write_matrix(fh, "phi", ms.Phi)
        write_matrix(fh, "mean", ms.mean_x.reshape(1, -1))
        write_matrix(fh, "rho", ms.rho.reshape(1, -1))
        write_matrix(fh, "psi", ms.Psi)
        manifest = json.dumps(
            {"n_samples": ms.n_samples, "gamma": ms.gamma, "D": ms.D, "N": ms.N,
             "clamp_magnitude": ms.clamp_magnitude}
        ).encode()
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)


def load_moments(path) -> MomentSet:
    with open(path, "rb") as fh:
        sections = {}
        for want in _SECTIONS:
            rec = _read_matrix(fh)
            if rec is None:
                raise MomentFormatError(f"missing section {want!r}")
            name, arr = rec
            if name != want:
                raise MomentFormatError(f"expected section {want!r}, found {name!r}")
            sections[name] = arr
        raw = fh.read(4)
        if len(raw) < 4:
            raise MomentFormatError("missing trailing manifest")
        (mlen,) = struct.unpack("<I", raw)
        blob = fh.read(mlen)
        if len(blob) < mlen:
            raise MomentFormatError("file ends inside trailing manifest")
        manifest = json.loads(blob.decode())
        if fh.read(1):
            raise MomentFormatError("trailing bytes after manifest")
    ms = MomentSet(
        Omega=sections["omega"],
        Phi=sections["phi"],
        mean_x=sections["mean"].ravel(),
        n_samples=int(manifest["n_samples"]),
        rho=sections["rho"].ravel(),
        Psi=sections["psi"],
        gamma=float(manifest["gamma"]),
        clamp_magnitude=float(manifest.get("clamp_magnitude", 0.0)),
    )
    if ms.Omega.shape != (manifest["N"], manifest["N"]) or ms.Phi.shape != (manifest["N"], manifest["D"]):
        raise MomentFormatError("manifest dimensions disagree with section shapes")
    return ms
