"""Synthetic data sources: latent draws, layered generators, teachers, streams.

A generator maps a latent Gaussian vector c in R^D to an input x in R^N.
Supported maps: a single nonlinear layer x_n = sigma(a_n . c), chained
multi-layer maps, an adversarial pair sign(inv(A1) sign(A1 c)) whose
second layer inverts the first, and the identity (which recovers plain
Gaussian inputs).  Teachers label the latent vector, not the input:
y = sum_m vt_m gt(wt_m . c / sqrt(D)).

Sample streams produced elsewhere can be ingested through a small binary
container (magic "GEQSMP01"); see open_sample_stream/write_sample_stream.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .activations import ActivationKind, evaluate
from .seeds import rng_for_chunk

__all__ = [
    "WeightLaw",
    "SingleLayer",
    "MultiLayer",
    "InversePair",
    "Identity",
    "Teacher",
    "SampleStreamError",
    "sample_weights",
    "sample_latent",
    "latent_block",
    "generate",
    "teacher_label",
    "open_sample_stream",
    "write_sample_stream",
]

STREAM_MAGIC = b"GEQSMP01"

#: Latent sampling is chunked in fixed blocks so that the vector at stream
#: index i depends only on (seed, i), never on how a caller batched its reads.
_LATENT_BLOCK = 256


# ---------------------------------------------------------------------------
# weight laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightLaw:
    """Entry law for random matrices.

    variant "iid_gaussian": entries i.i.d. N(0, scale^2).
    variant "shifted_iid":  entries (mu + sqrt(1-mu^2) Z) / sqrt(cols), so the
    row norms of a rows x cols draw concentrate on 1.
    """

    variant: str = "iid_gaussian"
    scale: float = 1.0
    mu: float = 0.0
    normalize_rows: bool = False

    @staticmethod
    def iid(scale: float, normalize_rows: bool = False) -> "WeightLaw":
        return WeightLaw("iid_gaussian", scale=scale, normalize_rows=normalize_rows)

    @staticmethod
    def shifted(mu: float, normalize_rows: bool = False) -> "WeightLaw":
        return WeightLaw("shifted_iid", mu=mu, normalize_rows=normalize_rows)


def sample_weights(law: WeightLaw, rows: int, cols: int, seed: int) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ValueError("need rows, cols >= 1")
    z = rng_for_chunk(seed, 0).standard_normal((rows, cols))
    if law.variant == "iid_gaussian":
        w = law.scale * z
    elif law.variant == "shifted_iid":
        if not -1.0 <= law.mu <= 1.0:
            raise ValueError("shifted_iid needs |mu| <= 1")
        w = (law.mu + np.sqrt(1.0 - law.mu**2) * z) / np.sqrt(cols)
    else:
        raise ValueError(f"unknown weight law {law.variant!r}")
    if law.normalize_rows:
        w /= np.linalg.norm(w, axis=1, keepdims=True)
    return w


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SingleLayer:
    A: np.ndarray  # N x D
    kind: ActivationKind

    @property
    def latent_dim(self) -> int:
        return self.A.shape[1]

    @property
    def output_dim(self) -> int:
        return self.A.shape[0]

    def apply(self, c: np.ndarray) -> np.ndarray:
        return evaluate(self.kind, c @ self.A.T)


@dataclass(frozen=True)
class MultiLayer:
    layers: tuple  # ((matrix, kind), ...)

    def __post_init__(self):
        mats = [m for m, _ in self.layers]
        for a, b in zip(mats, mats[1:]):
            if b.shape[1] != a.shape[0]:
                raise ValueError(
                    f"layer dimensions do not chain: {a.shape} then {b.shape}"
                )

    @property
    def latent_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    def apply(self, c: np.ndarray) -> np.ndarray:
        h = c
        for mat, kind in self.layers:
            h = evaluate(kind, h @ mat.T)
        return h


@dataclass(frozen=True)
class InversePair:
    """x = sign(inv(A1) . sign(A1 c)): second layer inverts the first.

    The strongly correlated weights give the input covariance a dominant
    eigendirection, the stress case for spectral assumptions downstream.
    inv(A1) is computed once at construction and cached.
    """

    A1: np.ndarray  # N x N
    kind: ActivationKind = ActivationKind.SIGN
    A1_inv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.A1.shape[0] != self.A1.shape[1]:
            raise ValueError("inverse-pair matrix must be square")
        cond = np.linalg.cond(self.A1)
        if not np.isfinite(cond) or cond > 1e12:
            raise ValueError(f"inverse-pair matrix is ill-conditioned (cond = {cond:.3e})")
        object.__setattr__(self, "A1_inv", np.linalg.inv(self.A1))

    @property
    def latent_dim(self) -> int:
        return self.A1.shape[1]

    @property
    def output_dim(self) -> int:
        return self.A1.shape[0]

    def apply(self, c: np.ndarray) -> np.ndarray:
        inner = np.sign(c @ self.A1.T)
        return np.sign(inner @ self.A1_inv.T)


@dataclass(frozen=True)
class Identity:
    D: int

    @property
    def latent_dim(self) -> int:
        return self.D

    @property
    def output_dim(self) -> int:
        return self.D

    def apply(self, c: np.ndarray) -> np.ndarray:
        return np.asarray(c, dtype=float).copy()


GeneratorSpec = SingleLayer | MultiLayer | InversePair | Identity


def generate(spec, c: np.ndarray) -> np.ndarray:
    """Apply a generator to one latent vector (D,) or a batch (n, D)."""
    c = np.asarray(c, dtype=float)
    if c.shape[-1] != spec.latent_dim:
        raise ValueError(
            f"latent dimension mismatch: generator wants {spec.latent_dim}, got {c.shape[-1]}"
        )
    return spec.apply(c)


# ---------------------------------------------------------------------------
# latent sampling
# ---------------------------------------------------------------------------

def latent_block(D: int, seed: int, start: int, count: int) -> np.ndarray:
    """Latent vectors with stream indices start..start+count-1, shape (count, D)."""
    out = np.empty((count, D))
    filled = 0
    while filled < count:
        idx = start + filled
        block, offset = divmod(idx, _LATENT_BLOCK)
        take = min(_LATENT_BLOCK - offset, count - filled)
        draws = rng_for_chunk(seed, block).standard_normal((_LATENT_BLOCK, D))
        out[filled:filled + take] = draws[offset:offset + take]
        filled += take
    return out


def sample_latent(D: int, seed: int, index: int = 0) -> np.ndarray:
    """Standard-normal latent vector at a given stream index."""
    return latent_block(D, seed, index, 1)[0]


# ---------------------------------------------------------------------------
# teacher
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Teacher:
    W: np.ndarray  # M x D, rows wt_m
    v: np.ndarray  # M second-layer weights
    kind: ActivationKind

    @property
    def M(self) -> int:
        return self.W.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.W.shape[1]

    def overlaps(self) -> np.ndarray:
        """T = W W^T / D (symmetric PSD by construction)."""
        return self.W @ self.W.T / self.W.shape[1]

    def preactivations(self, c: np.ndarray) -> np.ndarray:
        return np.asarray(c, dtype=float) @ self.W.T / np.sqrt(self.W.shape[1])


def teacher_label(t: Teacher, c: np.ndarray):
    """y = sum_m v_m g(w_m . c / sqrt(D)) for one latent vector or a batch."""
    c = np.asarray(c, dtype=float)
    if c.shape[-1] != t.latent_dim:
        raise ValueError(
            f"latent dimension mismatch: teacher wants {t.latent_dim}, got {c.shape[-1]}"
        )
    y = evaluate(t.kind, t.preactivations(c)) @ t.v
    return float(y) if c.ndim == 1 else y


# ---------------------------------------------------------------------------
# sample streams (GEQSMP01)
# ---------------------------------------------------------------------------

class SampleStreamError(ValueError):
    pass


def write_sample_stream(path, records, D: int | None = None, N: int | None = None) -> int:
    """Write (c, x) records to a GEQSMP01 container; returns the record count.

    `records` may be any iterable of pairs; dimensions are taken from the
    first record unless given explicitly (required for an empty stream).
    """
    records = list(records)
    if records:
        c0, x0 = records[0]
        D = len(c0) if D is None else D
        N = len(x0) if N is None else N
    if D is None or N is None:
        raise ValueError("empty stream needs explicit D and N")
    header = json.dumps({"D": int(D), "N": int(N), "count": len(records), "dtype": "f64"}).encode()
    with open(path, "wb") as fh:
        fh.write(STREAM_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for i, (c, x) in enumerate(records):
            c = np.asarray(c, dtype="<f8")
            x = np.asarray(x, dtype="<f8")
            if c.shape != (D,) or x.shape != (N,):
                raise ValueError(f"record {i} has shape {c.shape}/{x.shape}, want ({D},)/({N},)")
            fh.write(c.tobytes())
            fh.write(x.tobytes())
    return len(records)


def read_stream_header(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != STREAM_MAGIC:
            raise SampleStreamError(f"bad magic {magic!r}, want {STREAM_MAGIC!r}")
        raw = fh.read(4)
        if len(raw) < 4:
            raise SampleStreamError("file ends inside header length field")
        (hlen,) = struct.unpack("<I", raw)
        blob = fh.read(hlen)
        if len(blob) < hlen:
            raise SampleStreamError("file ends inside header")
        try:
            header = json.loads(blob.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise SampleStreamError(f"unreadable header: {exc}") from exc
        for key in ("D", "N", "count", "dtype"):
            if key not in header:
                raise SampleStreamError(f"header missing {key!r}")
        if header["dtype"] != "f64":
            raise SampleStreamError(f"unsupported dtype {header['dtype']!r}")
        header["_payload_offset"] = 8 + 4 + hlen
        return header


def open_sample_stream(path):
    """Iterate (c, x) pairs from a GEQSMP01 container.

    Oversized payloads fail immediately; a short payload raises a
    truncation error naming the record at which the data ran out.
    """
    header = read_stream_header(path)
    D, N, count = header["D"], header["N"], header["count"]
    rec_vals = D + N
    expected = count * rec_vals * 8
    actual = os.path.getsize(path) - header["_payload_offset"]
    if actual > expected:
        raise SampleStreamError(
            f"header/payload length mismatch: payload {actual} bytes, header implies {expected}"
        )

    def reader():
        with open(path, "rb") as fh:
            fh.seek(header["_payload_offset"])
            for i in range(count):
                vals = np.fromfile(fh, dtype="<f8", count=rec_vals)
                if vals.size < rec_vals:
                    raise SampleStreamError(
                        f"truncated payload at record {i} of {count}"
                    )
                yield vals[:D].copy(), vals[D:].copy()

    return reader()
