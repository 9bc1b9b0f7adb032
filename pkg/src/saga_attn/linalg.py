"""Dense real-matrix primitives.

Matrices are 2-D numpy arrays in row-major, token-major layout (rows are
tokens). ``float64`` is used for correctness work and ``float32`` for timing.
Every product-forming primitive reports its scalar multiplications to the
active :class:`~saga_attn.instrument.MultiplyCounter`, if any.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .errors import DimensionError, NumericError
from .instrument import record_multiplies

FLOAT_MODES = {"f32": np.float32, "f64": np.float64}

DEFAULT_REL_TOL = {np.dtype(np.float64): 1e-8, np.dtype(np.float32): 1e-5}


def _require_2d(m: np.ndarray, name: str = "matrix") -> None:
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")


def as_matrix(data, dtype=np.float64) -> np.ndarray:
    m = np.array(data, dtype=dtype, order="C")
    if m.ndim == 1:
        m = m[None, :]
    _require_2d(m)
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _require_2d(a, "left operand")
    _require_2d(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    record_multiplies(a.shape[0] * a.shape[1] * b.shape[1])
    return a @ b


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise DimensionError(f"hadamard operands differ in shape: {a.shape} vs {b.shape}")
    record_multiplies(a.size)
    return a * b


def transpose(m: np.ndarray) -> np.ndarray:
    _require_2d(m)
    return m.T


def outer(col: np.ndarray, row: np.ndarray) -> np.ndarray:
    """Outer product of a d x 1 column and a 1 x e row."""
    _require_2d(col, "column")
    _require_2d(row, "row")
    if col.shape[1] != 1 or row.shape[0] != 1:
        raise DimensionError(f"outer expects (d x 1) and (1 x e), got {col.shape} and {row.shape}")
    record_multiplies(col.shape[0] * row.shape[1])
    return col @ row


def row_softmax(m: np.ndarray, scale: float = 1.0) -> np.ndarray:
    _require_2d(m)
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    z = m * scale
    z = z - z.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def sigmoid_map(m: np.ndarray) -> np.ndarray:
    """Logistic sigmoid, kept strictly inside (0, 1) even where it saturates."""
    m = np.asarray(m)
    e = np.exp(-np.abs(m))
    out = np.where(m >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(m.dtype, copy=False)
    info = np.finfo(out.dtype)
    return np.clip(out, info.tiny, np.nextafter(out.dtype.type(1), out.dtype.type(0)))


def relu(m: np.ndarray) -> np.ndarray:
    return np.maximum(m, 0)


def numerical_rank(m: np.ndarray, rel_tol: float | None = None) -> int:
    """Count singular values above ``rel_tol * sigma_max``."""
    _require_2d(m)
    if m.size == 0:
        raise DimensionError("numerical_rank of an empty matrix")
    if rel_tol is None:
        rel_tol = DEFAULT_REL_TOL.get(m.dtype, 1e-8)
    if not 0 < rel_tol < 1:
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    try:
        sv = np.linalg.svd(m, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        finite = bool(np.isfinite(m).all())
        raise NumericError(
            f"SVD did not converge for {m.shape[0]}x{m.shape[1]} matrix "
            f"(finite={finite}, max|m|={np.nanmax(np.abs(m)):.3e})"
        ) from exc
    if sv[0] == 0:
        return 0
    return int(np.count_nonzero(sv > rel_tol * sv[0]))


def stream_rng(seed: int, label: str = "") -> np.random.Generator:
    """Independent generator for ``(seed, label)``.

    The label is hashed so that separate subsystems draw from separate
    streams and never perturb each other.
    """
    digest = hashlib.sha256(label.encode()).digest()
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest[:8], "little")])


def random_matrix(
    rows: int,
    cols: int,
    seed: int,
    init: str = "uniform",
    *,
    scale: float = 1.0,
    label: str = "",
    dtype=np.float64,
) -> np.ndarray:
    """Seeded random matrix.

    ``init="uniform"`` draws from U(-s, s) with s = sqrt(6 / (rows + cols));
    ``init="normal"`` draws standard normal values times ``scale``.
    """
    if rows < 1 or cols < 1:
        raise DimensionError(f"random_matrix needs positive shape, got {rows}x{cols}")
    rng = stream_rng(seed, label)
    if init == "uniform":
        s = math.sqrt(6.0 / (rows + cols))
        m = rng.uniform(-s, s, size=(rows, cols))
    elif init == "normal":
        m = rng.standard_normal((rows, cols)) * scale
    else:
        raise ValueError(f"unknown init scheme {init!r}")
    return m.astype(dtype)
