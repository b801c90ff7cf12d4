"""Dense third-order tensor algebra: unfoldings, mode products, HOSVD, norms.

Tensors are plain ``numpy`` arrays of shape ``(n1, n2, n3)``.  The canonical
flat layout is column-major: entry ``(i, j, l)`` (0-based) sits at flat
position ``i + n1*j + n1*n2*l``, so the mode-1 unfolding is a zero-copy
reshape.  Modes are numbered 1..3 throughout, matching the usual tensor
notation.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNSR3F64"

_HEADER = struct.Struct("<8s3Q")


def _check_mode(mode: int) -> int:
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")
    return mode - 1


def _as_tensor(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected a third-order tensor, got ndim={x.ndim}")
    return x


def unfold(x: np.ndarray, mode: int) -> np.ndarray:
    """Mode-k matricization.

    Entry ``(i1, i2, i3)`` of ``x`` maps to row ``i_k`` and a column that
    enumerates the remaining indices in increasing mode order, earliest mode
    fastest.  For mode 1 the column index is ``i2 + n2*i3`` (0-based), i.e.
    the classical ``[M1(X)]_{i1, i2 + p2*(i3-1)} = X_{i1,i2,i3}`` map.
    """
    axis = _check_mode(mode)
    x = _as_tensor(x)
    return np.reshape(np.moveaxis(x, axis, 0), (x.shape[axis], -1), order="F")


def fold(mat: np.ndarray, mode: int, dims: tuple[int, int, int]) -> np.ndarray:
    """Inverse of :func:`unfold` for the given target dims."""
    axis = _check_mode(mode)
    mat = np.asarray(mat, dtype=np.float64)
    rest = tuple(d for a, d in enumerate(dims) if a != axis)
    if mat.shape != (dims[axis], int(np.prod(rest))):
        raise ValueError(
            f"matrix of shape {mat.shape} cannot fold to dims {dims} on mode {mode}"
        )
    return np.moveaxis(np.reshape(mat, (dims[axis],) + rest, order="F"), 0, axis)


def mode_product(x: np.ndarray, u: np.ndarray, mode: int) -> np.ndarray:
    """Mode-k tensor-matrix product ``x ×_k u``.

    ``u`` has shape ``(rows, x.shape[mode-1])``; the output replaces that mode
    with ``rows``.  Satisfies ``unfold(mode_product(x, u, m), m) == u @ unfold(x, m)``.
    """
    axis = _check_mode(mode)
    x = _as_tensor(x)
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[1] != x.shape[axis]:
        raise ValueError(
            f"factor of shape {u.shape} does not match mode-{mode} dim {x.shape[axis]}"
        )
    moved = np.moveaxis(x, axis, 0)
    out = np.tensordot(u, moved, axes=(1, 0))
    return np.moveaxis(out, 0, axis)


def tucker_reconstruct(
    g: np.ndarray, u1: np.ndarray, u2: np.ndarray, u3: np.ndarray
) -> np.ndarray:
    """Multilinear product ``[[g; u1, u2, u3]] = g ×1 u1 ×2 u2 ×3 u3``."""
    g = _as_tensor(g)
    for k, u in enumerate((u1, u2, u3)):
        if np.asarray(u).shape[1] != g.shape[k]:
            raise ValueError(
                f"core dim {g.shape[k]} does not match factor {k + 1} shape {np.asarray(u).shape}"
            )
    out = mode_product(g, u1, 1)
    out = mode_product(out, u2, 2)
    return mode_product(out, u3, 3)


def _fix_signs(u: np.ndarray) -> np.ndarray:
    # Deterministic orientation: largest-magnitude entry of each column positive.
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def hosvd(
    x: np.ndarray, rank: tuple[int, int, int]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Truncated higher-order SVD: per mode, the top-``r_k`` left singular
    vectors of the mode-k unfolding.

    Computed through a symmetric eigendecomposition of the Gram matrix
    ``M_k(x) M_k(x)^T`` (only left singular vectors are needed and the
    requested ranks are small).  Columns are sign-fixed so the
    largest-magnitude entry is positive.
    """
    x = _as_tensor(x)
    factors = []
    for axis in range(3):
        r = int(rank[axis])
        if not 1 <= r <= x.shape[axis]:
            raise ValueError(
                f"rank {rank} infeasible for tensor dims {x.shape} on mode {axis + 1}"
            )
        m = unfold(x, axis + 1)
        gram = m @ m.T
        _, vecs = np.linalg.eigh(gram)
        u = vecs[:, ::-1][:, :r]
        factors.append(_fix_signs(u))
    return tuple(factors)


def hosvd_singular_values(x: np.ndarray, mode: int) -> np.ndarray:
    """Singular values of the mode-k unfolding, descending."""
    return np.linalg.svd(unfold(x, mode), compute_uv=False)


def norms(x: np.ndarray) -> tuple[float, float]:
    """Frobenius norm and max (entrywise sup) norm."""
    x = _as_tensor(x)
    return float(np.sqrt(np.sum(x * x))), float(np.max(np.abs(x))) if x.size else 0.0


def write_tensor(path: str | Path, x: np.ndarray) -> None:
    """Write a tensor container: magic, three little-endian u64 dims, then the
    float64 payload in the canonical column-major linearization."""
    x = _as_tensor(x)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, *x.shape))
        fh.write(np.asfortranarray(x).astype("<f8").tobytes(order="F"))


def read_tensor(path: str | Path) -> np.ndarray:
    """Read a tensor container written by :func:`write_tensor`."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise ValueError(f"{path}: truncated tensor container header")
        magic, n1, n2, n3 = _HEADER.unpack(header)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        payload = fh.read()
    expected = n1 * n2 * n3
    data = np.frombuffer(payload, dtype="<f8")
    if data.size != expected:
        raise ValueError(
            f"{path}: payload holds {data.size} floats, dims imply {expected}"
        )
    return np.reshape(data, (n1, n2, n3), order="F").copy()
