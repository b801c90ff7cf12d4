"""Sieve basis matrices from baseline covariates and the projector onto their span."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

FAMILIES = ("legendre", "polynomial")


@dataclass(frozen=True)
class SieveSpec:
    """Per-coordinate basis expansion of the baseline covariates.

    ``order`` is the highest basis degree J; with an intercept the expanded
    dimension is ``1 + J*d0``.  The Legendre family standardizes each
    covariate column affinely onto [-1, 1] by default (they are defined
    there); plain polynomials leave the scale alone unless asked.
    """

    family: str = "legendre"
    order: int = 2
    include_intercept: bool = True
    standardize: bool | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown basis family {self.family!r}; choose from {FAMILIES}")
        if self.order < 0:
            raise ValueError("basis order must be >= 0")

    @property
    def standardize_resolved(self) -> bool:
        if self.standardize is None:
            return self.family == "legendre"
        return self.standardize


def legendre_columns(x: np.ndarray, order: int) -> list[np.ndarray]:
    """Legendre polynomials Y_1..Y_order of ``x`` via the three-term
    recurrence j*Y_j = (2j-1)*x*Y_{j-1} - (j-1)*Y_{j-2}, Y_0 = 1, Y_1 = x."""
    cols = []
    prev2 = np.ones_like(x)
    prev1 = x
    for j in range(1, order + 1):
        if j == 1:
            cols.append(x)
            continue
        cur = ((2 * j - 1) * prev1 * x - (j - 1) * prev2) / j
        cols.append(cur)
        prev2, prev1 = prev1, cur
    return cols


def standardization_bounds(x0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column (min, max) used to map covariates onto [-1, 1]."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    return x0.min(axis=0), x0.max(axis=0)


def build_basis(x0: np.ndarray, spec: SieveSpec, bounds=None) -> np.ndarray:
    """Basis matrix with columns [1, Y_1(x0_cols), ..., Y_J(x0_cols)] applied
    coordinatewise (additive expansion, no tensor products).

    ``bounds`` fixes the standardization map; pass the training-set bounds
    when expanding held-out subjects so coefficients stay comparable.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    n = x0.shape[0]
    if n < 1:
        raise ValueError("need at least one subject")
    cols = []
    if spec.include_intercept:
        cols.append(np.ones(n))
    if spec.order >= 1:
        work = x0
        if spec.standardize_resolved:
            lo, hi = standardization_bounds(x0) if bounds is None else bounds
            span = hi - lo
            degenerate = span <= 0
            if degenerate.any():
                warnings.warn(
                    "zero-variance covariate column(s) mapped to 0 before basis expansion",
                    stacklevel=2,
                )
            safe = np.where(degenerate, 1.0, span)
            work = 2.0 * (x0 - lo) / safe - 1.0
            work[:, np.asarray(degenerate)] = 0.0
        for j_cols in _per_degree(work, spec):
            cols.extend(j_cols)
    return np.column_stack(cols) if cols else np.zeros((n, 0))


def _per_degree(x: np.ndarray, spec: SieveSpec):
    d0 = x.shape[1]
    if spec.family == "legendre":
        per_coord = [legendre_columns(x[:, m], spec.order) for m in range(d0)]
    else:
        per_coord = [[x[:, m] ** j for j in range(1, spec.order + 1)] for m in range(d0)]
    for j in range(spec.order):
        yield [per_coord[m][j] for m in range(d0)]


def projector(phi: np.ndarray, ridge: float = 1e-10) -> np.ndarray:
    """Orthogonal projector onto col(phi): phi (phi^T phi)^{-1} phi^T.

    Near-singular Gram matrices get a ridge of ``ridge`` on the diagonal and a
    warning instead of an error.
    """
    phi = np.atleast_2d(np.asarray(phi, dtype=np.float64))
    gram = phi.T @ phi
    d = gram.shape[0]
    if d == 0:
        return np.zeros((phi.shape[0], phi.shape[0]))
    # column-pivoted-style rank check via eigenvalues of the Gram matrix
    eigvals = np.linalg.eigvalsh(gram)
    if eigvals[0] <= max(eigvals[-1], 1.0) * 1e-12:
        warnings.warn(
            "sieve basis is rank deficient; stabilizing the Gram matrix with "
            f"a ridge of {ridge:g}",
            stacklevel=2,
        )
        gram = gram + ridge * np.eye(d)
    coef = np.linalg.solve(gram, phi.T)
    return phi @ coef


def project_columns(phi: np.ndarray, u: np.ndarray, ridge: float = 1e-10) -> np.ndarray:
    """Apply the col(phi) projector to ``u`` without forming the N x N matrix."""
    phi = np.atleast_2d(np.asarray(phi, dtype=np.float64))
    gram = phi.T @ phi
    eigvals = np.linalg.eigvalsh(gram)
    if eigvals[0] <= max(eigvals[-1], 1.0) * 1e-12:
        gram = gram + ridge * np.eye(gram.shape[0])
    return phi @ np.linalg.solve(gram, phi.T @ u)


def basis_coefficients(phi: np.ndarray, u: np.ndarray, ridge: float = 1e-10) -> np.ndarray:
    """Least-squares coefficients B with phi @ B ~= u."""
    phi = np.atleast_2d(np.asarray(phi, dtype=np.float64))
    gram = phi.T @ phi
    eigvals = np.linalg.eigvalsh(gram)
    if eigvals[0] <= max(eigvals[-1], 1.0) * 1e-12:
        gram = gram + ridge * np.eye(gram.shape[0])
    return np.linalg.solve(gram, phi.T @ u)
