"""Causal estimands, baseline estimators, error metrics and the cross-validation harness.

The average treatment effect between two regimes is a contraction of the
completed tensor: the mean over selected (subject, time) cells of the
difference between the two regime slices.

Two reference estimators accompany the Tucker completion: a time-specific
IPTW-weighted linear outcome model (the parametric baseline), and a weighted
low-rank factorization of the mode-1 unfolded tensor with the subject factor
constrained to the sieve span (the "matricized" baseline that ignores the
multi-way structure).

Cross-validation splits subjects into folds.  Held-out subjects are predicted
either by transferring the fitted sieve coefficients onto their own basis rows
(sieve-constrained models) or by Gaussian-kernel smoothing of the fitted
training tensor over baseline-covariate distances (everything else).
Propensities and weights are always refit inside the training folds.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from . import completion
from . import tensor as tz
from .panel import PanelDataset, observation_tensor
from .propensity import PropensityConfig, fit_all, weight_tensor
from .seeding import rng_for
from .sieve import SieveSpec, build_basis, standardization_bounds

METHODS = ("co-tucker", "tucker", "co-unfold", "hrmsm")


@dataclass(frozen=True)
class AteQuery:
    """Average treatment effect of regime_a versus regime_b, optionally
    restricted to subject/time index subsets (0-based; None selects all)."""

    regime_a: int
    regime_b: int
    subjects: tuple | None = None
    times: tuple | None = None


def ate(y_hat: np.ndarray, query: AteQuery) -> float:
    """Mean over the selected cells of slice ``regime_a`` minus slice ``regime_b``."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    n, t, k = y_hat.shape
    for reg in (query.regime_a, query.regime_b):
        if not 0 <= reg < k:
            raise ValueError(f"regime index {reg} out of range for K={k}")
    subjects = np.arange(n) if query.subjects is None else np.asarray(query.subjects)
    times = np.arange(t) if query.times is None else np.asarray(query.times)
    if subjects.size == 0 or times.size == 0:
        raise ValueError("empty subject or time selection")
    block = y_hat[np.ix_(subjects, times)]
    return float(np.mean(block[:, :, query.regime_a] - block[:, :, query.regime_b]))


def normalized_error(y_hat: np.ndarray, y_star: np.ndarray) -> float:
    """Squared relative recovery error ||y_hat - y_star||_F^2 / ||y_star||_F^2."""
    y_hat, y_star = np.asarray(y_hat), np.asarray(y_star)
    if y_hat.shape != y_star.shape:
        raise ValueError("shape mismatch")
    denom = float(np.sum(y_star * y_star))
    if denom == 0:
        raise ValueError("ground-truth tensor is identically zero")
    diff = y_hat - y_star
    return float(np.sum(diff * diff)) / denom


def masked_relative_error(y_hat, y_ref, mask) -> float:
    """||mask o (y_hat - y_ref)||_F / ||mask o y_ref||_F (unsquared; the
    cross-validation flavor of the relative error)."""
    y_hat, y_ref, mask = (np.asarray(a, dtype=np.float64) for a in (y_hat, y_ref, mask))
    num = np.sqrt(np.sum(mask * (y_hat - y_ref) ** 2))
    den = np.sqrt(np.sum(mask * y_ref**2))
    if den == 0:
        raise ValueError("reference tensor vanishes on the mask")
    return float(num / den)


def _weights_per_cell(weights) -> np.ndarray:
    """(N, T) observed-cell weights from a weight tensor (one slot per fiber)."""
    w = np.asarray(getattr(weights, "w", weights), dtype=np.float64)
    return w.sum(axis=2)


def default_hrmsm_design(bits: np.ndarray, x0: np.ndarray, t: int) -> np.ndarray:
    """Feature map (regime bits, baseline covariates); vectorized over rows."""
    bits = np.atleast_2d(bits)
    if bits.shape[0] == 1 and x0.shape[0] > 1:
        bits = np.broadcast_to(bits, (x0.shape[0], bits.shape[1]))
    return np.column_stack([bits.astype(float), x0])


def fit_hrmsm(data: PanelDataset, weights, k: int, design=None):
    """Time-specific IPTW-weighted linear outcome model.

    Solves, separately for each time point, the weighted least-squares normal
    equations of the regression of the observed outcome on the design
    features, then fills every regime slice of the predicted tensor from the
    fitted coefficients.  Returns (per-time coefficient list, predicted tensor).
    """
    from .panel import decode_regime, observed_regimes

    design = design or default_hrmsm_design
    n, t_max = data.n_subjects, data.n_times
    big_k = 2**k
    w_it = _weights_per_cell(weights)
    codes = observed_regimes(data, k)
    all_bits = np.stack([decode_regime(l, k) for l in range(big_k)]).astype(float)
    coefs = []
    y_hat = np.zeros((n, t_max, big_k))
    for t in range(1, t_max + 1):
        obs_bits = all_bits[codes[:, t - 1]]
        x = design(obs_bits, data.x0, t)
        w = w_it[:, t - 1]
        y = data.y[:, t - 1]
        xtw = x.T * w
        gram = xtw @ x
        rhs = xtw @ y
        try:
            eta = np.linalg.solve(gram, rhs)
            if not np.isfinite(eta).all():
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            warnings.warn(
                f"time {t}: singular weighted design; adding a 1e-8 ridge",
                stacklevel=2,
            )
            eta = np.linalg.solve(gram + 1e-8 * np.eye(gram.shape[0]), rhs)
        coefs.append(eta)
        for l in range(big_k):
            feats = design(all_bits[l][None, :], data.x0, t)
            y_hat[:, t - 1, l] = feats @ eta
    return coefs, y_hat


def fit_unfolded(
    y_obs, omega, w, phi, r1: int, max_iters: int = 200, tol: float = 1e-10
) -> np.ndarray:
    """Weighted rank-``r1`` factorization of the mode-1 unfolding.

    Minimizes the same weighted loss as the tensor estimator but with the
    multi-way structure dropped: alternating least squares on
    M1(Y) ~ (phi B) V' with the left factor in col(phi) (phi=None leaves it
    free).  Returns the refolded predicted tensor.
    """
    y_obs = np.asarray(y_obs, dtype=np.float64)
    dims = y_obs.shape
    n = dims[0]
    m = tz.unfold(y_obs, 1)
    wm = tz.unfold(np.asarray(omega) * np.asarray(getattr(w, "w", w)), 1)
    if not 1 <= r1 <= min(n, m.shape[1]):
        raise ValueError(f"rank {r1} infeasible for unfolded shape {m.shape}")
    if phi is None:
        phi = np.eye(n)
    phi = np.asarray(phi, dtype=np.float64)
    d = phi.shape[1]
    # initialize the subject factor from the weighted matrix, sieve-projected
    u1, _, _ = tz.hosvd(np.reshape(m * wm, dims, order="F"), (r1, 1, 1))
    left = completion.stiefel_project(
        phi @ np.linalg.lstsq(phi, u1, rcond=None)[0]
    )
    ridge = 1e-10
    last = np.inf
    v = None
    for _ in range(max_iters):
        # V-step: per-column weighted least squares against the left factor
        a = np.einsum("ic,ir,is->crs", wm, left, left, optimize=True)
        a += ridge * np.eye(r1)
        b = np.einsum("ic,ic,ir->cr", wm, m, left, optimize=True)
        v = np.linalg.solve(a, b[..., None])[..., 0]
        # B-step: coupled normal equations over the sieve coefficients
        s = np.einsum("ic,cr,cs->irs", wm, v, v, optimize=True)
        t_op = np.einsum("ip,iq,irs->prqs", phi, phi, s, optimize=True)
        q = np.einsum("ic,ic,cr->ir", wm, m, v, optimize=True)
        rhs = np.einsum("ip,ir->pr", phi, q)
        t_mat = t_op.reshape(d * r1, d * r1) + ridge * np.eye(d * r1)
        bcoef = np.linalg.solve(t_mat, rhs.reshape(-1)).reshape(d, r1)
        left = phi @ bcoef
        pred = left @ v.T
        loss = 0.5 * float(np.sum(wm * (pred - m) ** 2))
        if last - loss < tol * max(last, 1e-300):
            break
        last = loss
    return tz.fold(left @ v.T, 1, dims)


def kernel_weights(x0_test, x0_train, sigma: float = 1.0) -> np.ndarray:
    """Row-stochastic Gaussian kernel weights exp(-||xi - xj||^2 / (2 sigma^2)),
    normalized over the training subjects."""
    if sigma <= 0:
        raise ValueError("kernel bandwidth must be positive")
    x0_test = np.atleast_2d(np.asarray(x0_test, dtype=np.float64))
    x0_train = np.atleast_2d(np.asarray(x0_train, dtype=np.float64))
    d2 = (
        np.sum(x0_test**2, axis=1)[:, None]
        - 2.0 * x0_test @ x0_train.T
        + np.sum(x0_train**2, axis=1)[None, :]
    )
    logw = -d2 / (2.0 * sigma**2)
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class CvPlan:
    """Subject-level V-fold split."""

    folds: int
    seed: int = 0

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("need at least 2 folds")


def make_folds(n: int, plan: CvPlan) -> np.ndarray:
    """(n,) fold labels in 0..V-1, a seeded permutation split."""
    if plan.folds > n:
        raise ValueError("more folds than subjects")
    perm = rng_for(plan.seed, "cv-folds").permutation(n)
    labels = np.zeros(n, dtype=np.int64)
    for v, chunk in enumerate(np.array_split(perm, plan.folds)):
        labels[chunk] = v
    return labels


def subset_panel(data: PanelDataset, idx) -> PanelDataset:
    idx = np.asarray(idx)
    return PanelDataset(
        subject_ids=data.subject_ids[idx],
        x0=data.x0[idx],
        x=[m[idx] for m in data.x],
        a=data.a[idx],
        y=data.y[idx],
    )


def cv_evaluate(
    data: PanelDataset,
    k: int,
    sieve_spec: SieveSpec,
    fit_config: completion.FitConfig,
    plan: CvPlan,
    method: str,
    propensity_config: PropensityConfig = PropensityConfig(),
    sigma_kappa: float = 1.0,
    folds: np.ndarray | None = None,
    truncation: float | None = None,
) -> list[dict]:
    """Per-fold training/testing relative errors and treatment effects.

    Returns long-format rows {method, V, fold, split, metric, value} with
    metrics ``l2`` (the unsquared masked relative error) and ``ate`` (all-ones
    versus all-zeros regime).
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    n = data.n_subjects
    if plan.folds > n:
        raise ValueError("more folds than subjects")
    labels = make_folds(n, plan) if folds is None else np.asarray(folds)
    big_k = 2**k
    query = AteQuery(regime_a=big_k - 1, regime_b=0)
    rows = []
    for v in range(plan.folds):
        test_idx = np.where(labels == v)[0]
        train_idx = np.where(labels != v)[0]
        if test_idx.size < 2 or train_idx.size < 2:
            raise ValueError(f"fold {v} leaves fewer than 2 subjects on one side")
        train, test = subset_panel(data, train_idx), subset_panel(data, test_idx)
        fits = fit_all(train, propensity_config)
        weights = weight_tensor(train, fits, k, propensity_config, truncation=truncation)
        omega_tr, yobs_tr = observation_tensor(train, k)
        y_hat_tr, y_hat_te = _fit_and_transfer(
            method, train, test, k, sieve_spec, fit_config, weights, sigma_kappa
        )
        omega_te, yobs_te = observation_tensor(test, k)
        fold_rows = [
            ("train", "l2", masked_relative_error(y_hat_tr, yobs_tr, omega_tr)),
            ("train", "ate", ate(y_hat_tr, query)),
            ("test", "l2", masked_relative_error(y_hat_te, yobs_te, omega_te)),
            ("test", "ate", ate(y_hat_te, query)),
        ]
        rows.extend(
            {"method": method, "V": plan.folds, "fold": v, "split": split,
             "metric": metric, "value": value}
            for split, metric, value in fold_rows
        )
    return rows


def _fit_and_transfer(method, train, test, k, sieve_spec, fit_config, weights, sigma):
    omega, y_obs = observation_tensor(train, k)
    if method == "co-tucker":
        bounds = standardization_bounds(train.x0)
        phi_tr = build_basis(train.x0, sieve_spec, bounds=bounds)
        model, _ = completion.fit(y_obs, omega, weights.w, phi_tr, fit_config)
        phi_te = build_basis(test.x0, sieve_spec, bounds=bounds)
        y_hat_te = tz.tucker_reconstruct(model.core, phi_te @ model.b, model.u2, model.u3)
        return model.tensor(), y_hat_te
    if method == "tucker":
        model, _ = completion.fit(y_obs, omega, weights.w, None, fit_config)
        y_hat_tr = model.tensor()
    elif method == "co-unfold":
        bounds = standardization_bounds(train.x0)
        phi_tr = build_basis(train.x0, sieve_spec, bounds=bounds)
        y_hat_tr = fit_unfolded(y_obs, omega, weights.w, phi_tr, fit_config.rank[0])
    elif method == "hrmsm":
        _, y_hat_tr = fit_hrmsm(train, weights, k)
    h = kernel_weights(test.x0, train.x0, sigma)
    return y_hat_tr, tz.mode_product(y_hat_tr, h, 1)


def aggregate_metric(rows: list[dict], method: str, split: str, metric: str) -> float:
    """Mean of a metric over folds."""
    vals = [
        r["value"]
        for r in rows
        if r["method"] == method and r["split"] == split and r["metric"] == metric
    ]
    if not vals:
        raise ValueError(f"no rows for ({method}, {split}, {metric})")
    return float(np.mean(vals))


def write_metrics_csv(rows: list[dict], path, columns=None) -> None:
    """Long-format metrics CSV; column order is fixed by ``columns`` or taken
    from the first row."""
    if not rows:
        raise ValueError("no metric rows to write")
    columns = list(columns) if columns else list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            out = []
            for c in columns:
                v = row.get(c, "")
                out.append(repr(float(v)) if isinstance(v, float) else v)
            writer.writerow(out)
