"""Time-specific penalized logistic regression and the inverse-probability weight tensor.

Each time point gets its own logistic model for treatment given the
accumulated history.  The folded-concave (SCAD) or lasso penalty is handled
by iteratively reweighted least squares with a local linear approximation of
the penalty: every outer pass majorizes the penalty by a weighted L1 term at
the current coefficients and runs coordinate descent on the resulting
quadratic problem.  The intercept is never penalized.

The weight tensor inverts, for each observed (subject, time) cell, the product
of the propensity factors of the treatments actually received over the
regime window; factors at nonpositive times count as probability one.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .panel import PanelDataset, history_matrix

PENALTIES = ("none", "lasso", "scad")

PROB_FLOOR = 1e-6
COEF_CAP = 30.0


def scad_penalty(theta, lam: float, eps: float = 3.7):
    """SCAD penalty value.

    Piecewise: ``lam*|t|`` up to ``lam``, then the quadratic smoothing branch
    ``(2*eps*lam*|t| - t^2 - lam^2) / (2*(eps-1))``, flattening at
    ``lam^2*(eps+1)/2`` beyond ``eps*lam``.  This is the antiderivative of the
    usual SCAD derivative, which makes the three branches join continuously.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if eps <= 2:
        raise ValueError("SCAD shape parameter must exceed 2")
    t = np.abs(np.asarray(theta, dtype=np.float64))
    inner = lam * t
    middle = (2 * eps * lam * t - t * t - lam * lam) / (2.0 * (eps - 1.0))
    outer = lam * lam * (eps + 1.0) / 2.0
    out = np.where(t < lam, inner, np.where(t <= eps * lam, middle, outer))
    return out if out.ndim else float(out)


def scad_derivative(theta, lam: float, eps: float = 3.7):
    """d/d|t| of :func:`scad_penalty`: lam inside, linearly decaying to 0."""
    t = np.abs(np.asarray(theta, dtype=np.float64))
    out = np.where(
        t < lam, lam, np.maximum(eps * lam - t, 0.0) / (eps - 1.0)
    )
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class PropensityConfig:
    """How the treatment mechanism is estimated at each time point."""

    penalty: str = "scad"
    lam: float | None = None  # None: the default_lambda rule per time point
    scad_eps: float = 3.7
    lag: int = 2
    include_baseline: bool = True
    include_covariates: bool = True
    include_treatments: bool = True
    include_outcomes: bool = True
    max_iter: int = 200
    tol: float = 1e-8
    coef_cap: float = COEF_CAP

    def __post_init__(self):
        if self.penalty not in PENALTIES:
            raise ValueError(f"penalty must be one of {PENALTIES}")
        if self.lag < 0:
            raise ValueError("history lag must be >= 0")


@dataclass
class FittedPropensity:
    """Per-time fitted logistic coefficients (intercept first)."""

    t: int
    coef: np.ndarray
    penalty: str
    lam: float
    n_iter: int
    converged: bool
    capped: bool = False


def design_matrix(data: PanelDataset, t: int, config: PropensityConfig) -> np.ndarray:
    """History features used by the time-``t`` treatment model."""
    full = history_matrix(data, t, config.lag)
    d0 = data.d0
    d = data.x[0].shape[1]
    lag = config.lag
    keep = []
    if config.include_baseline:
        keep.extend(range(d0))
    if config.include_covariates:
        keep.extend(range(d0, d0 + lag * d))
    if config.include_treatments:
        keep.extend(range(d0 + lag * d, d0 + lag * d + lag))
    if config.include_outcomes:
        keep.extend(range(d0 + lag * d + lag, d0 + lag * d + 2 * lag))
    return full[:, keep]


def default_lambda(data: PanelDataset, t: int, config: PropensityConfig = PropensityConfig()) -> float:
    """Default penalty level 0.5 * sqrt(log(d_H) / N); shrinks at the root-N
    rate in the sample size and grows only logarithmically in the history
    dimension."""
    n = data.n_subjects
    if n < 10:
        raise ValueError("need at least 10 subjects for the default penalty rule")
    d_h = max(design_matrix(data, t, config).shape[1], 2)
    return 0.5 * np.sqrt(np.log(d_h) / n)


def penalized_objective(x, y, coef, lam: float, config: PropensityConfig) -> float:
    """Average negative log-likelihood plus the penalty, evaluated exactly."""
    eta = coef[0] + x @ coef[1:]
    # log(1 + e^eta) - y*eta, computed stably
    loss = float(np.mean(np.logaddexp(0.0, eta) - y * eta))
    t = np.abs(coef[1:])
    if config.penalty == "none" or lam == 0:
        pen = 0.0
    elif config.penalty == "lasso":
        pen = float(lam * t.sum())
    else:
        pen = float(np.sum(scad_penalty(t, lam, config.scad_eps)))
    return loss + pen


def _coordinate_descent(x, y, coef, lam_vec, n_pass=30, tol=1e-10):
    """Weighted-lasso pass on the IRLS quadratic approximation at ``coef``."""
    n, p = x.shape
    eta = coef[0] + x @ coef[1:]
    mu = expit(eta)
    w = np.maximum(mu * (1.0 - mu), 1e-6)
    z = eta + (y - mu) / w
    sw = w / n
    col_sq = sw @ (x * x)
    r = z - eta
    out = coef.copy()
    for _ in range(n_pass):
        delta = 0.0
        # intercept (unpenalized)
        num = np.sum(sw * r) + np.sum(sw) * out[0]
        new0 = num / np.sum(sw)
        r += out[0] - new0
        delta = max(delta, abs(new0 - out[0]))
        out[0] = new0
        for j in range(p):
            cj = out[j + 1]
            rho = sw @ (x[:, j] * r) + col_sq[j] * cj
            if col_sq[j] <= 0:
                new = 0.0
            else:
                new = np.sign(rho) * max(abs(rho) - lam_vec[j], 0.0) / col_sq[j]
            if new != cj:
                r += x[:, j] * (cj - new)
                delta = max(delta, abs(new - cj))
                out[j + 1] = new
        if delta < tol:
            break
    return out


def fit_propensity(
    data: PanelDataset, t: int, config: PropensityConfig = PropensityConfig()
) -> FittedPropensity:
    """Fit the time-``t`` penalized logistic treatment model.

    Raises if only one treatment arm is present at ``t``.  Complete or
    near-complete separation is degraded gracefully by capping the coefficient
    sup-norm (flagged on the result) rather than diverging.
    """
    if not 1 <= t <= data.n_times:
        raise ValueError(f"time {t} outside panel range 1..{data.n_times}")
    y = data.a[:, t - 1].astype(np.float64)
    if y.min() == y.max():
        raise ValueError(
            f"time {t} has a single treatment arm; merge adjacent periods or drop it"
        )
    x = design_matrix(data, t, config)
    lam = config.lam if config.lam is not None else default_lambda(data, t, config)
    p = x.shape[1]
    coef = np.zeros(p + 1)
    coef[0] = np.log(y.mean() / (1.0 - y.mean()))
    obj = penalized_objective(x, y, coef, lam, config)
    converged = False
    capped = False
    it = 0
    for it in range(1, config.max_iter + 1):
        lam_vec = _lla_weights(coef, lam, config)
        cand = _coordinate_descent(x, y, coef, lam_vec)
        cand_obj = penalized_objective(x, y, cand, lam, config)
        # keep the exact penalized objective monotone: back off toward the
        # current iterate when the surrogate step overshoots
        step = cand - coef
        halvings = 0
        while cand_obj > obj + 1e-14 and halvings < 30:
            step *= 0.5
            cand = coef + step
            cand_obj = penalized_objective(x, y, cand, lam, config)
            halvings += 1
        if cand_obj > obj + 1e-14:
            converged = True
            break
        move = float(np.max(np.abs(cand - coef)))
        coef, obj = cand, cand_obj
        if np.max(np.abs(coef)) > config.coef_cap:
            coef = np.clip(coef, -config.coef_cap, config.coef_cap)
            capped = True
            break
        if move < config.tol:
            converged = True
            break
    if capped:
        warnings.warn(
            f"time {t}: treatment model close to separation; coefficients capped "
            f"at {config.coef_cap}",
            stacklevel=2,
        )
    return FittedPropensity(
        t=t, coef=coef, penalty=config.penalty, lam=float(lam), n_iter=it,
        converged=converged, capped=capped,
    )


def _lla_weights(coef, lam, config):
    """Per-coordinate L1 weights from the local linear approximation."""
    theta = np.abs(coef[1:])
    if config.penalty == "none" or lam == 0:
        return np.zeros_like(theta)
    if config.penalty == "lasso":
        return np.full_like(theta, lam)
    return scad_derivative(theta, lam, config.scad_eps)


def fit_all(data: PanelDataset, config: PropensityConfig = PropensityConfig()) -> list:
    """Fit one treatment model per time point."""
    return [fit_propensity(data, t, config) for t in range(1, data.n_times + 1)]


def predicted_probabilities(
    data: PanelDataset, fits: list, config: PropensityConfig = PropensityConfig()
) -> np.ndarray:
    """(N, T) fitted treatment probabilities, clamped away from 0 and 1."""
    n, t_max = data.n_subjects, data.n_times
    probs = np.zeros((n, t_max))
    clamped = 0
    for fit in fits:
        x = design_matrix(data, fit.t, config)
        p = expit(fit.coef[0] + x @ fit.coef[1:])
        bad = (p < PROB_FLOOR) | (p > 1.0 - PROB_FLOOR)
        clamped += int(bad.sum())
        probs[:, fit.t - 1] = np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    if clamped:
        warnings.warn(
            f"{clamped} fitted propensities clamped to [{PROB_FLOOR}, 1-{PROB_FLOOR}]; "
            "the overlap condition looks strained",
            stacklevel=2,
        )
    return probs


@dataclass
class WeightTensor:
    """Inverse-probability weights on the observed cells; zero elsewhere."""

    w: np.ndarray  # (N, T, K)
    truncation: float | None = None
    n_clamped: int = 0

    @property
    def dims(self):
        return self.w.shape


def weights_from_probabilities(
    probs: np.ndarray,
    treatments: np.ndarray,
    k: int,
    truncation: float | None = None,
) -> WeightTensor:
    """Weight tensor from per-(subject, time) treatment probabilities.

    ``probs[i, t-1]`` is P(A_{i,t}=1 | history).  Each observed cell gets the
    inverse product of the realized-arm probabilities over its length-``k``
    window (factors before time 1 count as 1); all other cells stay zero.
    """
    probs = np.asarray(probs, dtype=np.float64)
    a = np.asarray(treatments)
    n, t_max = a.shape
    if probs.shape != (n, t_max):
        raise ValueError("probability matrix must have shape (N, T)")
    if not 1 <= k <= t_max:
        raise ValueError(f"history length k={k} must lie in 1..T={t_max}")
    clamped = int(((probs < PROB_FLOOR) | (probs > 1 - PROB_FLOOR)).sum())
    probs = np.clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    realized = np.where(a == 1, probs, 1.0 - probs)
    # cumulative log-products over the trailing window of length k
    logs = np.log(realized)
    csum = np.concatenate([np.zeros((n, 1)), np.cumsum(logs, axis=1)], axis=1)
    weights_it = np.zeros((n, t_max))
    for t in range(1, t_max + 1):
        start = max(t - k, 0)
        weights_it[:, t - 1] = np.exp(-(csum[:, t] - csum[:, start]))
    if truncation is not None:
        weights_it = np.clip(weights_it, 1.0, truncation)
    big_k = 2**k
    w = np.zeros((n, t_max, big_k))
    codes = _codes_from_treatments(a, k)
    ii, tt = np.meshgrid(np.arange(n), np.arange(t_max), indexing="ij")
    w[ii, tt, codes] = weights_it
    return WeightTensor(w=w, truncation=truncation, n_clamped=clamped)


def _codes_from_treatments(a: np.ndarray, k: int) -> np.ndarray:
    n, t_max = a.shape
    padded = np.zeros((n, t_max + k - 1), dtype=np.int64)
    padded[:, k - 1 :] = a
    codes = np.zeros((n, t_max), dtype=np.int64)
    for j in range(k):
        codes = (codes << 1) | padded[:, j : j + t_max]
    return codes


def weight_tensor(
    data: PanelDataset,
    fits: list,
    k: int,
    config: PropensityConfig = PropensityConfig(),
    truncation: float | None = None,
) -> WeightTensor:
    """Estimated weight tensor from fitted per-time treatment models."""
    if len(fits) != data.n_times:
        raise ValueError("need one fitted model per time point")
    probs = predicted_probabilities(data, fits, config)
    return weights_from_probabilities(probs, data.a, k, truncation=truncation)


def serialize_fits_csv(fits: list, path) -> None:
    """Write fitted models as CSV rows (t, coef_index, value, penalty, lambda);
    index 0 is the intercept."""
    import csv as _csv

    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["t", "coef_index", "value", "penalty", "lambda"])
        for fit in fits:
            for j, v in enumerate(fit.coef):
                writer.writerow([fit.t, j, repr(float(v)), fit.penalty, repr(fit.lam)])


def load_fits_csv(path) -> list:
    """Inverse of :func:`serialize_fits_csv`."""
    import csv as _csv

    rows = {}
    meta = {}
    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        if header != ["t", "coef_index", "value", "penalty", "lambda"]:
            raise ValueError(f"{path}: unexpected propensity CSV header {header}")
        for t, j, v, pen, lam in reader:
            rows.setdefault(int(t), {})[int(j)] = float(v)
            meta[int(t)] = (pen, float(lam))
    fits = []
    for t in sorted(rows):
        coefs = rows[t]
        coef = np.array([coefs[j] for j in range(len(coefs))])
        pen, lam = meta[t]
        fits.append(
            FittedPropensity(
                t=t, coef=coef, penalty=pen, lam=lam, n_iter=0, converged=True
            )
        )
    return fits
