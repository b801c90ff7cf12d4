"""Weighted Tucker completion by projected gradient descent, with BIC rank tuning.

The estimator minimizes the weighted squared loss over observed cells

    L = 1/2 * || sqrt(W) o P_Omega(Y - [[G; U1, U2, U3]]) ||_F^2

where the subject loadings ``U1`` are constrained to the column space of a
sieve basis ``phi`` and the time/regime loadings ``U2``, ``U3`` are kept on
the Stiefel manifold.  Each iteration takes a simultaneous gradient step in
all four blocks, re-projects ``U1`` onto col(phi), re-orthonormalizes ``U2``
and ``U3`` by thin QR, and picks the step size by backtracking line search,
which makes the recorded loss trajectory exactly nonincreasing.  ``U1`` is
deliberately left unnormalized between iterations; the core absorbs scale.

Initialization starts from the projected truncated HOSVD of the weighted
observed tensor and, by default, refines it with a rank-continuation pass of
blockwise least squares (kept only when it lowers the loss); see
:func:`initialize` and ``FitConfig.init_sweeps``.  Multilinear ranks are
tuned by a sequential BIC search over rank grids, holding two randomly drawn
candidate ranks fixed while the third is optimized, then revisiting the
other two.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tz
from .seeding import rng_for

ARMIJO_C = 1e-4
MAX_HALVINGS = 30


@dataclass
class TuckerModel:
    """Fitted completion model: core plus subject/time/regime loadings.

    ``u1x`` lives in col(phi); ``b`` are its sieve coefficients so that
    ``u1x = phi @ b`` (b is None when fitted without a sieve basis).
    """

    core: np.ndarray  # (r1, r2, r3)
    u1x: np.ndarray  # (N, r1)
    u2: np.ndarray  # (T, r2)
    u3: np.ndarray  # (K, r3)
    b: np.ndarray | None = None  # (d_phi, r1)

    @property
    def rank(self) -> tuple[int, int, int]:
        return tuple(self.core.shape)

    def tensor(self) -> np.ndarray:
        """The implied completed tensor [[core; u1x, u2, u3]]."""
        return tz.tucker_reconstruct(self.core, self.u1x, self.u2, self.u3)


@dataclass(frozen=True)
class FitConfig:
    """Optimization settings for one completion fit.

    ``init_sweeps`` controls the rank-continuation refinement of the spectral
    initialization: blockwise least-squares sweeps per continuation stage
    before gradient descent (0 disables it).  The refinement is kept only when
    it lowers the loss and respects the entrywise bound, so pathological
    configurations fall back to the plain projected-HOSVD start.
    """

    rank: tuple[int, int, int]
    max_iters: int = 2000
    step: float | str = "line-search"
    tol: float = 1e-9
    tol_window: int = 5
    init_sweeps: int = 4
    mu0: float | None = None
    l0: float | None = None
    seed: int = 0
    renormalize_u1: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if isinstance(self.step, str) and self.step != "line-search":
            raise ValueError("step must be a float or 'line-search'")


@dataclass
class FitReport:
    """What happened during a fit."""

    loss_trajectory: list
    final_loss: float
    n_iters: int
    converged: bool
    selected_rank: tuple | None = None
    bic_table: list | None = None
    warnings: list = field(default_factory=list)


def _weights_array(w) -> np.ndarray:
    return np.asarray(getattr(w, "w", w), dtype=np.float64)


def _check_conformable(y_obs, omega, w):
    y_obs = np.asarray(y_obs, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    w = _weights_array(w)
    if not (y_obs.shape == omega.shape == w.shape):
        raise ValueError(
            f"tensor shapes differ: y {y_obs.shape}, omega {omega.shape}, w {w.shape}"
        )
    if not (np.isfinite(y_obs).all() and np.isfinite(w).all()):
        raise ValueError("non-finite entries in inputs")
    return y_obs, omega, w


def weighted_loss(y_obs, omega, w, model: TuckerModel) -> float:
    """1/2 * sum over observed cells of W * (Y - reconstruction)^2."""
    y_obs, omega, w = _check_conformable(y_obs, omega, w)
    return _loss_of(y_obs, omega * w, model.tensor())


def _loss_of(y_obs, wmask, recon) -> float:
    diff = recon - y_obs
    return 0.5 * float(np.sum(wmask * diff * diff))


def gradients(y_obs, omega, w, model: TuckerModel):
    """Partial gradients of the weighted loss in (core, u1x, u2, u3).

    With R = W o Omega o (reconstruction - Y):
      d core = R x1 U1' x2 U2' x3 U3'
      d U1   = M1(R) (U3 kron U2) M1(core)'   (and cyclically for U2, U3)
    computed via mode products instead of explicit Kronecker factors.
    """
    y_obs, omega, w = _check_conformable(y_obs, omega, w)
    return _gradients_of(y_obs, omega * w, model)


def _gradients_of(y_obs, wmask, model: TuckerModel):
    g, u1, u2, u3 = model.core, model.u1x, model.u2, model.u3
    resid = wmask * (model.tensor() - y_obs)
    r1 = tz.mode_product(resid, u1.T, 1)
    r2 = tz.mode_product(resid, u2.T, 2)
    r3 = tz.mode_product(resid, u3.T, 3)
    d_core = tz.mode_product(tz.mode_product(r1, u2.T, 2), u3.T, 3)
    d_u1 = tz.unfold(tz.mode_product(r2, u3.T, 3), 1) @ tz.unfold(g, 1).T
    d_u2 = tz.unfold(tz.mode_product(r1, u3.T, 3), 2) @ tz.unfold(g, 2).T
    d_u3 = tz.unfold(tz.mode_product(r1, u2.T, 2), 3) @ tz.unfold(g, 3).T
    return d_core, d_u1, d_u2, d_u3


def stiefel_project(u: np.ndarray) -> np.ndarray:
    """Nearest-in-spirit orthonormal basis via thin QR with positive diagonal."""
    q, r = np.linalg.qr(u)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


class _SieveProjector:
    """Applies P_phi without materializing the N x N projector."""

    def __init__(self, phi: np.ndarray | None):
        self.phi = None if phi is None else np.asarray(phi, dtype=np.float64)
        if self.phi is not None:
            gram = self.phi.T @ self.phi
            eigvals = np.linalg.eigvalsh(gram)
            if eigvals[0] <= max(eigvals[-1], 1.0) * 1e-12:
                gram = gram + 1e-10 * np.eye(gram.shape[0])
            self._chol = np.linalg.cholesky(gram)

    def coefficients(self, u: np.ndarray) -> np.ndarray:
        rhs = self.phi.T @ u
        z = np.linalg.solve(self._chol, rhs)
        return np.linalg.solve(self._chol.T, z)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        if self.phi is None:
            return u
        return self.phi @ self.coefficients(u)


def initialize(y_obs, omega, w, phi, rank) -> TuckerModel:
    """Projected truncated HOSVD of the weighted observed tensor.

    U1 is projected onto col(phi) and re-orthonormalized by thin QR (the
    projection destroys orthonormality); the core is the multilinear
    contraction of the weighted tensor against the initial loadings.
    """
    y_obs, omega, w = _check_conformable(y_obs, omega, w)
    y_w = y_obs * omega * w
    u1, u2, u3 = tz.hosvd(y_w, rank)
    proj = _SieveProjector(phi)
    if proj.phi is not None:
        u1 = stiefel_project(proj(u1))
    core = tz.mode_product(
        tz.mode_product(tz.mode_product(y_w, u1.T, 1), u2.T, 2), u3.T, 3
    )
    b = proj.coefficients(u1) if proj.phi is not None else None
    return TuckerModel(core=core, u1x=u1, u2=u2, u3=u3, b=b)


def _ridge_solve(a, b, rel=1e-9):
    """Solve with a trace-scaled ridge; handles batched PSD systems."""
    dim = a.shape[-1]
    if a.ndim > 2:
        scale = np.einsum("...ii->...", a).mean() / dim
    else:
        scale = np.trace(a) / dim
    lam = rel * (abs(float(scale)) + 1.0)
    return np.linalg.solve(a + lam * np.eye(dim), b)


def _als_refine(y_obs, wmask, phi, model: TuckerModel, sweeps: int) -> TuckerModel:
    """Blockwise weighted least squares on the observed cells.

    Each block gets its weighted LS update given the others; the time and
    regime loadings are re-projected onto the Stiefel manifold, after which
    the core is refit so the model stays internally consistent.  The per-row
    solves carry a trace-scaled ridge, which matters for regime rows backed
    by only a handful of observed cells: without it those rows interpolate
    their few (heavily weighted) cells and extrapolate wildly.  Used purely
    as an initialization refinement: the caller keeps the result only if it
    lowers the loss and respects the entrywise bound.
    """
    ii, tt, ll = np.nonzero(wmask)
    w_o = wmask[ii, tt, ll]
    y_o = y_obs[ii, tt, ll]
    g = model.core.copy()
    u1, u2, u3 = model.u1x.copy(), model.u2.copy(), model.u3.copy()
    r1, r2, r3 = g.shape
    n = u1.shape[0]

    def solve_core(u1, u2, u3):
        rows = np.einsum("ma,mb,mc->mabc", u1[ii], u2[tt], u3[ll]).reshape(len(w_o), -1)
        gram = (rows * w_o[:, None]).T @ rows
        rhs = rows.T @ (w_o * y_o)
        return _ridge_solve(gram, rhs).reshape(r1, r2, r3)

    g = solve_core(u1, u2, u3)
    for _ in range(sweeps):
        # subject loadings, solved in sieve-coefficient space when phi is given
        cten = tz.mode_product(tz.mode_product(g, u2, 2), u3, 3)  # (r1, T, K)
        c_cells = cten[:, tt, ll].T  # (M, r1)
        s_i = np.zeros((n, r1, r1))
        q_i = np.zeros((n, r1))
        np.add.at(s_i, ii, w_o[:, None, None] * (c_cells[:, :, None] * c_cells[:, None, :]))
        np.add.at(q_i, ii, (w_o * y_o)[:, None] * c_cells)
        if phi is not None:
            d = phi.shape[1]
            t_op = np.einsum("ip,iq,iab->paqb", phi, phi, s_i, optimize=True)
            rhs1 = np.einsum("ip,ia->pa", phi, q_i).reshape(-1)
            b = _ridge_solve(t_op.reshape(d * r1, d * r1), rhs1, rel=1e-4).reshape(d, r1)
            u1 = phi @ b
        else:
            u1 = _ridge_solve(s_i, q_i[..., None], rel=1e-4)[..., 0]
        # time loadings: independent weighted LS per row; the Stiefel
        # projection changes the (loading, core) pairing, so the core is
        # refit immediately after it to keep the model consistent
        dten = tz.mode_product(tz.mode_product(g, u1, 1), u3, 3)  # (N, r2, K)
        d_cells = dten[ii, :, ll]  # (M, r2)
        a_t = np.zeros((u2.shape[0], r2, r2))
        b_t = np.zeros((u2.shape[0], r2))
        np.add.at(a_t, tt, w_o[:, None, None] * (d_cells[:, :, None] * d_cells[:, None, :]))
        np.add.at(b_t, tt, (w_o * y_o)[:, None] * d_cells)
        u2 = stiefel_project(_ridge_solve(a_t, b_t[..., None], rel=1e-3)[..., 0])
        g = solve_core(u1, u2, u3)
        # regime loadings likewise
        eten = tz.mode_product(tz.mode_product(g, u1, 1), u2, 2)  # (N, T, r3)
        e_cells = eten[ii, tt, :]
        a_l = np.zeros((u3.shape[0], r3, r3))
        b_l = np.zeros((u3.shape[0], r3))
        np.add.at(a_l, ll, w_o[:, None, None] * (e_cells[:, :, None] * e_cells[:, None, :]))
        np.add.at(b_l, ll, (w_o * y_o)[:, None] * e_cells)
        u3 = stiefel_project(_ridge_solve(a_l, b_l[..., None], rel=1e-3)[..., 0])
        g = solve_core(u1, u2, u3)
    return TuckerModel(core=g, u1x=u1, u2=u2, u3=u3)


def _grow_columns(u: np.ndarray, resid_mat: np.ndarray, target: int) -> np.ndarray:
    """Append the top residual-Gram eigendirections orthogonal to ``u``."""
    n, r = u.shape
    if r >= target:
        return u
    gram = resid_mat @ resid_mat.T
    gram = gram - u @ (u.T @ gram) - (gram @ u) @ u.T + u @ (u.T @ gram @ u) @ u.T
    vecs = np.linalg.eigh(gram)[1]
    new = vecs[:, ::-1][:, : target - r]
    return np.linalg.qr(np.column_stack([u, new]))[0][:, :target]


def _rescale_core(model: TuckerModel, y_obs, wmask) -> None:
    recon = model.tensor()
    denom = float(np.sum(wmask * recon * recon))
    if denom > 0:
        scale = float(np.sum(wmask * y_obs * recon)) / denom
        if np.isfinite(scale):
            scaled = model.core * scale
            if _loss_of(y_obs, wmask, recon * scale) < _loss_of(y_obs, wmask, recon):
                model.core = scaled


def _staged_refine(y_obs, wmask, phi, proj, rank, sweeps: int) -> TuckerModel:
    """Rank-continuation refinement: start from the rank-(1,1,1) model spanned
    by constant directions, alternate blockwise least squares, and grow each
    mode toward its target rank along the leading directions of the weighted
    residual.  The observation pattern here (one observed regime per subject
    and time) makes the plain truncated HOSVD nearly uninformative on the
    regime mode, and a direct full-rank fit routinely sticks in poor basins;
    tracking the dominant structure rank by rank does not."""
    n, t_max, big_k = y_obs.shape
    yw = y_obs * wmask
    u1 = np.ones((n, 1)) / np.sqrt(n)
    if proj.phi is not None:
        u1 = stiefel_project(proj(u1))
    u2 = np.ones((t_max, 1)) / np.sqrt(t_max)
    u3 = np.ones((big_k, 1)) / np.sqrt(big_k)
    steps = tuple(max(1, round(r / 4)) for r in rank)

    def contract(u1, u2, u3):
        core = tz.mode_product(
            tz.mode_product(tz.mode_product(yw, u1.T, 1), u2.T, 2), u3.T, 3
        )
        model = TuckerModel(core=core, u1x=u1, u2=u2, u3=u3)
        _rescale_core(model, y_obs, wmask)
        return model

    model = contract(u1, u2, u3)
    while True:
        model = _als_refine(y_obs, wmask, phi, model, sweeps)
        if model.rank == tuple(rank):
            return model
        resid = wmask * (y_obs - model.tensor())
        u1 = _grow_columns(
            stiefel_project(model.u1x), tz.unfold(resid, 1), min(rank[0], model.rank[0] + steps[0])
        )
        if proj.phi is not None:
            u1 = stiefel_project(proj(u1))
        u2 = _grow_columns(model.u2, tz.unfold(resid, 2), min(rank[1], model.rank[1] + steps[1]))
        u3 = _grow_columns(model.u3, tz.unfold(resid, 3), min(rank[2], model.rank[2] + steps[2]))
        model = contract(u1, u2, u3)


def _incoherence_project(model: TuckerModel, mu0, l0):
    """Project toward the restricted domain: row-norm caps on the orthonormal
    loadings (``mu0``) and an entrywise bound on the reconstruction (``l0``,
    enforced by shrinking the core).  The entrywise form is what the
    restricted domain buys analytically, and it is the constraint that stops
    rarely observed regime rows from extrapolating wildly."""
    if mu0 is not None:
        for u, dim in ((model.u2, model.u2.shape[0]), (model.u3, model.u3.shape[0])):
            r = u.shape[1]
            bound = mu0 * r / dim
            sq = np.sum(u * u, axis=1)
            over = sq > bound
            if over.any():
                u[over] *= np.sqrt(bound / sq[over])[:, None]
    if l0 is not None:
        peak = float(np.abs(model.tensor()).max())
        if peak > l0 > 0:
            model.core *= l0 / peak


def fit(y_obs, omega, w, phi, config: FitConfig) -> tuple[TuckerModel, FitReport]:
    """Projected gradient descent on the weighted completion loss.

    Runs until the relative loss decrease over ``tol_window`` iterations
    drops below ``tol``, the line search stalls, or ``max_iters`` is hit.
    Raises on non-finite inputs and aborts with a diagnostic if the loss
    turns NaN (which a line-search run cannot produce).
    """
    y_obs, omega, w = _check_conformable(y_obs, omega, w)
    model = initialize(y_obs, omega, w, phi, config.rank)
    proj = _SieveProjector(phi)
    wmask = omega * w
    report_warnings: list = []
    # the HOSVD core inherits the weighted tensor's scale; the closed-form
    # optimal rescale keeps the first backtracking window productive
    recon = model.tensor()
    denom = float(np.sum(wmask * recon * recon))
    if denom > 0:
        scale = float(np.sum(wmask * y_obs * recon)) / denom
        if np.isfinite(scale):
            scaled = TuckerModel(core=model.core * scale, u1x=model.u1x,
                                 u2=model.u2, u3=model.u3)
            if _loss_of(y_obs, wmask, scaled.tensor()) < _loss_of(
                y_obs, wmask, model.tensor()
            ):
                model = scaled
    if config.l0 is not None or config.mu0 is not None:
        _incoherence_project(model, config.mu0, config.l0)
    loss = _loss_of(y_obs, wmask, model.tensor())
    if config.init_sweeps > 0:
        refined = _staged_refine(y_obs, wmask, None if phi is None else proj.phi,
                                 proj, config.rank, config.init_sweeps)
        refined_loss = _loss_of(y_obs, wmask, refined.tensor())
        within_bound = config.l0 is None or float(
            np.abs(refined.tensor()).max()
        ) <= 1.001 * config.l0
        if np.isfinite(refined_loss) and refined_loss < loss and within_bound:
            model, loss = refined, refined_loss
    # loss at float rounding level means the initialization already interpolates
    interp_floor = 1e-24 * max(float(np.sum(wmask * y_obs * y_obs)), 1e-300)
    traj = [loss]
    converged = False
    line_search = config.step == "line-search"
    eta_start = 1.0
    it = 0
    for it in range(1, config.max_iters + 1):
        if loss <= interp_floor:
            converged = True
            break
        grads = _gradients_of(y_obs, wmask, model)
        gnorm2 = sum(float(np.sum(g * g)) for g in grads)
        if gnorm2 == 0.0:
            converged = True
            break
        stepped = None
        if line_search:
            # warm start at twice the last accepted step, capped at 1
            eta = eta_start
            for _ in range(MAX_HALVINGS + 1):
                cand = _apply_step(model, grads, eta, proj, config)
                cand_loss = _loss_of(y_obs, wmask, cand.tensor())
                if np.isnan(cand_loss):
                    eta *= 0.5
                    continue
                if cand_loss <= loss - ARMIJO_C * eta * gnorm2:
                    stepped = (cand, cand_loss)
                    break
                eta *= 0.5
            if stepped is None:
                converged = True  # line search stalled at a stationary point
                break
            eta_start = min(1.0, 2.0 * eta)
        else:
            cand = _apply_step(model, grads, float(config.step), proj, config)
            cand_loss = _loss_of(y_obs, wmask, cand.tensor())
            if np.isnan(cand_loss):
                raise FloatingPointError(
                    f"loss became NaN at iteration {it} with fixed step {config.step}"
                )
            stepped = (cand, cand_loss)
        model, loss = stepped
        traj.append(loss)
        if len(traj) > config.tol_window:
            ref = traj[-1 - config.tol_window]
            if ref - traj[-1] < config.tol * max(ref, 1e-300):
                converged = True
                break
    if proj.phi is not None:
        model.b = proj.coefficients(model.u1x)
    return model, FitReport(
        loss_trajectory=traj,
        final_loss=traj[-1],
        n_iters=it,
        converged=converged,
        warnings=report_warnings,
    )


def _apply_step(model, grads, eta, proj, config):
    d_core, d_u1, d_u2, d_u3 = grads
    u1 = proj(model.u1x - eta * d_u1)
    if config.renormalize_u1:
        u1 = stiefel_project(u1)
    u2 = stiefel_project(model.u2 - eta * d_u2)
    u3 = stiefel_project(model.u3 - eta * d_u3)
    cand = TuckerModel(core=model.core - eta * d_core, u1x=u1, u2=u2, u3=u3)
    if config.mu0 is not None or config.l0 is not None:
        _incoherence_project(cand, config.mu0, config.l0)
    return cand


def bic(y_obs, omega, w, model: TuckerModel) -> float:
    """log of the weighted residual sum of squares plus a degrees-of-freedom
    penalty log(NTK)/(NTK) * {r1 r2 r3 + (N-r1) r1 + (T-r2) r2 + (K-r3) r3}."""
    y_obs, omega, w = _check_conformable(y_obs, omega, w)
    n, t, k = y_obs.shape
    r1, r2, r3 = model.rank
    resid = 2.0 * _loss_of(y_obs, omega * w, model.tensor())
    if resid < 1e-300:
        warnings.warn("zero weighted residual; flooring before the log", stacklevel=2)
        resid = 1e-300
    df = r1 * r2 * r3 + (n - r1) * r1 + (t - r2) * r2 + (k - r3) * r3
    ntk = n * t * k
    return float(np.log(resid) + np.log(ntk) / ntk * df)


def degrees_of_freedom(rank, dims) -> int:
    r1, r2, r3 = rank
    n, t, k = dims
    return r1 * r2 * r3 + (n - r1) * r1 + (t - r2) * r2 + (k - r3) * r3


def tune_ranks(
    y_obs, omega, w, phi, grids, config: FitConfig, sweeps: int = 1
) -> tuple[tuple[int, int, int], list]:
    """Sequential BIC search over per-mode rank grids.

    Draws random candidates for the first two ranks (seeded from the config),
    tunes the third against BIC with those fixed, then re-tunes each of the
    other two in turn.  Ties break toward the smaller rank.  Returns the
    selected rank and the evaluated (r1, r2, r3, bic) table.
    """
    y_obs, omega, w = _check_conformable(y_obs, omega, w)
    dims = y_obs.shape
    grids = [sorted(set(int(r) for r in g)) for g in grids]
    if any(len(g) == 0 for g in grids):
        raise ValueError("rank grids must be nonempty")
    feasible = []
    for mode, g in enumerate(grids):
        max_r = dims[mode] if phi is None or mode != 0 else min(
            dims[0], np.asarray(phi).shape[1]
        )
        keep = [r for r in g if 1 <= r <= max_r]
        dropped = sorted(set(g) - set(keep))
        if dropped:
            warnings.warn(
                f"mode-{mode + 1} rank candidates {dropped} infeasible for dims {dims}; skipped",
                stacklevel=2,
            )
        if not keep:
            raise ValueError(f"no feasible rank candidates for mode {mode + 1}")
        feasible.append(keep)
    rng = rng_for(config.seed, "rank-tuning")
    current = [
        int(rng.choice(feasible[0])),
        int(rng.choice(feasible[1])),
        None,
    ]
    table = []
    cache = {}

    def score(rank):
        rank = tuple(int(r) for r in rank)
        if rank not in cache:
            model, _ = fit(y_obs, omega, w, phi, _with_rank(config, rank))
            cache[rank] = bic(y_obs, omega, w, model)
            table.append((rank[0], rank[1], rank[2], cache[rank]))
        return cache[rank]

    order = [2, 0, 1]  # tune r3 first, then r1, then r2
    for sweep in range(sweeps):
        for mode in order:
            if current[mode] is None:
                current[mode] = feasible[mode][0]
            best_r, best_val = None, np.inf
            for r in feasible[mode]:
                cand = list(current)
                cand[mode] = r
                val = score(cand)
                if val < best_val - 1e-12 or (
                    abs(val - best_val) <= 1e-12 and (best_r is None or r < best_r)
                ):
                    best_r, best_val = r, val
            current[mode] = best_r
    return tuple(current), table


def _with_rank(config: FitConfig, rank):
    from dataclasses import replace

    return replace(config, rank=tuple(int(r) for r in rank))


def save_model(directory, model: TuckerModel, extra: dict | None = None) -> None:
    """Write the model as a directory: JSON manifest plus one tensor container
    per component (matrices stored with a trailing unit mode)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n, t, k = model.u1x.shape[0], model.u2.shape[0], model.u3.shape[0]
    manifest = {
        "dims": [n, t, k],
        "rank": list(model.rank),
        "components": ["core", "u1x", "u2", "u3"] + (["b"] if model.b is not None else []),
    }
    if extra:
        manifest.update(extra)
    tz.write_tensor(directory / "core.tnsr", model.core)
    for name, mat in (("u1x", model.u1x), ("u2", model.u2), ("u3", model.u3)):
        tz.write_tensor(directory / f"{name}.tnsr", mat[:, :, None])
    if model.b is not None:
        tz.write_tensor(directory / "b.tnsr", model.b[:, :, None])
    with open(directory / "model.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(directory) -> TuckerModel:
    """Inverse of :func:`save_model`."""
    directory = Path(directory)
    with open(directory / "model.json") as fh:
        manifest = json.load(fh)
    core = tz.read_tensor(directory / "core.tnsr")
    mats = {}
    for name in ("u1x", "u2", "u3"):
        mats[name] = tz.read_tensor(directory / f"{name}.tnsr")[:, :, 0]
    b = None
    if "b" in manifest.get("components", []):
        b = tz.read_tensor(directory / "b.tnsr")[:, :, 0]
    return TuckerModel(core=core, u1x=mats["u1x"], u2=mats["u2"], u3=mats["u3"], b=b)
