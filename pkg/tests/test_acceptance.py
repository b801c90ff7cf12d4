"""Acceptance suite: one test per criterion, each printing a PASS line.

The heavy simulation grids are computed once in module-scoped fixtures and
shared between the criteria that read them.  Run with ``pytest -s`` to see
the per-criterion lines and diagnostic numbers as they complete.
"""
import time

import numpy as np
import pytest
from scipy.special import expit

from tmsm import cli
from tmsm import completion as cp
from tmsm import evaluate as ev
from tmsm import panel
from tmsm import propensity as pr
from tmsm import simulate as sb
from tmsm import tensor as tz
from tmsm.seeding import derive_seed
from tmsm.sieve import SieveSpec, build_basis


def _median(rows, outcome, n, method, metric):
    vals = [r["value"] for r in rows
            if r["outcome"] == outcome and r["n"] == n
            and r["method"] == method and r["metric"] == metric]
    assert vals, (outcome, n, method, metric)
    return float(np.median(vals))


@pytest.fixture(scope="module")
def trend_rows():
    """Criterion 7/9 grid: M1+A1 and M2+A1, N in {100,200,300}, 20 reps."""
    designs = [
        sb.SimDesign(outcome=outcome, assignment="A1", n_subjects=n,
                     n_times=10, k=5, seed=77, reps=20)
        for outcome in ("M1", "M2") for n in (100, 200, 300)
    ]
    with np.errstate(all="ignore"):
        return sb.run_experiment(designs, ["co-tucker", "hrmsm"])


@pytest.fixture(scope="module")
def gamma_rows():
    """Criterion 8 grid: M2-gamma at gamma_sd in {0,5,20}, N=300, 20 reps."""
    designs = [
        sb.SimDesign(outcome="M2-gamma", assignment="A1", n_subjects=300,
                     n_times=10, k=5, gamma_sd=gsd, seed=88, reps=20)
        for gsd in (0.0, 5.0, 20.0)
    ]
    with np.errstate(all="ignore"):
        return sb.run_experiment(designs, ["tucker", "co-tucker"])


def test_criterion_01_tensor_algebra_oracles():
    start = time.monotonic()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        dims = tuple(rng.integers(1, 9, size=3))
        x = rng.standard_normal(dims)
        for mode in (1, 2, 3):
            assert np.array_equal(tz.fold(tz.unfold(x, mode), mode, dims), x)
        # mode-product definition, brute force on mode 2
        r = int(rng.integers(1, 4))
        u = rng.standard_normal((r, dims[1]))
        got = tz.mode_product(x, u, 2)
        brute = np.einsum("ijl,bj->ibl", x, u)
        worst = max(worst, float(np.abs(got - brute).max()))
        # Kronecker unfolding identity on a random Tucker triple
        ranks = tuple(int(rng.integers(1, min(d, 3) + 1)) for d in dims)
        g = rng.standard_normal(ranks)
        u1 = rng.standard_normal((dims[0], ranks[0]))
        u2 = rng.standard_normal((dims[1], ranks[1]))
        u3 = rng.standard_normal((dims[2], ranks[2]))
        full = tz.tucker_reconstruct(g, u1, u2, u3)
        rhs = u1 @ tz.unfold(g, 1) @ np.kron(u3, u2).T
        worst = max(worst, float(np.abs(tz.unfold(full, 1) - rhs).max()))
    elapsed = time.monotonic() - start
    assert worst < 1e-10
    assert elapsed < 5.0
    print(f"\nPASS criterion 1: tensor oracle equivalence "
          f"(max dev {worst:.2e}, {elapsed:.1f}s)")


def test_criterion_02_gradient_verification():
    start = time.monotonic()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        dims = tuple(rng.integers(3, 7, size=3))
        ranks = tuple(int(rng.integers(1, 4)) for _ in range(3))
        y = rng.standard_normal(dims)
        omega = (rng.uniform(size=dims) < 0.6).astype(float)
        w = np.where(omega > 0, rng.uniform(0.5, 4.0, dims), 0.0)
        model = cp.TuckerModel(
            core=rng.standard_normal(ranks),
            u1x=rng.standard_normal((dims[0], ranks[0])),
            u2=np.linalg.qr(rng.standard_normal((dims[1], ranks[1])))[0],
            u3=np.linalg.qr(rng.standard_normal((dims[2], ranks[2])))[0],
        )
        grads = cp.gradients(y * omega, omega, w, model)
        params = [model.core, model.u1x, model.u2, model.u3]
        h = 1e-6
        for b, (p, g) in enumerate(zip(params, grads)):
            for idx in np.ndindex(p.shape):
                pp = [q.copy() for q in params]
                pp[b][idx] += h
                up = cp.weighted_loss(y * omega, omega, w, cp.TuckerModel(*pp))
                pp[b][idx] -= 2 * h
                dn = cp.weighted_loss(y * omega, omega, w, cp.TuckerModel(*pp))
                fd = (up - dn) / (2 * h)
                worst = max(worst, abs(fd - g[idx]) / max(1e-8, abs(fd), abs(g[idx])))
    elapsed = time.monotonic() - start
    assert worst < 1e-5
    assert elapsed < 30.0
    print(f"\nPASS criterion 2: gradient verification "
          f"(max rel dev {worst:.2e}, {elapsed:.1f}s)")


@pytest.fixture(scope="module")
def recovery_runs():
    runs = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n = t_max = 40
        big_k, dphi = 8, 6
        phi = rng.standard_normal((n, dphi))
        u1 = np.linalg.qr(phi @ rng.standard_normal((dphi, 2)))[0]
        u2 = np.linalg.qr(rng.standard_normal((t_max, 2)))[0]
        u3 = np.linalg.qr(rng.standard_normal((big_k, 2)))[0]
        y_star = tz.tucker_reconstruct(5 * rng.standard_normal((2, 2, 2)), u1, u2, u3)
        omega = (rng.uniform(size=y_star.shape) < 0.3).astype(float)
        config = cp.FitConfig(rank=(2, 2, 2), max_iters=500, tol=1e-13)
        model, report = cp.fit(y_star * omega, omega, omega, phi, config)
        err = float(np.linalg.norm(model.tensor() - y_star) / np.linalg.norm(y_star))
        runs.append((err, report))
    return runs


def test_criterion_03_planted_exact_recovery(recovery_runs):
    start = time.monotonic()
    errs = [err for err, _ in recovery_runs]
    hits = sum(e < 1e-3 for e in errs)
    assert hits >= 19, errs
    print(f"\nPASS criterion 3: exact recovery ({hits}/20 seeds below 1e-3, "
          f"median err {np.median(errs):.2e})")


def test_criterion_04_monotone_loss(recovery_runs):
    checked = 0
    for _, report in recovery_runs:
        traj = np.asarray(report.loss_trajectory)
        assert np.all(np.diff(traj) <= 0.0)
        checked += 1
    # also a weighted, noisy fit
    rng = np.random.default_rng(404)
    y = rng.standard_normal((20, 10, 6))
    omega = (rng.uniform(size=y.shape) < 0.5).astype(float)
    w = np.where(omega > 0, rng.uniform(1, 6, y.shape), 0.0)
    _, report = cp.fit(y * omega, omega, w, None,
                       cp.FitConfig(rank=(2, 2, 2), max_iters=300))
    traj = np.asarray(report.loss_trajectory)
    assert np.all(np.diff(traj) <= 0.0)
    print(f"\nPASS criterion 4: loss trajectories exactly nonincreasing "
          f"({checked + 1} recorded fits)")


def _scad_run(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 20))
    y = (rng.uniform(size=n) < expit(4.0 * x[:, 0] - 4.0 * x[:, 1])).astype(int)
    data = panel.PanelDataset(subject_ids=np.arange(n), x0=x,
                              x=[np.zeros((n, 1))], a=y.reshape(n, 1),
                              y=np.zeros((n, 1)))
    config = pr.PropensityConfig(penalty="scad", lam=None, lag=0,
                                 include_covariates=False,
                                 include_treatments=False,
                                 include_outcomes=False)
    fit = pr.fit_propensity(data, 1, config)
    support = set(np.flatnonzero(fit.coef[1:] != 0))
    truth = np.r_[4.0, -4.0, np.zeros(18)]
    rmse = float(np.sqrt(np.mean((fit.coef[1:] - truth) ** 2)))
    return support == {0, 1}, rmse


def test_criterion_05_scad_selection():
    start = time.monotonic()
    exact = sum(_scad_run(2000, 1000 + r)[0] for r in range(100))
    rmse_1k = np.mean([_scad_run(1000, 2000 + r)[1] for r in range(100)])
    rmse_4k = np.mean([_scad_run(4000, 3000 + r)[1] for r in range(100)])
    elapsed = time.monotonic() - start
    assert exact >= 90
    assert rmse_4k <= 0.75 * rmse_1k
    assert elapsed < 120.0
    print(f"\nPASS criterion 5: SCAD selection ({exact}/100 exact support; "
          f"RMSE ratio {rmse_4k / rmse_1k:.2f}; {elapsed:.0f}s)")


def test_criterion_06_weight_balance():
    design = sb.SimDesign(outcome="M1", assignment="randomized",
                          n_subjects=2000, n_times=6, k=2, d0=4, seed=44)
    result = sb.generate(design)
    weights = sb.oracle_weight_tensor(result, 2)
    worst_z = 0.0
    for t in range(design.n_times):
        avg = weights.w[:, t, :].mean(axis=0)
        mass = avg > 0
        # analytic Monte-Carlo se for a fair design: sqrt((2^window - 1)/N)
        se = np.sqrt((2.0 ** min(t + 1, 2) - 1) / design.n_subjects)
        z = np.abs(avg[mass] - 1.0) / se
        worst_z = max(worst_z, float(z.max()))
    assert worst_z < 3.0
    print(f"\nPASS criterion 6: oracle weight balance (worst |z| {worst_z:.2f})")


def test_criterion_07_simulation_trends(trend_rows):
    lines = []
    for outcome in ("M1", "M2"):
        co = [_median(trend_rows, outcome, n, "co-tucker", "l2_sq")
              for n in (100, 200, 300)]
        hr = [_median(trend_rows, outcome, n, "hrmsm", "l2_sq")
              for n in (100, 200, 300)]
        lines.append(f"{outcome}: co-tucker {co[0]:.4f}/{co[1]:.4f}/{co[2]:.4f} "
                     f"hrmsm {hr[0]:.4f}/{hr[1]:.4f}/{hr[2]:.4f}")
        assert co[0] > co[1] > co[2], (outcome, co)
        if outcome == "M2":
            for n in (100, 200, 300):
                assert _median(trend_rows, outcome, n, "co-tucker", "l2_sq") < \
                    _median(trend_rows, outcome, n, "hrmsm", "l2_sq")
        else:
            for n in (100, 200, 300):
                assert _median(trend_rows, outcome, n, "hrmsm", "l2_sq") <= \
                    _median(trend_rows, outcome, n, "co-tucker", "l2_sq")
    print("\nPASS criterion 7: simulation trends (" + "; ".join(lines) + ")")


def test_criterion_08_covariate_assistance_gap(gamma_rows):
    gaps = []
    for gsd in (0.0, 5.0, 20.0):
        t_med = np.median([r["value"] for r in gamma_rows
                           if r["gamma_sd"] == gsd and r["method"] == "tucker"
                           and r["metric"] == "l2_sq"])
        c_med = np.median([r["value"] for r in gamma_rows
                           if r["gamma_sd"] == gsd and r["method"] == "co-tucker"
                           and r["metric"] == "l2_sq"])
        gaps.append(float(t_med - c_med))
    print(f"\ncriterion 8 gaps (tucker - co-tucker) at gamma_sd 0/5/20: "
          f"{gaps[0]:+.4f} {gaps[1]:+.4f} {gaps[2]:+.4f}")
    assert gaps[0] <= gaps[1] + 1e-12 and gaps[1] <= gaps[2] + 1e-12, (
        "The gap is not nondecreasing: the covariate-orthogonal component is "
        "inside the vanilla model class but outside the sieve span, and it "
        "inflates the shared error denominator, so a competently optimized "
        "vanilla fit must close the gap as gamma grows; see the decisions "
        "ledger for the full analysis."
    )
    print("PASS criterion 8: covariate-assistance gap nondecreasing")


def test_criterion_09_ate_recovery(trend_rows):
    errs = [r["value"] for r in trend_rows
            if r["outcome"] == "M1" and r["n"] == 300
            and r["method"] == "co-tucker" and r["metric"] == "ate_abs_err"]
    assert len(errs) == 20
    rel = float(np.median(errs)) / 7.75
    assert rel < 0.10
    print(f"\nPASS criterion 9: ATE recovery (median relative error {rel:.3f})")


def test_criterion_10_bic_rank_selection():
    start = time.monotonic()
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(9000 + seed)
        n, t_max, big_k = 300, 8, 6
        u1 = np.linalg.qr(rng.standard_normal((n, 3)))[0]
        u2 = np.linalg.qr(rng.standard_normal((t_max, 2)))[0]
        u3 = np.linalg.qr(rng.standard_normal((big_k, 2)))[0]
        y_star = tz.tucker_reconstruct(3 * rng.standard_normal((3, 2, 2)), u1, u2, u3)
        omega = (rng.uniform(size=y_star.shape) < 0.5).astype(float)
        noisy = (y_star + 0.01 * rng.standard_normal(y_star.shape)) * omega
        config = cp.FitConfig(rank=(3, 2, 2), max_iters=250, tol=1e-9, seed=seed)
        rank, _ = cp.tune_ranks(noisy, omega, omega, None,
                                [[1, 3, 5, 7], [2, 4, 6], [2, 3, 6]],
                                config, sweeps=2)
        hits += rank == (3, 2, 2)
    elapsed = time.monotonic() - start
    assert hits >= 80
    print(f"\nPASS criterion 10: BIC rank selection ({hits}/100, {elapsed:.0f}s)")


def test_criterion_11_low_rank_representations():
    results = []
    for outcome, bound in (("M1", (2, 1, 6)), ("M2", (4, 2, 8))):
        design = sb.SimDesign(outcome=outcome, assignment="A1", n_subjects=40,
                              n_times=10, k=5, noise_sd=0.0, seed=101)
        y_star = sb.generate(design).y_star
        worst = 0.0
        for mode in (1, 2, 3):
            s = tz.hosvd_singular_values(y_star, mode)
            beyond = s[bound[mode - 1]:]
            if beyond.size:
                worst = max(worst, float(beyond.max()))
        assert worst < 1e-8, (outcome, worst)
        results.append(f"{outcome} residual {worst:.1e}")
    print(f"\nPASS criterion 11: low-rank representations ({'; '.join(results)})")


def _cv_signature_panel(seed=1, n=60, t_max=8, k=2):
    """Covariate-explained subject factors with a handful of heavy-tailed
    outcome cells; the free-factor baseline chases those cells and
    contaminates its kernel transfers."""
    rng = np.random.default_rng(seed)
    cluster = rng.choice([-1.0, 0.0, 0.0, 1.0], size=n)
    x1 = cluster + 0.05 * rng.standard_normal(n)
    x0 = np.column_stack([x1, rng.uniform(-1, 1, n)])
    phi = build_basis(x0, SieveSpec(order=2, standardize=False))
    b = np.zeros((phi.shape[1], 2))
    b[0, 0] = 0.9
    b[2, 0] = 1.6
    b[1, 1] = 0.4
    u1 = phi @ b
    u2 = np.linalg.qr(rng.standard_normal((t_max, 2)))[0]
    u3 = np.linalg.qr(rng.standard_normal((2**k, 2)))[0]
    core = np.zeros((2, 2, 2))
    core[0, 0, 0] = 6.0
    core[1, 1, 1] = 3.0
    y_star = tz.tucker_reconstruct(core, u1, u2, u3)
    a = rng.integers(0, 2, (n, t_max))
    padded = np.zeros((n, t_max + k - 1), dtype=int)
    padded[:, k - 1:] = a
    codes = np.zeros((n, t_max), dtype=int)
    for j in range(k):
        codes = (codes << 1) | padded[:, j: j + t_max]
    ii, tt = np.meshgrid(np.arange(n), np.arange(t_max), indexing="ij")
    y = y_star[ii, tt, codes] + 0.3 * rng.standard_normal((n, t_max))
    out_idx = rng.choice(n, size=3, replace=False)
    for i in out_idx:
        cells = rng.choice(t_max, size=2, replace=False)
        y[i, cells] += 25.0 * rng.standard_normal(2)
    return panel.PanelDataset(
        subject_ids=np.arange(n), x0=x0,
        x=[rng.standard_normal((n, 1)) for _ in range(t_max)], a=a, y=y)


def test_criterion_12_cv_harness_sanity():
    data = _cv_signature_panel()
    spec = SieveSpec(order=2, standardize=False)
    pc = pr.PropensityConfig(penalty="none", lam=0.0, lag=1)
    out = {}
    for v in (2, 5):
        plan = ev.CvPlan(folds=v, seed=3)
        for method in ("co-tucker", "tucker"):
            rows = ev.cv_evaluate(
                data, 2, spec, cp.FitConfig(rank=(2, 2, 2), max_iters=300, tol=1e-8),
                plan, method, propensity_config=pc)
            out[(method, v)] = ev.aggregate_metric(rows, method, "test", "l2")
    co_var = abs(out[("co-tucker", 5)] - out[("co-tucker", 2)]) / out[("co-tucker", 2)]
    print(f"\ncriterion 12: co-tucker test l2 {out[('co-tucker', 2)]:.4f} -> "
          f"{out[('co-tucker', 5)]:.4f} ({co_var:.1%}); tucker "
          f"{out[('tucker', 2)]:.4f} -> {out[('tucker', 5)]:.4f}")
    assert co_var < 0.20
    assert out[("tucker", 5)] > out[("tucker", 2)]
    print("PASS criterion 12: CV harness sanity (sieve transfer stable, "
          "free-factor baseline degrades with more folds)")


def test_criterion_13_pipeline_determinism(tmp_path):
    import hashlib

    sim = tmp_path / "sim"
    rc = cli.main(["simulate", "--outcome", "M1", "--assign", "A1", "--n", "50",
                   "--t", "8", "--k", "3", "--seed", "5", "--out", str(sim)])
    assert rc == 0
    out1, out2 = tmp_path / "p1", tmp_path / "p2"
    assert cli.main(["pipeline", "--data", str(sim), "--k", "3",
                     "--rank", "2,1,4", "--max-iters", "200", "--seed", "5",
                     "--out", str(out1)]) == 0
    assert cli.main(["pipeline", "--config", str(out1 / "manifest.json"),
                     "--out", str(out2)]) == 0
    h1 = hashlib.sha256((out1 / "metrics.csv").read_bytes()).hexdigest()
    h2 = hashlib.sha256((out2 / "metrics.csv").read_bytes()).hexdigest()
    assert h1 == h2
    print(f"\nPASS criterion 13: manifest replay bit-identical ({h1[:12]}...)")
