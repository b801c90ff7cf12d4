"""Command-line pipeline: simulate, fit propensities, complete, tune, evaluate.

Configuration precedence is flags > config-file keys > defaults, with the
``TMSM_SEED`` environment variable overriding the seed outright.  Every
command writes a manifest echoing its fully resolved configuration;
re-running a command from its manifest reproduces the outputs bit for bit.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import completion, evaluate, simulate, tensor
from .panel import PanelDataset, PanelFormatError, load_panel_csv, observation_tensor, write_panel_csv
from .propensity import (
    PropensityConfig,
    fit_all,
    serialize_fits_csv,
    weight_tensor,
    weights_from_probabilities,
)
from .sieve import SieveSpec, build_basis

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


class ValidationError(ValueError):
    pass


def _manifest(command: str, config: dict) -> dict:
    return {"command": command, "config": config}


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults <- config file <- explicit flags <- TMSM_SEED."""
    config = dict(defaults)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise OSError(f"cannot read config file {args.config}: {exc}") from exc
        if "config" in loaded and "command" in loaded:  # a manifest round trip
            loaded = loaded["config"]
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        config.update(loaded)
    for key in defaults:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            config[key] = value
    env_seed = os.environ.get("TMSM_SEED")
    if env_seed is not None:
        try:
            config["seed"] = int(env_seed)
        except ValueError:
            raise ValidationError(f"TMSM_SEED must be an integer, got {env_seed!r}")
    return config


def _outdir(config: dict) -> Path:
    out = Path(config["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    return out


def _parse_grid(text) -> list:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    try:
        return [int(v) for v in str(text).split(",") if v != ""]
    except ValueError:
        raise ValidationError(f"expected a comma-separated integer list, got {text!r}")


def _design_from(config: dict) -> simulate.SimDesign:
    try:
        return simulate.SimDesign(
            outcome=config["outcome"],
            assignment=config["assign"],
            n_subjects=int(config["n"]),
            n_times=int(config["t"]),
            k=int(config["k"]),
            d0=int(config["d0"]),
            gamma_sd=float(config["gamma_sd"]),
            noise_sd=float(config["noise_sd"]),
            seed=int(config["seed"]),
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def cmd_simulate(args) -> int:
    defaults = {
        "outcome": "M1", "assign": "A1", "n": 100, "t": 10, "k": 5, "d0": 20,
        "gamma_sd": 0.0, "noise_sd": 1.0, "seed": 0, "out": "sim-out",
    }
    config = _resolve(args, defaults)
    design = _design_from(config)
    out = _outdir(config)
    result = simulate.generate(design)
    write_panel_csv(result.data, out / "baseline.csv", out / "longitudinal.csv")
    tensor.write_tensor(out / "y_star.tnsr", result.y_star)
    truth = _manifest("simulate", config)
    truth["true_ate"] = result.true_ate
    truth["propensities"] = [[float(v) for v in row] for row in result.propensities]
    _write_json(out / "truth.json", truth)
    print(f"simulate: wrote 4 files to {out}")
    return EXIT_OK


def _load_inputs(config: dict):
    data_dir = Path(config["data"])
    baseline = data_dir / "baseline.csv"
    longitudinal = data_dir / "longitudinal.csv"
    if not baseline.exists() or not longitudinal.exists():
        raise OSError(f"panel CSVs not found under {data_dir}")
    data = load_panel_csv(baseline, longitudinal)
    truth = None
    truth_path = data_dir / "truth.json"
    if truth_path.exists():
        with open(truth_path) as fh:
            truth = json.load(fh)
    y_star = None
    star_path = data_dir / "y_star.tnsr"
    if star_path.exists():
        y_star = tensor.read_tensor(star_path)
    return data, y_star, truth


def _propensity_config(config: dict) -> PropensityConfig:
    lam = config.get("lam")
    return PropensityConfig(
        penalty=config["penalty"],
        lam=None if lam in (None, "default") else float(lam),
        lag=int(config["lag"]),
    )


def cmd_fit_propensity(args) -> int:
    defaults = {"data": None, "penalty": "scad", "lam": None, "lag": 2,
                "seed": 0, "out": "propensity-out"}
    config = _resolve(args, defaults)
    if not config["data"]:
        raise ValidationError("--data directory is required")
    data, _, _ = _load_inputs(config)
    out = _outdir(config)
    fits = fit_all(data, _propensity_config(config))
    serialize_fits_csv(fits, out / "propensity.csv")
    _write_json(out / "manifest.json", _manifest("fit-propensity", config))
    capped = sum(f.capped for f in fits)
    print(f"fit-propensity: {len(fits)} time points, {capped} capped; wrote {out}/propensity.csv")
    return EXIT_OK


def _weights_for(config: dict, data: PanelDataset, truth):
    k = int(config["k"])
    trunc = config.get("truncate")
    trunc = None if trunc in (None, 0, "none") else float(trunc)
    if config.get("oracle_weights"):
        if not truth or "propensities" not in truth:
            raise ValidationError(
                "--oracle-weights needs generator propensities in truth.json"
            )
        probs = np.asarray(truth["propensities"], dtype=float)
        return weights_from_probabilities(probs, data.a, k, truncation=trunc)
    pconfig = _propensity_config(config)
    fits = fit_all(data, pconfig)
    return weight_tensor(data, fits, k, pconfig, truncation=trunc)


def _sieve_matrix(config: dict, data: PanelDataset):
    if config.get("no_sieve"):
        return None
    spec = SieveSpec(family=config["family"], order=int(config["order"]),
                     standardize=None if config.get("standardize") is None
                     else bool(config["standardize"]))
    x0 = data.x0
    if config.get("augment_index", True):
        x0 = np.column_stack([x0, x0.sum(axis=1)])
    return build_basis(x0, spec)


_FIT_DEFAULTS = {
    "data": None, "k": 5, "rank": "2,1,6", "max_iters": 600, "tol": 1e-8,
    "penalty": "scad", "lam": None, "lag": 2, "truncate": 8.0,
    "oracle_weights": False, "family": "legendre", "order": 2,
    "standardize": None, "no_sieve": False, "augment_index": True,
    "l0_scale": 2.0, "seed": 0, "out": "fit-out",
}


def _fit_config(config: dict, data: PanelDataset, rank) -> completion.FitConfig:
    l0 = None
    if config.get("l0_scale") not in (None, 0, "none"):
        l0 = float(config["l0_scale"]) * float(np.abs(data.y).max())
    return completion.FitConfig(
        rank=tuple(rank), max_iters=int(config["max_iters"]),
        tol=float(config["tol"]), l0=l0, seed=int(config["seed"]),
    )


def cmd_complete(args) -> int:
    config = _resolve(args, _FIT_DEFAULTS)
    if not config["data"]:
        raise ValidationError("--data directory is required")
    data, _, truth = _load_inputs(config)
    k = int(config["k"])
    if not 1 <= k <= data.n_times:
        raise ValidationError(f"k={k} must lie in 1..T={data.n_times}")
    rank = _parse_grid(config["rank"])
    if len(rank) != 3:
        raise ValidationError("rank must be three comma-separated integers")
    out = _outdir(config)
    weights = _weights_for(config, data, truth)
    omega, y_obs = observation_tensor(data, k)
    phi = _sieve_matrix(config, data)
    model, report = completion.fit(y_obs, omega, weights.w, phi, _fit_config(config, data, rank))
    completion.save_model(out / "model", model, extra={"config": config})
    _write_json(out / "fit_report.json", {
        "final_loss": report.final_loss, "n_iters": report.n_iters,
        "converged": report.converged,
        "loss_trajectory": report.loss_trajectory,
    })
    _write_json(out / "manifest.json", _manifest("complete", config))
    print(f"complete: rank {tuple(rank)}, final loss {report.final_loss:.6g}, "
          f"{report.n_iters} iterations; model in {out}/model")
    return EXIT_OK


def cmd_tune_ranks(args) -> int:
    defaults = dict(_FIT_DEFAULTS)
    defaults.update({"r1_grid": "1,3,5,7", "r2_grid": "2,4,6", "r3_grid": "6,8,10",
                     "sweeps": 1, "out": "tune-out"})
    config = _resolve(args, defaults)
    if not config["data"]:
        raise ValidationError("--data directory is required")
    data, _, truth = _load_inputs(config)
    k = int(config["k"])
    out = _outdir(config)
    weights = _weights_for(config, data, truth)
    omega, y_obs = observation_tensor(data, k)
    phi = _sieve_matrix(config, data)
    grids = [_parse_grid(config[g]) for g in ("r1_grid", "r2_grid", "r3_grid")]
    fit_config = _fit_config(config, data, (1, 1, 1))
    rank, table = completion.tune_ranks(y_obs, omega, weights.w, phi, grids,
                                        fit_config, sweeps=int(config["sweeps"]))
    with open(out / "bic_table.csv", "w", newline="") as fh:
        fh.write("r1,r2,r3,bic\n")
        for r1, r2, r3, val in table:
            fh.write(f"{r1},{r2},{r3},{val!r}\n")
    manifest = _manifest("tune-ranks", config)
    manifest["selected_rank"] = list(rank)
    _write_json(out / "manifest.json", manifest)
    print(f"tune-ranks: selected {rank}; table in {out}/bic_table.csv")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    defaults = dict(_FIT_DEFAULTS)
    defaults.update({"folds": 2, "methods": "co-tucker", "sigma_kappa": 1.0,
                     "out": "cv-out"})
    config = _resolve(args, defaults)
    if not config["data"]:
        raise ValidationError("--data directory is required")
    data, _, _ = _load_inputs(config)
    k = int(config["k"])
    rank = _parse_grid(config["rank"])
    out = _outdir(config)
    methods = [m.strip() for m in str(config["methods"]).split(",") if m.strip()]
    spec = SieveSpec(family=config["family"], order=int(config["order"]))
    plan = evaluate.CvPlan(folds=int(config["folds"]), seed=int(config["seed"]))
    rows = []
    for method in methods:
        if method not in evaluate.METHODS:
            raise ValidationError(f"unknown method {method!r}")
        rows.extend(
            evaluate.cv_evaluate(
                data, k, spec, _fit_config(config, data, rank), plan, method,
                propensity_config=_propensity_config(config),
                sigma_kappa=float(config["sigma_kappa"]),
                truncation=None if config.get("truncate") in (None, 0, "none")
                else float(config["truncate"]),
            )
        )
    evaluate.write_metrics_csv(rows, out / "cv_metrics.csv",
                               columns=["method", "V", "fold", "split", "metric", "value"])
    _write_json(out / "manifest.json", _manifest("evaluate", config))
    print(f"evaluate: {len(rows)} metric rows in {out}/cv_metrics.csv")
    return EXIT_OK


def cmd_ate(args) -> int:
    defaults = {"model": None, "regime_a": None, "regime_b": None, "seed": 0,
                "out": None}
    config = _resolve(args, defaults)
    if not config["model"]:
        raise ValidationError("--model directory is required")
    if config["regime_a"] is None or config["regime_b"] is None:
        raise ValidationError("--regime-a and --regime-b are required")
    model = completion.load_model(config["model"])
    y_hat = model.tensor()
    query = evaluate.AteQuery(regime_a=int(config["regime_a"]),
                              regime_b=int(config["regime_b"]))
    value = evaluate.ate(y_hat, query)
    print(f"ate: {value!r}")
    if config.get("out"):
        out = _outdir(config)
        payload = _manifest("ate", config)
        payload["ate"] = value
        _write_json(out / "ate.json", payload)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    defaults = dict(_FIT_DEFAULTS)
    defaults.update({"method": "co-tucker", "tune": False,
                     "r1_grid": "1,3,5,7", "r2_grid": "2,4,6", "r3_grid": "6,8,10",
                     "out": "pipeline-out"})
    config = _resolve(args, defaults)
    if not config["data"]:
        raise ValidationError("--data directory is required")
    stage = "load"
    try:
        data, y_star, truth = _load_inputs(config)
        k = int(config["k"])
        out = _outdir(config)
        method = config["method"]
        if method not in evaluate.METHODS:
            raise ValidationError(f"unknown method {method!r}")
        stage = "propensity"
        weights = _weights_for(config, data, truth)
        omega, y_obs = observation_tensor(data, k)
        stage = "fit"
        rank = _parse_grid(config["rank"])
        report_extra = {}
        if method in ("co-tucker", "tucker"):
            phi = None if method == "tucker" else _sieve_matrix(config, data)
            fit_config = _fit_config(config, data, rank)
            if config.get("tune"):
                grids = [_parse_grid(config[g]) for g in ("r1_grid", "r2_grid", "r3_grid")]
                rank, table = completion.tune_ranks(y_obs, omega, weights.w, phi,
                                                    grids, fit_config)
                fit_config = _fit_config(config, data, rank)
                report_extra["bic_table"] = [list(row) for row in table]
            model, report = completion.fit(y_obs, omega, weights.w, phi, fit_config)
            y_hat = model.tensor()
            completion.save_model(out / "model", model, extra={"config": config})
            _write_json(out / "fit_report.json", {
                "final_loss": report.final_loss, "n_iters": report.n_iters,
                "converged": report.converged, "selected_rank": list(rank),
                "loss_trajectory": report.loss_trajectory, **report_extra,
            })
        elif method == "co-unfold":
            phi = _sieve_matrix(config, data)
            y_hat = evaluate.fit_unfolded(y_obs, omega, weights.w, phi, rank[0])
        else:
            _, y_hat = evaluate.fit_hrmsm(data, weights, k)
        stage = "metrics"
        big_k = 2**k
        est = evaluate.ate(y_hat, evaluate.AteQuery(big_k - 1, 0))
        rows = [{"method": method, "metric": "ate", "value": est}]
        if y_star is not None:
            rows.append({"method": method, "metric": "l2_sq",
                         "value": evaluate.normalized_error(y_hat, y_star)})
        if truth and "true_ate" in truth:
            rows.append({"method": method, "metric": "ate_abs_err",
                         "value": abs(est - truth["true_ate"])})
        train_err = evaluate.masked_relative_error(y_hat, y_obs, omega)
        rows.append({"method": method, "metric": "l2_train", "value": train_err})
        evaluate.write_metrics_csv(rows, out / "metrics.csv",
                                   columns=["method", "metric", "value"])
        _write_json(out / "manifest.json", _manifest("pipeline", config))
        print(f"pipeline[{method}]: metrics in {out}/metrics.csv")
        return EXIT_OK
    except (ValidationError, PanelFormatError):
        raise
    except (OSError, json.JSONDecodeError):
        raise
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        raise FloatingPointError(f"stage {stage}: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tmsm",
        description="Counterfactual tensor completion for longitudinal treatment panels",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, flags):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file (or an emitted manifest)")
        for flag, kwargs in flags.items():
            p.add_argument(flag, **kwargs)
        p.set_defaults(func=func)
        return p

    intf = {"type": int}
    fltf = {"type": float}
    strf = {}
    add("simulate", cmd_simulate, {
        "--outcome": {"choices": simulate.OUTCOMES}, "--assign": {"choices": simulate.ASSIGNMENTS},
        "--n": intf, "--t": intf, "--k": intf, "--d0": intf,
        "--gamma-sd": fltf, "--noise-sd": fltf, "--seed": intf, "--out": strf,
    })
    add("fit-propensity", cmd_fit_propensity, {
        "--data": strf, "--penalty": {"choices": ["none", "lasso", "scad"]},
        "--lam": fltf, "--lag": intf, "--seed": intf, "--out": strf,
    })
    fit_flags = {
        "--data": strf, "--k": intf, "--rank": strf, "--max-iters": intf,
        "--tol": fltf, "--penalty": {"choices": ["none", "lasso", "scad"]},
        "--lam": fltf, "--lag": intf, "--truncate": fltf,
        "--oracle-weights": {"action": "store_const", "const": True, "default": None},
        "--family": {"choices": ["legendre", "polynomial"]}, "--order": intf,
        "--no-sieve": {"action": "store_const", "const": True, "default": None},
        "--l0-scale": fltf, "--seed": intf, "--out": strf,
    }
    add("complete", cmd_complete, fit_flags)
    tune_flags = dict(fit_flags)
    tune_flags.update({"--r1-grid": strf, "--r2-grid": strf, "--r3-grid": strf,
                       "--sweeps": intf})
    add("tune-ranks", cmd_tune_ranks, tune_flags)
    eval_flags = dict(fit_flags)
    eval_flags.update({"--folds": intf, "--methods": strf, "--sigma-kappa": fltf})
    add("evaluate", cmd_evaluate, eval_flags)
    add("ate", cmd_ate, {
        "--model": strf, "--regime-a": intf, "--regime-b": intf, "--out": strf,
    })
    pipe_flags = dict(fit_flags)
    pipe_flags.update({"--method": {"choices": list(evaluate.METHODS)},
                       "--tune": {"action": "store_const", "const": True, "default": None},
                       "--r1-grid": strf, "--r2-grid": strf, "--r3-grid": strf})
    add("pipeline", cmd_pipeline, pipe_flags)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ValidationError, PanelFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, json.JSONDecodeError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
