"""Command line front end.

Subcommands: simulate, fit, predict, diagnose, mc-study. Options can come
from a flat key=value config file (--config); explicit flags win. Exit
codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import dataio, estimation, inference, simulation
from .dataio import fmt
from .errors import DataError, NumericalError
from .filtering import quasi_log_likelihood
from .model import ParameterSet, build_expanded_chain, count_free_parameters


def _bool(text):
    if isinstance(text, bool):
        return text
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _transforms(text):
    out = []
    for piece in text if isinstance(text, list) else [text]:
        parts = piece.split(":")
        if len(parts) != 3:
            raise ValueError(f"transform must be COLUMN:KIND:PERIOD, got {piece!r}")
        out.append((parts[0], parts[1], int(parts[2])))
    return out


# dest -> (caster, default); None default means optional with no value
_SPECS = {
    "simulate": {
        "case": (str, None),
        "model": (str, None),
        "T": (int, None),
        "seed": (int, None),
        "burn_in": (int, 100),
        "out": (str, None),
    },
    "fit": {
        "input": (str, None),
        "out": (str, None),
        "m": (int, 1),
        "time_column": (str, "period"),
        "count_column": (str, "y"),
        "covariates": (_csv_list, []),
        "transform": (_transforms, []),
        "starts": (int, 1),
        "seed": (int, None),
        "p_override": (int, None),
        "max_iter": (int, 500),
    },
    "predict": {
        "input": (str, None),
        "model": (str, None),
        "horizon": (int, 1),
        "future_covariates": (str, None),
        "time_column": (str, "period"),
        "count_column": (str, "y"),
        "transform": (_transforms, []),
        "out": (str, None),
    },
    "diagnose": {
        "input": (str, None),
        "model": (str, None),
        "time_column": (str, "period"),
        "count_column": (str, "y"),
        "transform": (_transforms, []),
        "max_lag": (int, None),
        "p_override": (int, None),
        "out": (str, None),
    },
    "mc-study": {
        "case": (str, None),
        "T": (int, None),
        "R": (int, None),
        "seed": (int, None),
        "burn_in": (int, 0),
        "jobs": (int, 1),
        "auto_init": (_bool, False),
        "out": (str, None),
    },
}

_REQUIRED = {
    "simulate": ["T", "seed", "out"],
    "fit": ["input", "out"],
    "predict": ["input", "model", "out"],
    "diagnose": ["input", "model", "out"],
    "mc-study": ["case", "T", "R", "seed", "out"],
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mspllar",
        description="Regime-switching Poisson log-linear autoregression toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, spec in _SPECS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=argparse.SUPPRESS)
        for dest, (caster, _default) in spec.items():
            flag = "--" + dest.replace("_", "-")
            if caster is _bool:
                p.add_argument(flag, dest=dest, action="store_true",
                               default=argparse.SUPPRESS)
            elif caster is _transforms:
                p.add_argument(flag, dest=dest, action="append",
                               default=argparse.SUPPRESS)
            else:
                p.add_argument(flag, dest=dest, default=argparse.SUPPRESS)
    return parser


def _load_config(path, spec, parser):
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    parser.error(f"{path}:{line_no}: expected key=value")
                key, _, value = line.partition("=")
                key = key.strip().replace("-", "_")
                if key not in spec:
                    parser.error(f"{path}:{line_no}: unknown option {key!r}")
                values[key] = value.strip()
    except OSError as exc:
        parser.error(f"cannot read config: {exc}")
    return values


def _resolve_options(args, parser):
    command = args.command
    spec = _SPECS[command]
    merged = {dest: default for dest, (_c, default) in spec.items()}
    supplied = {k: v for k, v in vars(args).items() if k not in ("command",)}
    if "config" in supplied:
        merged.update(_load_config(supplied.pop("config"), spec, parser))
    merged.update(supplied)
    for dest, (caster, _default) in spec.items():
        value = merged[dest]
        if value is None:
            continue
        try:
            if caster is _transforms:
                merged[dest] = _transforms(value)
            elif isinstance(value, str):
                merged[dest] = caster(value)
        except (ValueError, TypeError) as exc:
            parser.error(f"--{dest.replace('_', '-')}: {exc}")
    for dest in _REQUIRED[command]:
        if merged[dest] is None:
            parser.error(f"--{dest.replace('_', '-')} is required for {command}")
    return merged


def _load_bundle(opts):
    bundle = dataio.ingest_csv(
        opts["input"],
        time_column=opts["time_column"],
        count_column=opts["count_column"],
    )
    for column, kind, period in opts.get("transform") or []:
        bundle = dataio.transform_covariate(bundle, column, kind, period)
    return bundle


def _cmd_simulate(opts):
    if opts["model"]:
        params, _meta = dataio.load_model_json(opts["model"])
        if params.r > 0:
            raise DataError(
                "simulate does not support covariate models; supply a "
                "covariate-free model file"
            )
    elif opts["case"]:
        params = simulation.resolve_case(opts["case"])
    else:
        raise DataError("simulate needs --case or --model")
    sim = simulation.simulate_ms_pllar(
        params, opts["T"], seed=opts["seed"], burn_in=opts["burn_in"]
    )
    out = opts["out"]
    dataio.write_series_csv(
        os.path.join(out, "simulated.csv"),
        [str(t + 1) for t in range(opts["T"])],
        sim.y,
        {"state": (sim.states + 1).astype(float)},
    )
    print(f"wrote {os.path.join(out, 'simulated.csv')}")
    return 0


def _fit_metrics(result, y, X, p):
    qll, trace = quasi_log_likelihood(result.params, y, X)
    chain = build_expanded_chain(result.params.gamma)
    smooth = inference.kim_smoother(trace, chain)
    predictions = inference.predict_smoothed_insample(trace, smooth, chain)
    report = inference.diagnostics(y, predictions, p, qll)
    return trace, chain, smooth, predictions, report


def _cmd_fit(opts):
    bundle = _load_bundle(opts)
    names = opts["covariates"]
    X = bundle.covariate_matrix(names) if names else None
    m = opts["m"]
    if opts["starts"] > 1 and opts["seed"] is None:
        raise DataError("--seed is required when --starts > 1")
    result = estimation.multi_start(
        bundle.y, X, m,
        n_starts=opts["starts"],
        seed=opts["seed"],
        covariate_names=names,
        maxiter=opts["max_iter"],
    )
    p = opts["p_override"] or count_free_parameters(m, len(names))
    trace, chain, smooth, _predictions, report = _fit_metrics(
        result, bundle.y, X, p
    )
    out = opts["out"]
    metrics = {
        "qll": result.qll, "aic": report.aic, "bic": report.bic,
        "mse": report.residual_mse, "p": p, "df": bundle.T - p,
    }
    dataio.write_fit_report(os.path.join(out, "fit_report.csv"), result, metrics)
    dataio.write_state_probs(
        os.path.join(out, "state_probs.csv"),
        {
            "filter": inference.filter_marginals(trace, chain).probs,
            "one_step_ahead": inference.one_step_marginals(trace, chain).probs,
            "smoothing": inference.marginal_state_probs(smooth, chain).probs,
        },
    )
    dataio.write_model_json(os.path.join(out, "model.json"), result, names, bundle.T)
    _write_summary(os.path.join(out, "summary.txt"), result, metrics, bundle.T)
    print(
        f"fit: m={m} qll={result.qll:.4f} status={result.convergence['status']} "
        f"-> {out}"
    )
    return 0


def _write_summary(path, result, metrics, T):
    lines = [
        f"regimes: {result.params.m}   observations: {T}",
        f"status: {result.convergence['status']} "
        f"({result.convergence['iterations']} iterations, "
        f"gradient norm {result.convergence['gradient_norm']:.2e})",
        f"qll: {fmt(result.qll)}",
        f"aic: {fmt(metrics['aic'])}   bic: {fmt(metrics['bic'])}   "
        f"mse: {fmt(metrics['mse'])}",
        "",
        f"{'parameter':<14}{'estimate':>14}{'std.err':>12}{'z':>10}",
    ]
    for name, est, se in zip(
        result.report_names, result.report_values, result.standard_errors
    ):
        z = f"{est / se:10.3f}" if np.isfinite(se) and se > 0 else " " * 10
        se_s = f"{se:12.4f}" if np.isfinite(se) else " " * 12
        lines.append(f"{name:<14}{est:14.4f}{se_s}{z}")
    with dataio.atomic_write(path) as handle:
        handle.write("\n".join(lines) + "\n")


def _load_future_covariates(path, names, horizon):
    bundle_names = list(names)
    import csv as _csv

    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = _csv.reader(handle)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [n for n in bundle_names if n not in header]
        if missing:
            raise DataError(f"{path}: missing covariate columns {missing}")
        pos = [header.index(n) for n in bundle_names]
        rows = []
        for row_no, row in enumerate(reader, start=1):
            try:
                rows.append([float(row[p]) for p in pos])
            except (ValueError, IndexError):
                raise DataError(f"{path}: row {row_no}: invalid covariate row") from None
    if len(rows) < horizon:
        raise DataError(
            f"{path}: {len(rows)} future covariate rows < horizon {horizon}"
        )
    return np.asarray(rows[:horizon], dtype=float)


def _cmd_predict(opts):
    params, meta = dataio.load_model_json(opts["model"])
    bundle = _load_bundle(opts)
    names = meta["covariate_names"]
    X = bundle.covariate_matrix(names) if names else None
    horizon = opts["horizon"]
    if params.r > 0:
        if not opts["future_covariates"]:
            raise DataError("model uses covariates: --future-covariates is required")
        X_future = _load_future_covariates(opts["future_covariates"], names, horizon)
    else:
        X_future = None
    qll, trace = quasi_log_likelihood(params, bundle.y, X)
    chain = build_expanded_chain(params.gamma)
    series = inference.forecast(params, trace, horizon, X_future, chain)
    out_path = os.path.join(opts["out"], "predictions.csv")
    dataio.write_predictions(out_path, "forecast", series.values, t_start=bundle.T + 1)
    print(f"wrote {out_path}")
    return 0


def _cmd_diagnose(opts):
    params, meta = dataio.load_model_json(opts["model"])
    bundle = _load_bundle(opts)
    names = meta["covariate_names"]
    X = bundle.covariate_matrix(names) if names else None
    p = opts["p_override"] or meta["n_params"]
    qll, trace = quasi_log_likelihood(params, bundle.y, X)
    chain = build_expanded_chain(params.gamma)
    smooth = inference.kim_smoother(trace, chain)
    predictions = inference.predict_smoothed_insample(trace, smooth, chain)
    report = inference.diagnostics(
        bundle.y, predictions, p, qll, max_lag=opts["max_lag"]
    )
    out = opts["out"]
    dataio.write_residuals(
        os.path.join(out, "residuals.csv"),
        bundle.y, predictions.values, report.pearson_residuals,
    )
    dataio.write_acf(os.path.join(out, "acf.csv"), report.acf)
    dataio.write_variance_check(
        os.path.join(out, "variance_check.csv"), report.poisson_check_pairs
    )
    print(
        f"diagnose: mse={report.residual_mse:.4f} aic={report.aic:.2f} "
        f"bic={report.bic:.2f} -> {out}"
    )
    return 0


def _cmd_mc_study(opts):
    report = simulation.monte_carlo_study(
        opts["case"], opts["T"], opts["R"], opts["seed"],
        burn_in=opts["burn_in"],
        truth_init=not opts["auto_init"],
        n_jobs=opts["jobs"],
    )
    out_path = os.path.join(opts["out"], "mc_study.csv")
    dataio.write_mc_study(out_path, report)
    flag = "" if report.valid else " (INVALID: >10% failures)"
    print(
        f"mc-study: R={report.n_replicates} failed={report.n_failed}{flag} "
        f"-> {out_path}"
    )
    return 0


_HANDLERS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "diagnose": _cmd_diagnose,
    "mc-study": _cmd_mc_study,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    opts = _resolve_options(args, parser)
    try:
        return _HANDLERS[args.command](opts)
    except DataError as exc:
        print(f"error: {str(exc).splitlines()[0]}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: {str(exc).splitlines()[0]}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {str(exc).splitlines()[0]}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
