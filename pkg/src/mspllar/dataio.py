"""CSV ingestion, covariate transforms and output serialization.

Every numeric lands in output files at 17 significant digits so values
round-trip through parsing exactly. Files are written to a temp path in
the target directory and renamed into place, so a failed run never leaves
a partial file behind.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .model import ParameterSet


def fmt(x) -> str:
    """Full-precision decimal rendering of a float."""
    return f"{float(x):.17g}"


@contextmanager
def atomic_write(path):
    """Open a temp file next to ``path`` and rename it over on success."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True, eq=False)
class SeriesBundle:
    """Ingested count series with aligned covariate columns.

    Covariate row t is the regressor vector entering the linear predictor
    at t; any lagging or leading has to happen before ingestion or via
    ``transform_covariate``.
    """

    time_index: list[str]
    y: np.ndarray
    covariates: dict[str, np.ndarray]

    @property
    def T(self) -> int:
        return self.y.shape[0]

    def covariate_matrix(self, names) -> np.ndarray:
        missing = [n for n in names if n not in self.covariates]
        if missing:
            raise DataError(
                f"unknown covariates {missing}; available: {sorted(self.covariates)}"
            )
        if not names:
            return np.zeros((self.T, 0))
        return np.column_stack([self.covariates[n] for n in names])


def _period_sort_keys(values: list[str]):
    try:
        return [float(v) for v in values]
    except ValueError:
        return values


def ingest_csv(path, time_column: str = "period", count_column: str = "y",
               covariate_columns=None) -> SeriesBundle:
    """Read a UTF-8 CSV with a header row into a SeriesBundle.

    Counts must parse as non-negative integers, covariates as floats,
    periods must be strictly increasing and nothing may be missing; any
    violation raises DataError naming the offending row (1-based, header
    excluded).
    """
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for required in (time_column, count_column):
            if required not in header:
                raise DataError(f"{path}: missing required column {required!r}")
        if covariate_columns is None:
            covariate_columns = [
                h for h in header if h not in (time_column, count_column)
            ]
        else:
            unknown = [c for c in covariate_columns if c not in header]
            if unknown:
                raise DataError(f"{path}: covariate columns not in file: {unknown}")
        col_pos = {name: header.index(name) for name in header}

        times: list[str] = []
        counts: list[int] = []
        covs: dict[str, list[float]] = {c: [] for c in covariate_columns}
        for row_no, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {row_no}: expected {len(header)} fields, got {len(row)}"
                )
            fields = [f.strip() for f in row]
            if any(f == "" for f in fields):
                raise DataError(f"{path}: row {row_no}: missing value")
            times.append(fields[col_pos[time_column]])
            raw = fields[col_pos[count_column]]
            try:
                count = int(raw)
            except ValueError:
                raise DataError(
                    f"{path}: row {row_no}: count {raw!r} is not an integer"
                ) from None
            if count < 0:
                raise DataError(f"{path}: row {row_no}: negative count {count}")
            counts.append(count)
            for c in covariate_columns:
                raw = fields[col_pos[c]]
                try:
                    covs[c].append(float(raw))
                except ValueError:
                    raise DataError(
                        f"{path}: row {row_no}: covariate {c}={raw!r} is not numeric"
                    ) from None

    if not times:
        raise DataError(f"{path}: no data rows")
    keys = _period_sort_keys(times)
    for i in range(1, len(keys)):
        if keys[i] <= keys[i - 1]:
            raise DataError(
                f"{path}: row {i + 1}: period {times[i]!r} not after {times[i - 1]!r}"
            )
    return SeriesBundle(
        time_index=times,
        y=np.asarray(counts, dtype=np.int64),
        covariates={c: np.asarray(v, dtype=float) for c, v in covs.items()},
    )


def transform_covariate(bundle: SeriesBundle, name: str, kind: str,
                        period: int) -> SeriesBundle:
    """Replace a covariate by its growth rate or difference over ``period``.

    The first ``period`` rows drop from every column so the bundle stays
    aligned. Growth rates fail hard on zero denominators.
    """
    if name not in bundle.covariates:
        raise DataError(f"unknown covariate {name!r}")
    if period < 1:
        raise DataError("transform period must be >= 1")
    if period >= bundle.T:
        raise DataError(f"transform period {period} >= series length {bundle.T}")
    x = bundle.covariates[name]
    base, cur = x[:-period], x[period:]
    if kind == "yearly_growth":
        zero = np.flatnonzero(base == 0.0)
        if zero.size:
            raise DataError(
                f"covariate {name}: zero denominator at row {zero[0] + 1} "
                "in growth transform"
            )
        new = (cur - base) / base
    elif kind == "yearly_diff":
        new = cur - base
    else:
        raise DataError(f"unknown transform kind {kind!r}")
    covs = {c: v[period:] for c, v in bundle.covariates.items()}
    covs[name] = new
    return SeriesBundle(
        time_index=bundle.time_index[period:],
        y=bundle.y[period:],
        covariates=covs,
    )


def write_series_csv(path, time_index, y, covariates: dict | None = None):
    covariates = covariates or {}
    with atomic_write(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["period", "y", *covariates])
        for t in range(len(y)):
            writer.writerow(
                [time_index[t], int(y[t]), *(fmt(covariates[c][t]) for c in covariates)]
            )


# ---------------------------------------------------------------------------
# report writers (column layouts are part of the CLI contract)


def write_fit_report(path, fit_result, metrics: dict):
    """Parameter table followed by scalar fit metrics, one CSV.

    Columns: parameter, estimate, std_error, z_stat, p_value. Metric rows
    reuse the parameter/estimate columns and leave the rest empty.
    """
    with atomic_write(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["parameter", "estimate", "std_error", "z_stat", "p_value"])
        from scipy.stats import norm

        for name, est, se in zip(
            fit_result.report_names, fit_result.report_values,
            fit_result.standard_errors,
        ):
            if np.isfinite(se) and se > 0:
                z = est / se
                pv = 2.0 * norm.sf(abs(z))
                writer.writerow([name, fmt(est), fmt(se), fmt(z), fmt(pv)])
            else:
                writer.writerow([name, fmt(est), "", "", ""])
        for key in ("qll", "aic", "bic", "mse", "p", "df"):
            value = metrics[key]
            rendered = str(int(value)) if key in ("p", "df") else fmt(value)
            writer.writerow([key, rendered, "", "", ""])


def write_state_probs(path, blocks: dict):
    """``blocks`` maps kind -> (T, m) probability matrix."""
    with atomic_write(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["t", "kind", "state", "probability"])
        for kind, probs in blocks.items():
            probs = np.asarray(probs)
            for t in range(probs.shape[0]):
                for j in range(probs.shape[1]):
                    writer.writerow([t + 1, kind, j + 1, fmt(probs[t, j])])


def write_predictions(path, kind: str, values, t_start: int = 1):
    with atomic_write(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["t", "kind", "prediction"])
        for i, v in enumerate(values):
            writer.writerow([t_start + i, kind, fmt(v)])


def write_residuals(path, y, lambda_hat, residuals):
    with atomic_write(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["t", "y", "lambda_hat", "pearson_residual"])
        for t in range(len(y)):
            writer.writerow([t + 1, int(y[t]), fmt(lambda_hat[t]), fmt(residuals[t])])


def write_acf(path, acf_values):
    with atomic_write(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["lag", "acf"])
        for lag, value in enumerate(acf_values, start=1):
            writer.writerow([lag, fmt(value)])


def write_variance_check(path, pairs):
    with atomic_write(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["lambda_hat", "squared_raw_residual"])
        for lam, sq in pairs:
            writer.writerow([fmt(lam), fmt(sq)])


def write_mc_study(path, report):
    with atomic_write(path) as handle:
        writer = csv.writer(handle)
        writer.writerow(["parameter", "value", "bias", "SE", "SE_hat"])
        for row in report.rows():
            writer.writerow(
                [row["parameter"], fmt(row["value"]), fmt(row["bias"]),
                 fmt(row["SE"]), fmt(row["SE_hat"])]
            )


def write_model_json(path, fit_result, covariate_names, T: int):
    params = fit_result.params
    payload = {
        "m": params.m,
        "r": params.r,
        "covariate_names": list(covariate_names),
        "d": params.d.tolist(),
        "a": params.a.tolist(),
        "b": params.b.tolist(),
        "beta": params.beta.tolist(),
        "gamma": params.gamma.tolist(),
        "qll": fit_result.qll,
        "n_params": fit_result.n_params,
        "T": T,
    }
    with atomic_write(path) as handle:
        json.dump(payload, handle, indent=2)
        handle.write("\n")


def load_model_json(path) -> tuple[ParameterSet, dict]:
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    try:
        params = ParameterSet(
            d=payload["d"], a=payload["a"], b=payload["b"],
            beta=np.asarray(payload["beta"], dtype=float).reshape(
                payload["m"], payload["r"]
            ),
            gamma=payload["gamma"],
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: invalid model file: {exc}") from exc
    return params, payload
