"""Result files for msfilter runs.

Summaries are YAML, tables are CSV with a fixed column order and floats
written with 17 significant digits. Nothing time-dependent is written, so a
scenario run twice with the same seed produces identical files.
"""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Iterable, Mapping, Sequence
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from msfilter.core.densities import (
    Cauchy,
    DensityModel,
    DiscreteNoise,
    ExpPoly,
    Gaussian,
    LambdaCoefficients,
    Laplace,
    Mixture,
    RationalSurrogate,
    StudentT,
)
from msfilter.core.moments import MomentSequence

SUMMARY_FILE = "summary.yaml"
ERROR_FILE = "error.yaml"
DENSITY_FILE = "density.csv"
STEPS_FILE = "steps.csv"
PLOT_DATA_FILE = "plot_data.csv"

DENSITY_COLUMNS = ("x", "truth", "surrogate", "maxent")


def format_float(value: float | None) -> str:
    """17 significant digits; empty for a missing value."""
    if value is None:
        return ""
    return "%.17g" % value


def density_record(model: DensityModel | DiscreteNoise | MomentSequence) -> dict[str, Any]:
    """The config-style record of a density, for summaries."""
    match model:
        case Gaussian(mean=m, std=s):
            return {"kind": "gaussian", "mean": m, "std": s}
        case Laplace(location=m, scale=b):
            return {"kind": "laplace", "location": m, "scale": b}
        case StudentT(dof=nu, location=m, scale=s):
            return {"kind": "student_t", "dof": nu, "location": m, "scale": s}
        case Cauchy(location=m, scale=s):
            return {"kind": "cauchy", "location": m, "scale": s}
        case Mixture(weights=ws, components=cs):
            return {
                "kind": "mixture",
                "weights": list(ws),
                "components": [density_record(c) for c in cs],
            }
        case RationalSurrogate(prior=prior, lam=lam, normalizer=z):
            return {
                "kind": "rational_surrogate",
                "prior": density_record(prior),
                "q": _lambda_record(lam),
                "normalizer": z,
            }
        case ExpPoly(lam=lam):
            return {"kind": "exp_poly", "coeffs": list(lam.in_standard_basis().coeffs)}
        case DiscreteNoise(atoms=atoms, probabilities=probs):
            return {"kind": "discrete", "atoms": list(atoms), "probabilities": list(probs)}
        case MomentSequence():
            return {"kind": "moments", "values": list(model.values)}
    raise TypeError(f"No record format for {type(model).__name__}")


def _lambda_record(lam: LambdaCoefficients) -> dict[str, Any]:
    record: dict[str, Any] = {"coeffs": list(lam.in_standard_basis().coeffs)}
    if lam.center != 0.0 or lam.scale != 1.0:
        record["basis"] = {"center": lam.center, "scale": lam.scale, "coeffs": list(lam.coeffs)}
    return record


def to_plain(value: Any) -> Any:
    """Convert a result tree to YAML-safe builtins.

    Non-finite floats become the strings "inf", "-inf" and "nan".
    """
    if isinstance(value, DensityModel | DiscreteNoise | MomentSequence):
        return density_record(value)
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, bool | str) or value is None:
        return value
    if isinstance(value, int | np.integer):
        return int(value)
    if isinstance(value, float | np.floating):
        f = float(value)
        if math.isfinite(f):
            return f
        return "nan" if math.isnan(f) else ("inf" if f > 0 else "-inf")
    if isinstance(value, np.ndarray):
        return [to_plain(v) for v in value.tolist()]
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: to_plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, Mapping):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, Iterable):
        return [to_plain(v) for v in value]
    return str(value)


def summary_string(record: Mapping[str, Any]) -> str:
    """YAML text of a summary record, keys in insertion order."""
    return yaml.dump(
        to_plain(record),
        default_flow_style=False,
        allow_unicode=True,
        sort_keys=False,
        width=100,
    )


def write_summary(path: Path, record: Mapping[str, Any]) -> Path:
    """Write a summary record as YAML."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(summary_string(record), encoding="utf-8")
    return path


def _csv(header: Sequence[str], rows: Iterable[Sequence[float | int | str | None]]) -> str:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, str):
                cells.append(cell)
            elif isinstance(cell, int | np.integer) and not isinstance(cell, bool):
                cells.append(str(int(cell)))
            else:
                cells.append(format_float(None if cell is None else float(cell)))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def write_density_table(
    path: Path,
    xs: Sequence[float],
    columns: Mapping[str, Sequence[float] | None],
) -> Path:
    """Write x, truth, surrogate, maxent. A missing column is left empty."""
    data = [columns.get(name) for name in DENSITY_COLUMNS[1:]]
    rows = (
        [x, *(None if col is None else col[i] for col in data)] for i, x in enumerate(xs)
    )
    return _write(path, _csv(DENSITY_COLUMNS, rows))


def steps_header(order: int, with_oracle: bool) -> list[str]:
    header = ["t", "y"] + [f"sigma_{k}" for k in range(order + 1)]
    if with_oracle:
        header += ["tv_oracle", "moment_gap"]
    return header


def write_steps_table(
    path: Path,
    rows: Sequence[Mapping[str, Any]],
    order: int,
    with_oracle: bool,
) -> Path:
    """Per-step filter table: t, y_t, predicted moments, oracle columns.

    Each row mapping carries "t", "y", "moments" and, with the oracle,
    "tv_oracle" and "moment_gap". An empty rows list writes the header only.
    """
    header = steps_header(order, with_oracle)

    def cells(row: Mapping[str, Any]) -> list[float | int | None]:
        out: list[float | int | None] = [int(row["t"]), row.get("y")]
        out += [float(v) for v in row["moments"][: order + 1]]
        if with_oracle:
            out += [row.get("tv_oracle"), row.get("moment_gap")]
        return out

    return _write(path, _csv(header, (cells(r) for r in rows)))


def write_plot_data(
    path: Path,
    series: Mapping[str, tuple[Sequence[float], Sequence[float]]],
) -> Path:
    """Long-format table series,x,value for external plotting."""
    rows = (
        [name, x, v]
        for name, (xs, values) in series.items()
        for x, v in zip(xs, values, strict=True)
    )
    return _write(path, _csv(("series", "x", "value"), rows))


def write_error_record(
    path: Path,
    error: BaseException,
    exit_code: int,
    step: int | None = None,
) -> Path:
    """Structured record of a failed run."""
    record: dict[str, Any] = {
        "type": type(error).__name__,
        "message": str(error),
    }
    if step is not None:
        record["step"] = step
    cause = error.__cause__
    if cause is not None:
        record["cause"] = {"type": type(cause).__name__, "message": str(cause)}
    record["exit_code"] = exit_code
    return write_summary(path, record)
