"""CSV / JSON / YAML input and output for the command-line tools.

CSV cells are comma separated with ``.`` decimals. Matrices in JSON are
``{"dims": [rows, cols], "data": [row-major values]}``; floats are written
with the shortest representation that round-trips.
"""
from __future__ import annotations

import json
import logging
import math
import re
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
import yaml
from jinja2 import Environment, FileSystemLoader
from jsonschema import Draft202012Validator
from pydantic import ValidationError

from core.errors import InputError
from core.model import Dataset, FitReport
from core.simulation import REPORT_COLUMNS, ScenarioReport, SimulationConfig

logger = logging.getLogger(__name__)

ROOT = Path(__file__).resolve().parents[1]
SCHEMA_DIR = ROOT / "schemas"
TEMPLATE_DIR = ROOT / "reports" / "templates"
MAX_DIAGNOSTICS = 20
# '.' decimals with an optional exponent; no digit separators, no inf/nan literals
DECIMAL = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")

PathLike = Union[str, Path]


# --- CSV ingestion -------------------------------------------------------------


def _parse_cell(cell: Any) -> float:
    # float() rounds correctly, so written values read back bit for bit
    if not isinstance(cell, str) or not DECIMAL.fullmatch(cell.strip()):
        return math.nan
    return float(cell)


def read_matrix_csv(path: PathLike, header: bool = False, label: str = "y") -> np.ndarray:
    """Numeric matrix from a CSV file; every bad cell is reported by row and column."""
    path = Path(path)
    try:
        df = pd.read_csv(
            path,
            header=0 if header else None,
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
        )
    except FileNotFoundError as exc:
        raise InputError(f"{label}: cannot read {path}", [str(exc)]) from exc
    except pd.errors.EmptyDataError as exc:
        raise InputError(f"{label}: {path} is empty") from exc
    except pd.errors.ParserError as exc:
        raise InputError(f"{label}: {path} has ragged rows", [str(exc).strip()]) from exc
    if df.empty:
        raise InputError(f"{label}: {path} has no data rows")

    offset = 2 if header else 1
    diagnostics: List[str] = []
    missing = df.isna()
    values = df.apply(lambda col: col.map(_parse_cell)).to_numpy(dtype=float)
    for i, j in zip(*np.nonzero(missing.to_numpy())):
        diagnostics.append(f"row {i + offset}: expected {df.shape[1]} columns, column {j + 1} is missing")
    for i, j in zip(*np.nonzero(~missing.to_numpy() & ~np.isfinite(values))):
        diagnostics.append(f"row {i + offset}, column {j + 1}: {df.iat[i, j]!r} is not a finite number")
    if diagnostics:
        extra = len(diagnostics) - MAX_DIAGNOSTICS
        shown = diagnostics[:MAX_DIAGNOSTICS] + ([f"... and {extra} more"] if extra > 0 else [])
        raise InputError(f"{label}: malformed CSV {path}", shown)
    logger.debug("read %s: %d x %d", path, *values.shape)
    return values


def row_major_to_vec(y: np.ndarray, r: int, c: int) -> np.ndarray:
    """Reorder columns holding cells row by row into the column-stacked vec layout."""
    n, q = y.shape
    if r * c != q:
        raise InputError("layout does not match data", [f"r*c={r * c} != q={q}"])
    return y.reshape(n, r, c).transpose(0, 2, 1).reshape(n, q)


def load_dataset(
    y_path: PathLike,
    r: int,
    c: int,
    x_path: Optional[PathLike] = None,
    header: bool = False,
    transpose_cells: bool = False,
) -> Dataset:
    y = read_matrix_csv(y_path, header, label="y")
    x = read_matrix_csv(x_path, header, label="x") if x_path else None
    if transpose_cells:
        y = row_major_to_vec(y, r, c)
    return Dataset(y, r, c, x)


# --- Structured output -----------------------------------------------------------


def matrix_json(a: Optional[np.ndarray]) -> Optional[Dict[str, Any]]:
    if a is None:
        return None
    a = np.asarray(a, dtype=float)
    return {"dims": list(a.shape), "data": [float(v) for v in a.ravel(order="C")]}


def matrix_from_json(doc: Mapping[str, Any]) -> np.ndarray:
    return np.asarray(doc["data"], dtype=float).reshape(doc["dims"])


def fit_payload(report: FitReport, emit_sigma: bool = False, trace: bool = False) -> Dict[str, Any]:
    params = report.params
    if report.model == "sepcov":
        u, v, w = params.u_tilde, params.v_tilde, np.ones(params.u_tilde.shape[0] * params.v_tilde.shape[0])
    else:
        u, v, w = params.u.matrix, params.v.matrix, params.w.values
    out: Dict[str, Any] = {
        "model": report.model,
        "beta": matrix_json(params.beta),
        "U": matrix_json(u),
        "V": matrix_json(v),
        "w": matrix_json(w),
        "nll": float(report.nll),
        "iterations": report.iterations,
        "termination": report.termination.value,
    }
    if emit_sigma:
        out["sigma"] = matrix_json(report.sigma)
    if trace:
        out["objective_trace"] = [float(g) for g in report.objective_trace]
    return out


def unrestricted_payload(beta: np.ndarray, sigma: np.ndarray, nll: float) -> Dict[str, Any]:
    return {
        "model": "unrestricted",
        "beta": matrix_json(beta),
        "U": None,
        "V": None,
        "w": None,
        "sigma": matrix_json(sigma),
        "nll": float(nll),
        "iterations": 0,
        "termination": "Converged",
    }


def write_json(path: PathLike, payload: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return path


def write_matrix_csv(path: PathLike, a: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(np.atleast_2d(np.asarray(a, dtype=float))).to_csv(path, header=False, index=False)
    return path


def write_report_csv(path: PathLike, reports: Sequence[ScenarioReport]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame([rep.row() for rep in reports], columns=list(REPORT_COLUMNS))
    df.to_csv(path, index=False, na_rep="")
    return path


def _fmt(value: Optional[float], digits: int = 2) -> str:
    if value is None or (isinstance(value, float) and not np.isfinite(value)):
        return "-"
    return f"{value:.{digits}f}"


def render_summary(reports: Iterable[ScenarioReport], template: str = "table.txt") -> str:
    """Plain-text table with ``-`` for entries that are not estimable."""
    reports = list(reports)
    notes = []
    for rep in reports:
        s = rep.scenario
        for estimator, hist in rep.termination_histogram.items():
            bad = {t.value: k for t, k in hist.items() if k and t.value != "Converged"}
            if bad:
                counts = ", ".join(f"{name} {k}" for name, k in bad.items())
                notes.append(f"n={s.n} r={s.r} c={s.c} {estimator}: {counts} of {s.m}")
    env = Environment(loader=FileSystemLoader(str(TEMPLATE_DIR)), keep_trailing_newline=True)
    env.filters["fmt"] = _fmt
    return env.get_template(template).render(reports=reports, notes=notes)


# --- Scenario grids ------------------------------------------------------------


def load_schema(name: str) -> Dict[str, Any]:
    return json.loads((SCHEMA_DIR / name).read_text(encoding="utf-8"))


def json_pointer(parts: Iterable[Any]) -> str:
    return "/" + "/".join(str(p).replace("~", "~0").replace("/", "~1") for p in parts)


def schema_diagnostics(doc: Any, schema: Mapping[str, Any]) -> List[str]:
    validator = Draft202012Validator(schema)
    errs = sorted(validator.iter_errors(doc), key=lambda e: [str(p) for p in e.absolute_path])
    return [f"{json_pointer(e.absolute_path)}: {e.message}" for e in errs]


def read_document(path: PathLike) -> Any:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}", [str(exc)]) from exc
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            return yaml.safe_load(text)
        return json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise InputError(f"{path} is not valid {path.suffix.lstrip('.') or 'json'}", [str(exc)]) from exc


def parse_simulation_config(doc: Any, source: str = "<config>") -> SimulationConfig:
    diagnostics = schema_diagnostics(doc, load_schema("simulation_config.schema.json"))
    if diagnostics:
        raise InputError(f"invalid scenario config {source}", diagnostics)
    try:
        return SimulationConfig.model_validate(doc)
    except ValidationError as exc:
        raise InputError(
            f"invalid scenario config {source}",
            [f"{json_pointer(err['loc'])}: {err['msg']}" for err in exc.errors()],
        ) from exc


def load_simulation_config(path: PathLike) -> SimulationConfig:
    return parse_simulation_config(read_document(path), str(path))
