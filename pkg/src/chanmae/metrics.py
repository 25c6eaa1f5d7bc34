"""Evaluation metrics and serialized run reports.

NMSE is sum|H - H_hat|^2 / sum|H|^2 per sample; dataset-level figures
average the per-sample linear values and convert to dB afterwards.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, ReportParseError

DB_FLOOR = -120.0
_LINEAR_FLOOR = 1e-12

DEFAULT_QUANTILES = (0.5, 0.9, 0.95, 0.99)

_REPORT_KEYS = [
    "task",
    "regime",
    "scenario_source",
    "scenario_target",
    "nmse_linear",
    "nmse_db",
    "positioning",
    "sample_count",
    "seeds",
    "config_hash",
    "frozen_encoder_unchanged",
]
_REQUIRED_KEYS = set(_REPORT_KEYS)


def _energy(x: np.ndarray) -> float:
    x = np.asarray(x)
    if np.iscomplexobj(x):
        return float(np.sum(x.real**2 + x.imag**2))
    return float(np.sum(x**2))


def nmse(h: np.ndarray, h_hat: np.ndarray) -> tuple[float, float]:
    """Per-sample NMSE as (linear, dB); dB clamps at -120 for linear < 1e-12."""
    h = np.asarray(h)
    h_hat = np.asarray(h_hat)
    if h.shape != h_hat.shape:
        raise ContractError(f"shape mismatch: {h.shape} vs {h_hat.shape}")
    denom = _energy(h)
    if denom <= 0.0:
        raise ContractError("NMSE undefined for zero-energy reference")
    linear = _energy(h - h_hat) / denom
    return linear, to_db(linear)


def to_db(linear: float) -> float:
    if linear < _LINEAR_FLOOR:
        return DB_FLOOR
    return 10.0 * math.log10(linear)


def dataset_nmse(linear_values) -> tuple[float, float]:
    """Aggregate per-sample linear NMSE values: linear mean, then dB."""
    vals = np.asarray(list(linear_values), dtype=np.float64)
    if vals.size == 0:
        raise ContractError("dataset NMSE needs at least one sample")
    mean = float(vals.mean())
    return mean, to_db(mean)


def position_errors(preds: np.ndarray, truths: np.ndarray) -> np.ndarray:
    """Per-sample Euclidean distance in meters."""
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if preds.shape != truths.shape or preds.ndim != 2 or preds.shape[1] != 2:
        raise ContractError(f"expected matching (n, 2) arrays, got {preds.shape} and {truths.shape}")
    if preds.shape[0] == 0:
        raise ContractError("position_errors needs at least one sample")
    return np.sqrt(((preds - truths) ** 2).sum(axis=1))


@dataclass
class PositionStats:
    mean_m: float
    rmse_m: float
    quantiles: list[list[float]]  # [quantile, error] pairs


def cdf_table(errors: np.ndarray, quantiles=DEFAULT_QUANTILES) -> PositionStats:
    """Empirical quantiles by sorted linear interpolation at rank q*(n-1)."""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ContractError("cdf_table needs at least one error value")
    pairs = [[float(q), float(np.quantile(errors, q, method="linear"))] for q in quantiles]
    return PositionStats(
        mean_m=float(errors.mean()),
        rmse_m=float(np.sqrt((errors**2).mean())),
        quantiles=pairs,
    )


@dataclass
class MetricsReport:
    """One evaluation outcome, serialized with a fixed key order so equal
    inputs produce identical bytes."""

    task: str
    regime: str
    scenario_source: str
    scenario_target: str
    sample_count: int
    config_hash: str
    seeds: dict = field(default_factory=dict)
    nmse_linear: float | None = None
    nmse_db: float | None = None
    positioning: dict | None = None
    frozen_encoder_unchanged: bool | None = None  # set for frozen-regime runs

    def to_json(self) -> str:
        record = asdict(self)
        ordered = {key: record[key] for key in _REPORT_KEYS}
        return json.dumps(ordered, indent=2, sort_keys=False) + "\n"

    def key(self) -> tuple[str, str, str]:
        return (self.task, self.regime, self.scenario_target)


def write_report(report: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(report.to_json())


def read_report(path) -> MetricsReport:
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        record = json.loads(text)
    except json.JSONDecodeError as e:
        raise ReportParseError(f"{path}: invalid JSON: {e.msg}", f"line {e.lineno} col {e.colno}") from e
    if not isinstance(record, dict):
        raise ReportParseError(f"{path}: report must be a JSON object", "top level")
    missing = sorted(_REQUIRED_KEYS - set(record))
    if missing:
        raise ReportParseError(f"{path}: missing required fields {missing}", f"field {missing[0]}")
    extra = sorted(set(record) - _REQUIRED_KEYS)
    if extra:
        raise ReportParseError(f"{path}: unknown fields {extra}", f"field {extra[0]}")
    return MetricsReport(**record)


def merge_reports(reports) -> dict[tuple[str, str, str], MetricsReport]:
    """Index reports by (task, regime, target scenario) for comparison."""
    table: dict[tuple[str, str, str], MetricsReport] = {}
    for report in reports:
        table[report.key()] = report
    return table


def comparison_table(reports) -> str:
    """Plain-text table of merged reports, one line per (task, regime, scenario)."""
    table = merge_reports(reports)
    lines = [f"{'task':<26}{'regime':<12}{'scenario':<14}{'nmse_db':>10}"]
    for key in sorted(table):
        r = table[key]
        db = f"{r.nmse_db:.3f}" if r.nmse_db is not None else "-"
        lines.append(f"{r.task:<26}{r.regime:<12}{r.scenario_target:<14}{db:>10}")
    return "\n".join(lines)
