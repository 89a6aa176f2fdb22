"""Head-to-head SNR sweeps of the DoA estimators.

Evaluates estimators record by record, aggregates absolute errors per
SNR level (fallback answers contribute their true error against the
0-degree answer), locates the horizontal dB shift between two error
curves, and writes plot-ready tables that re-parse losslessly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .doa_music import FALLBACK, MusicOptions, estimate_doa_music
from .errors import (
    EmptyDatasetError,
    FileFormatError,
    IncompatibleCheckpointError,
    InputError,
    NonOverlappingCurvesError,
)
from .neural.checkpoint import Checkpoint
from .neural.training import GATE_THRESHOLD_FACTOR, predict_doa

DOMAIN_FULL = "full"
DOMAIN_INSIDE_30 = "inside_30"
DOMAIN_OUTSIDE_30 = "outside_30"
DOMAINS = (DOMAIN_FULL, DOMAIN_INSIDE_30, DOMAIN_OUTSIDE_30)

_COLUMNS = ("snr_db", "estimator", "domain", "mae_deg", "median_deg",
            "fallback_rate", "n")


@dataclass(frozen=True)
class MetricsRow:
    snr_db: float
    estimator: str
    domain: str
    mae_deg: float
    median_deg: float
    fallback_rate: float
    n: int


@dataclass
class MetricsTable:
    rows: list
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        keys = [(r.snr_db, r.estimator, r.domain) for r in self.rows]
        if len(set(keys)) != len(keys):
            raise InputError("duplicate (snr, estimator, domain) rows")

    def select(self, estimator: str, domain: str = DOMAIN_FULL) -> list:
        rows = [r for r in self.rows
                if r.estimator == estimator and r.domain == domain]
        return sorted(rows, key=lambda r: r.snr_db)


class MusicEstimator:
    """MUSIC pipeline bound to a set of options."""

    def __init__(self, options: MusicOptions = MusicOptions(),
                 name: str = "music"):
        self.options = options
        self.name = name

    def estimate(self, base, geometry, config):
        return estimate_doa_music(base, geometry, config, self.options)

    def describe(self) -> str:
        return f"music(grid={self.options.grid_step_deg})"


class NeuralEstimator:
    """Trained-network inference bound to a checkpoint."""

    def __init__(self, checkpoint: Checkpoint, name: str = "cnn",
                 threshold_factor: float = GATE_THRESHOLD_FACTOR):
        self.checkpoint = checkpoint
        self.name = name
        self.threshold_factor = threshold_factor

    def estimate(self, base, geometry, config):
        if base.channels * 2 != self.checkpoint.spec.input_rows:
            raise IncompatibleCheckpointError(
                f"checkpoint expects {self.checkpoint.spec.input_rows // 2} "
                f"channels, record has {base.channels}")
        return predict_doa(self.checkpoint, base, self.threshold_factor)

    def describe(self) -> str:
        meta = self.checkpoint.metadata
        return f"cnn(best_epoch={meta.get('best_epoch', '?')})"


def _in_domain(doa_deg: float, domain: str) -> bool:
    if domain == DOMAIN_FULL:
        return True
    if domain == DOMAIN_INSIDE_30:
        return abs(doa_deg) <= 30.0
    if domain == DOMAIN_OUTSIDE_30:
        return abs(doa_deg) > 30.0
    raise InputError(f"unknown domain filter {domain!r}")


def _estimate_chunk(args):
    est, records, geometry, config = args
    out = []
    for rec in records:
        result = est.estimate(rec.baseband, geometry, config)
        out.append((rec.snr_db, abs(result.angle_deg - rec.doa_deg),
                    result.status == FALLBACK))
    return out


def evaluate(dataset, estimators, domain_filter: str = DOMAIN_FULL,
             workers: int = 1) -> MetricsTable:
    """Per-(SNR, estimator) absolute-error metrics over the dataset.

    Fallback estimates count at their actual error |0 - truth|, the
    same convention both estimators use at runtime. Aggregation is a
    deterministic fold in record order whatever the worker count.
    """
    if len(dataset.records) == 0:
        raise EmptyDatasetError("nothing to evaluate")
    if domain_filter not in DOMAINS:
        raise InputError(f"domain_filter must be one of {DOMAINS}")
    records = [r for r in dataset.records
               if _in_domain(r.doa_deg, domain_filter)]

    rows = []
    for est in estimators:
        if workers > 1 and len(records) > 1:
            from concurrent.futures import ProcessPoolExecutor
            size = -(-len(records) // workers)
            chunks = [records[i:i + size]
                      for i in range(0, len(records), size)]
            with ProcessPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(
                    _estimate_chunk,
                    [(est, chunk, dataset.geometry, dataset.config)
                     for chunk in chunks]))
            results = [item for part in parts for item in part]
        else:
            results = _estimate_chunk((est, records, dataset.geometry,
                                       dataset.config))
        by_snr = {}
        for snr_db, err, fell_back in results:
            bucket = by_snr.setdefault(snr_db, {"err": [], "fb": 0})
            bucket["err"].append(err)
            bucket["fb"] += fell_back
        for snr in sorted(by_snr):
            errs = np.array(by_snr[snr]["err"])
            rows.append(MetricsRow(
                snr_db=snr, estimator=est.name, domain=domain_filter,
                mae_deg=float(errs.mean()),
                median_deg=float(np.median(errs)),
                fallback_rate=by_snr[snr]["fb"] / errs.size,
                n=errs.size))
    provenance = {
        "dataset": dataset.describe(),
        "estimators": {est.name: est.describe() for est in estimators},
        "domain_filter": domain_filter,
    }
    return MetricsTable(rows=rows, provenance=provenance)


def snr_crossover(table: MetricsTable, estimator_a: str,
                  estimator_b: str) -> float:
    """Median horizontal dB shift between two MAE-versus-SNR curves.

    For each MAE level reached by ``estimator_a`` at some SNR, monotone
    interpolation of ``estimator_b``'s curve gives the SNR where b
    reaches the same error; the returned value is the median of those
    SNR differences. Positive means a needs that many dB less than b.
    """
    rows_a = table.select(estimator_a)
    rows_b = table.select(estimator_b)
    common = sorted({r.snr_db for r in rows_a} & {r.snr_db for r in rows_b})
    if len(common) < 4:
        raise InputError(
            f"need >= 4 common SNR levels, have {len(common)}")

    def curve(rows):
        snr = np.array([r.snr_db for r in rows])
        mae = np.array([r.mae_deg for r in rows])
        # enforce a non-increasing error curve before inverting it
        mae = np.minimum.accumulate(mae)
        return snr, mae

    snr_a, mae_a = curve(rows_a)
    snr_b, mae_b = curve(rows_b)
    lo, hi = mae_b.min(), mae_b.max()
    shifts = []
    for level, s_a in zip(mae_a, snr_a):
        if not lo <= level <= hi:
            continue
        # mae_b is non-increasing in snr; reverse for ascending interp
        s_b = float(np.interp(level, mae_b[::-1], snr_b[::-1]))
        shifts.append(s_b - s_a)
    if not shifts:
        raise NonOverlappingCurvesError(
            f"{estimator_a} and {estimator_b} error curves share no MAE range")
    return float(np.median(shifts))


def _format_value(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def emit_results(table: MetricsTable, path, format: str = "csv") -> None:
    """Write the table as delimited text (csv) or structured text (json)."""
    path = Path(path)
    if format == "csv":
        lines = [",".join(_COLUMNS)]
        for r in table.rows:
            lines.append(",".join(_format_value(getattr(r, c))
                                  for c in _COLUMNS))
        path.write_text("\n".join(lines) + "\n")
    elif format == "json":
        payload = {
            "provenance": table.provenance,
            "rows": [{c: getattr(r, c) for c in _COLUMNS}
                     for r in table.rows],
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    else:
        raise InputError("format must be 'csv' (delimited text) or "
                         "'json' (structured text)")


def load_results(path) -> MetricsTable:
    """Parse a table written by emit_results; values round-trip exactly."""
    path = Path(path)
    text = path.read_text()
    if text.lstrip().startswith("{"):
        payload = json.loads(text)
        rows = [MetricsRow(snr_db=float(r["snr_db"]),
                           estimator=r["estimator"], domain=r["domain"],
                           mae_deg=float(r["mae_deg"]),
                           median_deg=float(r["median_deg"]),
                           fallback_rate=float(r["fallback_rate"]),
                           n=int(r["n"]))
                for r in payload["rows"]]
        return MetricsTable(rows=rows, provenance=payload["provenance"])
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != ",".join(_COLUMNS):
        raise FileFormatError(f"{path}: unexpected header")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != len(_COLUMNS):
            raise FileFormatError(f"{path}: malformed row {line!r}")
        rows.append(MetricsRow(
            snr_db=float(parts[0]), estimator=parts[1], domain=parts[2],
            mae_deg=float(parts[3]), median_deg=float(parts[4]),
            fallback_rate=float(parts[5]), n=int(parts[6])))
    return MetricsTable(rows=rows)
