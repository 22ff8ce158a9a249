"""
Report artifacts

Every run writes {kind}_{hash}.json, a curve CSV when the report carries
curves, one CSV per extra table and a plain-text summary. The curve CSV holds
the curve at the largest n; when the curve covers several n, each one also
gets its own {kind}_{hash}_n{n}.csv with the same columns. The hash covers
every semantic field of the run configuration, so changing any of them
changes the file names; output directory, worker count and formats are not
semantic. JSON is written with sorted keys and no timestamps, so the same
configuration gives the same bytes.
"""

import csv
import hashlib
import json
import logging
import os
from typing import Any, Dict, List, Sequence

import numpy as np

from models import RunConfig, VerificationReport

logger = logging.getLogger('treewalk')

CURVE_HEADER = ("lambda", "empirical", "band_lo", "band_hi", "target")

# Frozen column orders of the extra tables, keyed by file suffix
TABLE_HEADERS: Dict[str, Sequence[str]] = {
    "encoding": ("index", "height", "lukasiewicz"),
    "levels": ("k", "Z_k", "L_k"),
    "range_levels": ("k", "Z_k", "L_k", "vertex_count_k"),
    "survival": ("n", "m", "p_hat", "se", "n_p_hat", "target"),
    "joint": ("lambda1", "lambda2", "empirical", "se", "target"),
}

NON_SEMANTIC = {"output_directory", "workers", "formats"}


def config_hash(config: RunConfig) -> str:
    """First 12 hex digits of the sha256 of the canonical semantic configuration"""
    data = config.model_dump(mode="json", exclude=NON_SEMANTIC)
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def _plain(value: Any) -> Any:
    """json.dumps fallback for numpy scalars and arrays"""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def dumps(data: Dict) -> str:
    return json.dumps(data, sort_keys=True, indent=2, default=_plain)


def _write_csv(path: str, header: Sequence[str], rows) -> None:
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _curves_by_n(report: VerificationReport) -> Dict[int, List[List[float]]]:
    rows: Dict[int, List[List[float]]] = {}
    for r in report.curves:
        rows.setdefault(r.n, []).append([r.lam, r.empirical, r.band_lo, r.band_hi, r.target])
    return rows


def summary_text(report: VerificationReport) -> str:
    """Human-readable digest of a report"""
    status = "✅ PASSED" if report.passed else "❌ FAILED"
    lines = [f"{report.kind} {status}", f"seed {report.master_seed}  config {report.config_hash}", ""]
    for check in report.checks:
        mark = "✅" if check.passed else "❌"
        line = f"{mark} {check.name}"
        if check.value is not None:
            line += f": {check.value:.6g}"
            if check.target is not None:
                line += f" (target {check.target:.6g})"
        lines.append(line)
        if check.detail:
            lines.append(f"     {check.detail}")
    if report.cap_hit_rate:
        lines.append(f"\n🧢 cap-hit rate {report.cap_hit_rate:.2%}")
    if report.warnings:
        lines.append("\n⚠️ Warnings:")
        lines.extend(f"  • {w}" for w in report.warnings)
    if report.notes:
        lines.append("\n📝 Notes:")
        lines.extend(f"  • {n}" for n in report.notes)
    return "\n".join(lines) + "\n"


def emit_report(report: VerificationReport, config: RunConfig, output_directory: str) -> List[str]:
    """
    Write the artifacts of one run

    Args:
        report: Finished report; its config_hash is filled in here
        config: Configuration that produced it
        output_directory: Created when missing

    Returns:
        Paths written, in writing order

    Raises:
        OSError: with the offending path in the message
    """
    report.config_hash = config_hash(config)
    stem = os.path.join(output_directory, f"{report.kind}_{report.config_hash}")
    written: List[str] = []
    try:
        os.makedirs(output_directory, exist_ok=True)
        if "json" in config.formats:
            path = f"{stem}.json"
            with open(path, 'w') as f:
                f.write(dumps(report.model_dump()))
            written.append(path)
        if "csv" in config.formats:
            if report.curves:
                by_n = _curves_by_n(report)
                path = f"{stem}.csv"
                _write_csv(path, CURVE_HEADER, by_n[max(by_n)])
                written.append(path)
                if len(by_n) > 1:
                    for n in sorted(by_n):
                        path = f"{stem}_n{n}.csv"
                        _write_csv(path, CURVE_HEADER, by_n[n])
                        written.append(path)
            for name in sorted(report.tables):
                path = f"{stem}_{name}.csv"
                _write_csv(path, TABLE_HEADERS.get(name, ()), report.tables[name])
                written.append(path)
        if "summary" in config.formats:
            path = f"{stem}_summary.txt"
            with open(path, 'w') as f:
                f.write(summary_text(report))
            written.append(path)
    except OSError as e:
        raise OSError(f"could not write report to {e.filename or output_directory}: {e.strerror}") from e
    for path in written:
        logger.info(f"💾 {path}")
    return written


class WarningsLogHandler(logging.Handler):
    """Mirrors WARNING and above as one JSON object per line"""

    def __init__(self, path: str, kind: str):
        super().__init__(level=logging.WARNING)
        self.path = path
        self.kind = kind

    def emit(self, record: logging.LogRecord) -> None:
        message = record.getMessage()
        for prefix in ("⚠️ ", "❌ "):
            if message.startswith(prefix):
                message = message[len(prefix):]
        entry = {"kind": self.kind, "level": record.levelname, "message": message, "module": record.module}
        try:
            with open(self.path, 'a') as f:
                f.write(json.dumps(entry, sort_keys=True) + "\n")
        except OSError:
            self.handleError(record)

