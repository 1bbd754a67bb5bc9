"""Experiment reports and their JSON / CSV serialisation."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

SCHEMA_VERSION = 1


@dataclass
class Criterion:
    """One pass/fail judgement together with the rule it was judged by."""

    name: str
    passed: bool
    observed: object
    tolerance: str
    low_power: bool = False
    detail: str = ""

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "observed": _plain(self.observed),
            "tolerance": self.tolerance,
            "low_power": self.low_power,
            "detail": self.detail,
        }

    def verdict(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        if self.low_power:
            tag += " (low power)"
        return f"{tag} {self.name}: observed {_short(self.observed)}; required {self.tolerance}"


@dataclass
class ExperimentReport:
    kind: str
    spec: dict
    validation: list = field(default_factory=list)
    target: dict | None = None
    per_seed: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    criteria: list = field(default_factory=list)
    ecdf: list = field(default_factory=list)
    underpowered: bool = False
    degenerate: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def exit_code(self) -> int:
        if self.underpowered or self.passed:
            return 0
        return 1

    def body(self) -> dict:
        """Everything except run metadata (timings, thread count)."""
        return _plain({
            "kind": self.kind,
            "spec": self.spec,
            "validation": self.validation,
            "target": self.target,
            "per_seed": self.per_seed,
            "diagnostics": self.diagnostics,
            "criteria": [c.as_dict() for c in self.criteria],
            "underpowered": self.underpowered,
            "degenerate": self.degenerate,
            "passed": self.passed,
        })

    def to_dict(self) -> dict:
        return {"v": SCHEMA_VERSION, "body": self.body(), "meta": _plain(self.meta)}

    def summary_rows(self) -> list[dict]:
        return [{"experiment": self.kind, **{k: v for k, v in row.items() if not isinstance(v, (dict, list))}}
                for row in self.per_seed]


def _plain(obj):
    """Convert numpy scalars/arrays and tuples into JSON-ready values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if hasattr(obj, "value") and hasattr(obj, "name") and not isinstance(obj, (int, str)):
        return obj.value
    return obj


def _short(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_short(v) for v in value) + "]"
    return str(value)


def ecdf_rows(experiment: str, seed, samples, variance: float) -> list[dict]:
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if variance > 0:
        target = special.ndtr(x / math.sqrt(variance))
    else:
        target = (x >= 0).astype(float)
    emp = np.arange(1, n + 1) / n
    return [
        {"experiment": experiment, "seed": seed, "sample_value": float(a), "empirical_cdf": float(b), "target_normal_cdf": float(c)}
        for a, b, c in zip(x.tolist(), emp.tolist(), target.tolist())
    ]


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(rows: list[dict], columns: list[str] | None = None) -> str:
    buf = io.StringIO()
    if columns is None:
        columns = []
        for row in rows:
            for k in row:
                if k not in columns:
                    columns.append(k)
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _plain(row.get(k, "")) for k in columns})
    return buf.getvalue()


ECDF_COLUMNS = ["experiment", "seed", "sample_value", "empirical_cdf", "target_normal_cdf"]


def write_reports(reports: list[ExperimentReport], out_dir) -> dict:
    """Write report.json, summary.csv and ecdf.csv; return their paths."""
    out = Path(out_dir)
    doc = {"v": SCHEMA_VERSION, "reports": [r.to_dict() for r in reports]}
    paths = {"report": out / "report.json", "summary": out / "summary.csv", "ecdf": out / "ecdf.csv"}
    _atomic_write(paths["report"], json.dumps(doc, indent=2, sort_keys=True) + "\n")
    rows = [row for r in reports for row in r.summary_rows()]
    _atomic_write(paths["summary"], _csv_text(rows))
    _atomic_write(paths["ecdf"], _csv_text([row for r in reports for row in r.ecdf], ECDF_COLUMNS))
    return paths


def report_bodies(path) -> list[dict]:
    """Bodies of a written report.json, for determinism comparisons."""
    doc = json.loads(Path(path).read_text())
    return [r["body"] for r in doc["reports"]]
