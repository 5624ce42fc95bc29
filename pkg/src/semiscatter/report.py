"""Report container and byte-stable file emission (JSON + CSV + plot data)."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__


@dataclass
class Report:
    """Outcome of one experiment.

    ``summary`` is free-form JSON data, ``targets`` maps target names to
    pass/fail, ``table`` is ``(header, rows)`` for the CSV and ``plots`` a
    list of ``(label, x_name, y_name, xs, ys)`` series.
    """

    kind: str
    config_hash: str = ""
    summary: dict = field(default_factory=dict)
    targets: dict = field(default_factory=dict)
    table: tuple = ((), ())
    plots: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(bool(v) for v in self.targets.values())

    def to_dict(self) -> dict:
        header, rows = self.table
        return _clean({
            "kind": self.kind,
            "config_hash": self.config_hash,
            "code_version": __version__,
            "summary": self.summary,
            "targets": {k: bool(v) for k, v in self.targets.items()},
            "passed": self.passed,
            "table": {"header": list(header), "rows": [list(r) for r in rows]},
            "plots": [
                {"label": lab, "x": xn, "y": yn, "xs": list(xs), "ys": list(ys)}
                for lab, xn, yn, xs, ys in self.plots
            ],
        })

    @classmethod
    def from_dict(cls, data: dict) -> "Report":
        tab = data.get("table", {})
        plots = [(p["label"], p["x"], p["y"], p["xs"], p["ys"]) for p in data.get("plots", [])]
        return cls(
            kind=data["kind"],
            config_hash=data.get("config_hash", ""),
            summary=data.get("summary", {}),
            targets=data.get("targets", {}),
            table=(tuple(tab.get("header", ())), tuple(tuple(r) for r in tab.get("rows", ()))),
            plots=plots,
        )


def _clean(obj):
    """Plain JSON types; non-finite floats become strings so the output is strict JSON."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def render_json(report: Report) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"


def render_csv(report: Report) -> str:
    header, rows = report.table
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header))
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def render_plot_data(report: Report) -> str:
    """Whitespace-separated ``x y`` blocks, one per series, each headed by ``# label: x_name y_name``."""
    lines = []
    for lab, xn, yn, xs, ys in report.plots:
        lines.append(f"# {lab}: {xn} {yn}")
        lines.extend(f"{_fmt(x)} {_fmt(y)}" for x, y in zip(xs, ys))
        lines.append("")
    return "\n".join(lines) + ("\n" if lines else "")


def emit_report(report: Report, out_dir: str | Path, stem: str | None = None) -> dict[str, Path]:
    """Write ``<stem>.json``, ``<stem>.csv`` and ``<stem>_plot.dat`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or report.kind
    paths = {
        "json": out / f"{stem}.json",
        "csv": out / f"{stem}.csv",
        "plot": out / f"{stem}_plot.dat",
    }
    paths["json"].write_text(render_json(report))
    paths["csv"].write_text(render_csv(report))
    paths["plot"].write_text(render_plot_data(report))
    return paths


def load_report(path: str | Path) -> Report:
    return Report.from_dict(json.loads(Path(path).read_text()))
