"""Run directories: config.json, report.json and CSV tables.

Every file carries the format version and the full config. The only
non-deterministic byte is the creation time, kept on a ``#`` comment line at
the top of each CSV and under ``"created"`` in report.json.
"""

from __future__ import annotations

import json
import math
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else f"{float(v):.17g}"
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


class RunDirectory:
    def __init__(self, path: str | Path, config: dict):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.created = datetime.now(timezone.utc).isoformat(timespec="seconds")
        (self.path / "config.json").write_text(
            json.dumps({"format_version": FORMAT_VERSION, "config": config}, indent=1, sort_keys=True) + "\n")

    def write_csv(self, name: str, header: list[str], rows) -> Path:
        target = self.path / name
        lines = [f"# created {self.created}",
                 f"# format_version {FORMAT_VERSION}",
                 f"# config {json.dumps(self.config, sort_keys=True)}",
                 ",".join(header)]
        lines += [",".join(fmt(v) for v in row) for row in rows]
        target.write_text("\n".join(lines) + "\n")
        return target

    def write_report(self, report: dict) -> Path:
        target = self.path / "report.json"
        doc = {"format_version": FORMAT_VERSION, "created": self.created,
               "config": self.config, "report": _jsonable(report)}
        target.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        return target


def csv_body(path: str | Path) -> str:
    """File contents without the creation-time comment line."""
    return "".join(line for line in Path(path).read_text().splitlines(keepends=True)
                   if not line.startswith("# created"))
