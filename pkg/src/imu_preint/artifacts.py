"""Output directory resolution and report writers for CLI runs."""

from __future__ import annotations

import json
import logging
import math
import os
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT_DIR = "outputs"
OUTPUT_DIR_ENV = "IMU_PREINT_OUTPUT_DIR"


def get_output_dir(explicit: str | Path | None = None) -> Path:
    """`explicit`, else IMU_PREINT_OUTPUT_DIR, else ./outputs."""
    if explicit is not None and str(explicit).strip():
        return Path(explicit)
    output_dir = os.getenv(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR).strip()
    if not output_dir:
        output_dir = DEFAULT_OUTPUT_DIR
    return Path(output_dir)


def ensure_dir(target_dir: Path) -> Path:
    try:
        target_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        logger.error("Failed to create output directory %s: %s", target_dir, exc)
        raise
    return target_dir


def _jsonable(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        # JSON has no NaN; keep it readable
        return None
    return value


def dumps_report(report: Mapping[str, Any]) -> str:
    return json.dumps(_jsonable(report), indent=2, sort_keys=True)


def write_json_report(path: str | Path, report: Mapping[str, Any]) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    try:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(dumps_report(report) + "\n")
    except OSError as exc:
        logger.error("Failed to write report %s: %s", path, exc)
        raise
    logger.info("Wrote %s", path)
    return path


def format_table(rows: Sequence[Mapping[str, Any]], columns: Sequence[str]) -> str:
    """Fixed-width text table; floats use 6 significant digits."""
    def cell(value: Any) -> str:
        if isinstance(value, (float, np.floating)):
            return f"{float(value):.6g}"
        return str(value)

    body = [[cell(row.get(col, "")) for col in columns] for row in rows]
    widths = [max([len(col)] + [len(r[i]) for r in body]) for i, col in enumerate(columns)]
    lines = ["  ".join(col.ljust(w) for col, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in body)
    return "\n".join(lines) + "\n"


def write_table(
    path: str | Path,
    rows: Sequence[Mapping[str, Any]],
    columns: Sequence[str],
    header: str = "",
) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    path.write_text(header + format_table(rows, columns), encoding="utf-8")
    logger.info("Wrote %s", path)
    return path


def write_rows_csv(path: str | Path, rows: Sequence[Mapping[str, Any]], columns: Sequence[str]) -> Path:
    """Plot-ready CSV, one row per record."""
    path = Path(path)
    ensure_dir(path.parent)
    pd.DataFrame(list(rows), columns=list(columns)).to_csv(path, index=False)
    logger.info("Wrote %s", path)
    return path
