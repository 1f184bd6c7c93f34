"""Deterministic CSV/JSON writers and the run manifest.

Data files never contain timing or host information, so rerunning a command
with the same configuration reproduces them byte for byte. Wall time lives
only in ``manifest.json``.
"""

from __future__ import annotations

import json
import math
from importlib import metadata
from pathlib import Path

import numpy as np


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "-inf" if v < 0 else "inf"
        return repr(v)
    return str(v)


def write_csv(path, columns, rows, meta=None) -> Path:
    """CSV with a ``#``-prefixed header block (``key: value`` lines) before the column row."""
    path = Path(path)
    lines = [f"# {k}: {fmt(v)}" for k, v in (meta or {}).items()]
    lines.append(",".join(columns))
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else fmt(v)
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def version_string() -> str:
    try:
        return f"firstexit-v{metadata.version('artifact')}"
    except metadata.PackageNotFoundError:
        return "firstexit-v0+unknown"


def write_manifest(out_dir, command, config, seed, wall_time, outputs) -> Path:
    out_dir = Path(out_dir)
    return write_json(
        out_dir / "manifest.json",
        {
            "command": command,
            "config": config,
            "version": version_string(),
            "master_seed": seed,
            "wall_time_s": round(wall_time, 3),
            "outputs": sorted(Path(p).name for p in outputs),
        },
    )
