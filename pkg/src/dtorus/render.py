# src/dtorus/render.py
"""
Report writers (deterministic).

Purpose:
- Turn results into files: CSV tables for tori and ramps, JSON reports for
  everything else.
- Build the run manifest (resolved options + system) that accompanies every
  output, so a run can be reproduced from its own files.

Design choices:
- No timestamps, no host names: identical options give byte-identical files.
- JSON keys are sorted; floats are written with 17 significant digits in CSV
  (repr round-trip in JSON).
- CSV outputs get their manifest as a sibling `<out>.manifest.json`.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from dtorus import __version__
from dtorus.expr import unparse
from dtorus.schema import RunConfig
from dtorus.system import SystemDefinition


def describe_system(system: SystemDefinition) -> Dict[str, Any]:
    return {
        "name": system.name,
        "m": system.m,
        "n": system.n,
        "phase_mode": system.phase_mode,
        "a": [unparse(e) for e in system.a],
        "P": [[unparse(e) for e in row] for row in system.P],
        "f": [unparse(e) for e in system.f],
    }


def build_run_manifest(cfg: RunConfig, system: Optional[SystemDefinition] = None) -> Dict[str, Any]:
    manifest: Dict[str, Any] = {
        "tool": "dtorus",
        "version": __version__,
        "options": cfg.model_dump(mode="json"),
    }
    if system is not None:
        manifest["system"] = describe_system(system)
    return manifest


def _plain(obj: Any) -> Any:
    """numpy scalars/arrays and pydantic models -> JSON-ready values."""
    if hasattr(obj, "model_dump"):
        return obj.model_dump(mode="json")
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def render_json(payload: Dict[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, default=_plain) + "\n"


def fmt(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def render_csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def torus_table(sample) -> tuple[List[str], List[List[Any]]]:
    """One row per grid point: phi1..phim, u_1..u_n, residual_norm, T, tail_bound."""
    m = sample.grid.shape[1]
    n = sample.values.shape[1]
    header = [f"phi{i}" for i in range(1, m + 1)] + [f"u_{i}" for i in range(1, n + 1)]
    header += ["residual_norm", "T", "tail_bound"]
    rows = [
        [*phi, *u, r, sample.quad.T, tb]
        for phi, u, r, tb in zip(sample.grid, sample.values, sample.residuals, sample.tail_bounds)
    ]
    return header, rows


def ramp_table(steps) -> tuple[List[str], List[List[Any]]]:
    width = max(step.N for step in steps)
    header = ["N"] + [f"u_{i}" for i in range(1, width + 1)] + ["residual_norm", "known_error", "max_change"]
    rows = []
    for step in steps:
        padded = list(step.values) + [None] * (width - step.N)
        rows.append([step.N, *padded, step.residual, step.known_error, step.max_change])
    return header, rows


def write_text(text: str, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def manifest_path(out: Path) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")
