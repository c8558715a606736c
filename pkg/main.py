# main.py
"""
Demo orchestrator.

Runs the catalog walkthrough end-to-end through the same code paths as the
`dtorus` command:
1) analyze paper-2d at phi = 0 (flow, certificates, critical data)
2) solvability of both variants at phi = 0
3) glued torus of paper-2d on the default grid (CSV + manifest)
4) forward and backward invariance check at t_star = +-2
5) truncation ramp of paper-l2 for N = 3, 5, 10

Everything lands in outputs/; the run log in outputs/run.log.
Configuration comes from .env (DTORUS_JOBS, DTORUS_LOG_LEVEL).
"""

from __future__ import annotations

import os
import sys
from pathlib import Path
from typing import List, Tuple

from dotenv import load_dotenv

from dtorus.cli import EXIT_OK, run

load_dotenv()

OUT = Path("outputs")

STEPS: List[Tuple[str, List[str]]] = [
    ("analyze", ["analyze", "--system", "catalog:paper-2d", "--out", str(OUT / "analyze.json")]),
    ("solvability", ["solvability", "--system", "catalog:paper-2d", "--out", str(OUT / "solvability.json")]),
    ("torus", ["torus", "--system", "catalog:paper-2d", "--out", str(OUT / "torus.csv")]),
    ("verify +2", ["verify", "--system", "catalog:paper-2d", "--grid", "-1:1:11", "--t-star", "2", "--out", str(OUT / "verify.fwd.json")]),
    ("verify -2", ["verify", "--system", "catalog:paper-2d", "--grid", "-1:1:11", "--t-star", "-2", "--out", str(OUT / "verify.bwd.json")]),
    ("ramp", ["ramp", "--Ns", "3,5,10", "--phi", "0.5", "--out", str(OUT / "ramp.csv")]),
]


def main() -> int:
    OUT.mkdir(parents=True, exist_ok=True)
    os.environ.setdefault("DTORUS_LOG_FILE", str(OUT / "run.log"))

    failed = []
    for label, argv in STEPS:
        code = run(argv)
        print(f"{label:<12} exit={code}")
        if code != EXIT_OK:
            failed.append(label)

    if failed:
        print(f"\nfailed steps: {', '.join(failed)}", file=sys.stderr)
        return 1
    print(f"\nOutputs written to {OUT}/")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
