# src/dtorus/cli.py
"""
Command-line front end.

Subcommands:
- analyze      flow, matriciant, dichotomy certificates and critical data at one phi
- solvability  solvability residuals (+ xi) per variant at one phi
- torus        u(phi) on a grid (CSV or JSON)
- verify       torus on a grid + dynamic invariance check at t_star
- ramp         truncation ramp of the countable catalog system

Exit codes: 0 success, 2 negative solvability verdict, 1 any error (usage
errors included; the message goes to stderr).

Configuration: .env is loaded at start-up; DTORUS_JOBS, DTORUS_LOG_LEVEL and
DTORUS_LOG_FILE are fallbacks for --jobs, --log-level and the log file.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from dotenv import load_dotenv

from dtorus.critical import build_D, degeneracy_defects, pinv
from dtorus.critical import to_payload as critical_payload
from dtorus.dichotomy import EstimatedProjectors, ExactProjectors, ProjectorProvider, verify_dichotomy
from dtorus.flow import Tolerances, build_oracle, cocycle_check
from dtorus.green import QuadratureScheme, parse_glue
from dtorus.logging_utils import setup_logging
from dtorus.render import (
    build_run_manifest,
    manifest_path,
    ramp_table,
    render_csv,
    render_json,
    torus_table,
    write_text,
)
from dtorus.schema import RunConfig
from dtorus.system import CatalogEntry, resolve_source
from dtorus.torus import (
    TorusPipeline,
    default_grid,
    known_torus_error,
    l2_ramp,
    make_grid,
    sample_torus,
    verify_invariance,
)

logger = logging.getLogger("dtorus.cli")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNSOLVABLE = 2

COCYCLE_SAMPLES = 10

EXPRESSION_HELP = """\
expressions (system files, --forcing):
  + - * / ^, parentheses, pi, e, phi1..phim (phi when m = 1)
  sin cos tan tanh sinh cosh exp log sqrt abs, th ch sh
  ^ is right associative and binds tighter than unary minus:
  -2^2 = -4, 2^-1 = 0.5, 2^3^2 = 512
"""

# Flags whose value may start with '-' (negative grids, spans, phases).
_VALUE_FLAGS = frozenset({"--grid", "--span", "--phi", "--forcing", "--c", "--t-star", "--Ns"})


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.format_usage().strip()}\n{self.prog}: error: {message}")


def _join_negative_values(argv: Sequence[str]) -> List[str]:
    out: List[str] = []
    i = 0
    while i < len(argv):
        arg = argv[i]
        if arg in _VALUE_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-") and not argv[i + 1].startswith("--"):
            out.append(f"{arg}={argv[i + 1]}")
            i += 2
            continue
        out.append(arg)
        i += 1
    return out


def _floats(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from e


def _span(text: str) -> Tuple[float, float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise UsageError(f"--span expects lo:hi, got {text!r}")
    lo, hi = _floats(parts[0])[0], _floats(parts[1])[0]
    if lo > hi:
        raise UsageError(f"--span needs lo <= hi, got {text!r}")
    return lo, hi


def _grid_spec(text: str) -> Tuple[float, float, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"--grid expects lo:hi:count, got {text!r}")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as e:
        raise UsageError(f"--grid expects lo:hi:count, got {text!r}") from e
    if count < 1:
        raise UsageError(f"--grid count must be >= 1, got {count}")
    return lo, hi, count


def _forcing(items: Sequence[str]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip().isdigit():
            raise UsageError(f"--forcing expects i=expr with a 1-based component index, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _default_jobs() -> int:
    raw = os.environ.get("DTORUS_JOBS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise UsageError(f"DTORUS_JOBS must be an integer, got {raw!r}")
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--system", help="catalog:name?key=value or path to a system JSON file")
    common.add_argument("--forcing", action="append", default=[], metavar="i=EXPR", help="replace f_i (1-based); note -x^2 means -(x^2)")
    common.add_argument("--phi", default=None, help="base point, comma-separated (default 0)")
    common.add_argument("--span", default="-10:10", help="integration span lo:hi for analyze")
    common.add_argument("--tol", type=float, default=1e-10, help="integrator abs/rel tolerance")
    common.add_argument("--rtol", type=float, default=1e-10, help="relative rank tolerance for D")
    common.add_argument("--tol-solv", type=float, default=1e-7, help="solvability tolerance")
    common.add_argument("--T", type=float, default=40.0, help="truncation horizon")
    common.add_argument("--order", type=int, default=7, help="Gauss-Legendre points per panel")
    common.add_argument("--panel", type=float, default=0.25, help="quadrature panel width")
    common.add_argument("--checkpoint", type=float, default=1.0, help="integration checkpoint spacing")
    common.add_argument("--cert-window", type=float, default=10.0, help="dichotomy certificate window")
    common.add_argument("--cert-step", type=float, default=0.5, help="dichotomy certificate grid step")
    common.add_argument("--grid", default=None, help="lo:hi:count (per phase axis)")
    common.add_argument("--variant", choices=("one", "two"), default=None)
    common.add_argument("--glue", default=None, help="auto or a comma list of one/two per component")
    common.add_argument("--c", default=None, help="free constant c for xi, comma-separated")
    common.add_argument("--t-star", type=float, default=2.0, help="invariance check time (may be negative)")
    common.add_argument("--Ns", default="3,5,10", help="truncation dimensions for ramp")
    common.add_argument("--estimate-projectors", action="store_true", help="estimate C+ and C- numerically")
    common.add_argument("--force", action="store_true", help="compute xi even when not solvable")
    common.add_argument("--out", default=None, help="output file (default stdout)")
    common.add_argument("--format", choices=("csv", "json"), default=None)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=None, help="parallel grid points (env DTORUS_JOBS)")
    common.add_argument("--log-level", default=None, help="env DTORUS_LOG_LEVEL, default INFO")

    parser = _Parser(
        prog="dtorus",
        description="Invariant tori in the critical semi-axis dichotomy case.",
        epilog=EXPRESSION_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    commands = (
        ("analyze", "flow, certificates and critical data at one phi"),
        ("solvability", "solvability residuals per variant"),
        ("torus", "sample u(phi) on a grid"),
        ("verify", "sample and check invariance"),
        ("ramp", "truncation ramp of catalog:paper-l2"),
    )
    for name, text in commands:
        sub.add_parser(
            name,
            parents=[common],
            help=text,
            epilog=EXPRESSION_HELP,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    if args.command != "ramp" and not args.system:
        raise UsageError(f"{args.command} needs --system")
    if args.variant and args.glue:
        raise UsageError("--variant and --glue are mutually exclusive")
    jobs = args.jobs if args.jobs is not None else _default_jobs()
    if jobs < 1:
        raise UsageError(f"--jobs must be >= 1, got {jobs}")
    fmt = args.format or ("csv" if args.command in ("torus", "ramp") and args.out and args.out.endswith(".csv") else "json")
    return RunConfig(
        command=args.command,
        system=args.system or "catalog:paper-l2",
        forcing=_forcing(args.forcing),
        phi=_floats(args.phi) if args.phi else [],
        span=_span(args.span),
        abs_tol=args.tol,
        rel_tol=args.tol,
        checkpoint=args.checkpoint,
        rtol=args.rtol,
        tol_solv=args.tol_solv,
        T=args.T,
        order=args.order,
        panel=args.panel,
        cert_window=args.cert_window,
        cert_step=args.cert_step,
        grid=args.grid,
        variant=args.variant,
        glue=args.glue,
        c=_floats(args.c) if args.c else [],
        t_star=args.t_star,
        Ns=[int(x) for x in _floats(args.Ns)],
        estimate_projectors=args.estimate_projectors,
        force=args.force,
        out=args.out,
        format=fmt,
        seed=args.seed,
        jobs=jobs,
    )


# ---------- shared plumbing ----------

def _entry(cfg: RunConfig) -> CatalogEntry:
    entry = resolve_source(cfg.system)
    if cfg.forcing:
        overrides = {int(k) - 1: v for k, v in cfg.forcing.items()}
        # a replaced f has no closed-form torus any more
        entry = CatalogEntry(entry.name, entry.system.with_forcing(overrides), entry.known_projectors, None, entry.params)
    return entry


def _provider(cfg: RunConfig, entry: CatalogEntry) -> ProjectorProvider:
    if cfg.estimate_projectors or entry.known_projectors is None:
        if not cfg.estimate_projectors:
            logger.warning("no projectors given for %s; estimating them numerically", entry.name)
        return EstimatedProjectors()
    return ExactProjectors(entry)


def _tolerances(cfg: RunConfig) -> Tolerances:
    return Tolerances(cfg.abs_tol, cfg.rel_tol)


def _quad(cfg: RunConfig) -> QuadratureScheme:
    return QuadratureScheme(T=cfg.T, order=cfg.order, panel_width=cfg.panel)


def _pipeline(cfg: RunConfig, entry: CatalogEntry) -> TorusPipeline:
    return TorusPipeline(
        system=entry.system,
        projectors=_provider(cfg, entry),
        quad=_quad(cfg),
        rtol=cfg.rtol,
        tol=_tolerances(cfg),
        checkpoint=cfg.checkpoint,
        tol_solv=cfg.tol_solv,
        cert_window=cfg.cert_window,
        cert_step=cfg.cert_step,
    )


def _phi(cfg: RunConfig, m: int) -> np.ndarray:
    if not cfg.phi:
        return np.zeros(m)
    if len(cfg.phi) != m:
        raise UsageError(f"--phi has {len(cfg.phi)} components, system has m={m}")
    return np.array(cfg.phi)


def _mode(cfg: RunConfig, n: int):
    if cfg.variant:
        return cfg.variant
    assignment = parse_glue(cfg.glue or "auto", n)
    return "auto" if assignment is None else assignment


def _grid(cfg: RunConfig, entry: CatalogEntry) -> np.ndarray:
    system = entry.system
    if cfg.grid is None:
        return default_grid(system)
    lo, hi, count = _grid_spec(cfg.grid)
    return make_grid(lo, hi, count, system.m)


def _emit(text: str, cfg: RunConfig) -> None:
    if cfg.out:
        write_text(text, Path(cfg.out))
        logger.info("wrote %s", cfg.out)
    else:
        sys.stdout.write(text)


def _emit_json(payload: Dict[str, Any], cfg: RunConfig, manifest: Dict[str, Any]) -> None:
    _emit(render_json({**payload, "manifest": manifest}), cfg)


def _emit_csv(table, cfg: RunConfig, manifest: Dict[str, Any]) -> None:
    header, rows = table
    _emit(render_csv(header, rows), cfg)
    if cfg.out:
        write_text(render_json(manifest), manifest_path(Path(cfg.out)))


# ---------- subcommands ----------

def cmd_analyze(cfg: RunConfig) -> int:
    entry = _entry(cfg)
    system = entry.system
    phi = _phi(cfg, system.m)
    t0, t1 = cfg.span
    oracle = build_oracle(system, phi, (t0, t1), _tolerances(cfg), cfg.checkpoint)
    plus, minus = _provider(cfg, entry).fields(oracle)
    cd = pinv(build_D(plus.base, minus.base), cfg.rtol)

    window = min(cfg.cert_window, max(t1, 0.0), max(-t0, 0.0))
    certificates = []
    if window >= 2.0:
        certificates = [verify_dichotomy(f, oracle, window, cfg.cert_step).to_payload() for f in (plus, minus)]
    else:
        logger.warning("span [%g, %g] too short for dichotomy certificates", t0, t1)

    rng = np.random.default_rng(cfg.seed)
    lo, hi = max(t0, -5.0), min(t1, 5.0)
    triples = [tuple(float(x) for x in rng.uniform(lo, hi, 3)) for _ in range(COCYCLE_SAMPLES)]
    absolute = cocycle_check(oracle, triples) if hi > lo else 0.0
    relative = cocycle_check(oracle, triples, relative=True) if hi > lo else 0.0

    payload = {
        "phi": phi,
        "flow": {
            "span": [t0, t1],
            "phi_start": system.wrap(oracle.phase(t0)),
            "phi_end": system.wrap(oracle.phase(t1)),
            "omega_forward_end": oracle.forward(t1),
            "omega_backward_start": oracle.backward(t0),
            "cocycle_check": {
                "samples": len(triples),
                "seed": cfg.seed,
                "max_abs_defect": absolute,
                "max_relative_defect": relative,
            },
        },
        "projectors": {"plus": plus.base, "minus": minus.base, "estimated": plus.estimated},
        "certificates": certificates,
        "critical": critical_payload(cd, plus.base, minus.base),
        "degeneracy": degeneracy_defects(plus.base, minus.base, cd),
    }
    _emit_json(payload, cfg, build_run_manifest(cfg, system))
    return EXIT_OK


def cmd_solvability(cfg: RunConfig) -> int:
    entry = _entry(cfg)
    system = entry.system
    phi = _phi(cfg, system.m)
    op = _pipeline(cfg, entry).operator(phi)
    variants = [cfg.variant] if cfg.variant else ["one", "two"]
    c = np.array(cfg.c) if cfg.c else None
    if c is not None and c.size != system.n:
        raise UsageError(f"--c has {c.size} components, system has n={system.n}")

    reports = []
    ok = True
    for v in variants:
        report = op.solvability(v)
        xi = op.xi(v, c, force=True) if (report.solvable or cfg.force) else None
        reports.append(report.to_payload(xi))
        ok = ok and report.solvable
        level = logging.INFO if report.solvable else logging.WARNING
        logger.log(
            level, "solvability variant=%s phi=%s residual=%.3e tail=%.1e solvable=%s",
            v, phi.tolist(), report.residual_norm, report.tail_bound, report.solvable,
        )
    payload = {
        "phi": phi,
        "reports": reports,
        "degeneracy": op.degeneracy_defects(),
        "certificates": [cert.to_payload() for cert in op.certificates],
    }
    _emit_json(payload, cfg, build_run_manifest(cfg, system))
    return EXIT_OK if ok else EXIT_UNSOLVABLE


def _points(sample) -> List[Dict[str, Any]]:
    return [
        {"phi": phi, "u": u, "residual_norm": r, "tail_bound": tb, "solvable": bool(s)}
        for phi, u, r, tb, s in zip(sample.grid, sample.values, sample.residuals, sample.tail_bounds, sample.solvable)
    ]


def cmd_torus(cfg: RunConfig) -> int:
    entry = _entry(cfg)
    pipeline = _pipeline(cfg, entry)
    sample = sample_torus(pipeline, _grid(cfg, entry), _mode(cfg, entry.system.n), jobs=cfg.jobs)
    known = known_torus_error(entry, sample) if entry.known_torus is not None else None
    manifest = build_run_manifest(cfg, entry.system)
    if cfg.format == "csv":
        _emit_csv(torus_table(sample), cfg, manifest)
    else:
        _emit_json({"summary": sample.summary(known), "points": _points(sample)}, cfg, manifest)
    if known is not None:
        logger.info("torus known_torus_max_error=%.3e", known)
    return EXIT_UNSOLVABLE if sample.unsolvable_points else EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    entry = _entry(cfg)
    pipeline = _pipeline(cfg, entry)
    sample = sample_torus(pipeline, _grid(cfg, entry), _mode(cfg, entry.system.n), jobs=cfg.jobs)
    report = verify_invariance(pipeline, sample, cfg.t_star, jobs=cfg.jobs)
    known = known_torus_error(entry, sample) if entry.known_torus is not None else None
    payload = {
        "summary": sample.summary(known, report),
        "defects": report.defects,
        "shifted_residuals": report.shifted_residuals,
        "points": _points(sample),
    }
    _emit_json(payload, cfg, build_run_manifest(cfg, entry.system))
    return EXIT_UNSOLVABLE if sample.unsolvable_points else EXIT_OK


def cmd_ramp(cfg: RunConfig) -> int:
    if not cfg.system.startswith("catalog:paper-l2"):
        raise UsageError("ramp runs on catalog:paper-l2 only")
    phi = _phi(cfg, 1)
    steps = l2_ramp(
        cfg.Ns, phi, _quad(cfg), cfg.rtol, _tolerances(cfg), cfg.checkpoint, cfg.tol_solv, jobs=cfg.jobs
    )
    manifest = build_run_manifest(cfg)
    if cfg.format == "csv":
        _emit_csv(ramp_table(steps), cfg, manifest)
    else:
        _emit_json({"phi": phi, "rows": [s.to_row() for s in steps]}, cfg, manifest)
    return EXIT_OK


COMMANDS = {
    "analyze": cmd_analyze,
    "solvability": cmd_solvability,
    "torus": cmd_torus,
    "verify": cmd_verify,
    "ramp": cmd_ramp,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_join_negative_values(argv))
        level = args.log_level or os.environ.get("DTORUS_LOG_LEVEL", "INFO")
        log_file = os.environ.get("DTORUS_LOG_FILE", "").strip()
        setup_logging(level, Path(log_file) if log_file else None)
        cfg = resolve_config(args)
        logger.debug("run command=%s options=%s", cfg.command, cfg.model_dump(mode="json"))
        return COMMANDS[cfg.command](cfg)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, RuntimeError, ArithmeticError) as e:
        print(f"dtorus: error: {e}", file=sys.stderr)
        logger.debug("run failed", exc_info=True)
        return EXIT_ERROR


def main() -> None:
    load_dotenv()
    raise SystemExit(run())


if __name__ == "__main__":
    main()
