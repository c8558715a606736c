# src/dtorus/torus.py
"""
Invariant torus u(phi) = (G_0 f)(phi) over a grid of base points.

Pipeline per grid point (independent, so points run in parallel):
1) matriciant oracle on [-T, T]
2) projectors C+, C- (exact or estimated)
3) critical data D, D+, P_N(D), P_N(D*)
4) Green operator at t = 0 for the chosen variant or glue assignment

Design principles:
- No silent omissions: every point carries its residual and tail bound;
  points failing the solvability test are flagged, not dropped.
- Failures are collected per point and raised together (TorusError) with the
  partial sample attached.
- Results are merged in grid order regardless of the degree of parallelism.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
from scipy.integrate import solve_ivp

from dtorus.critical import DEFAULT_RTOL, build_D, pinv
from dtorus.dichotomy import ExactProjectors, ProjectorProvider
from dtorus.flow import Tolerances, build_oracle, inf_norm
from dtorus.green import (
    DEFAULT_TOL_SOLV,
    DEGENERACY_TOL,
    GlueError,
    GreenOperator,
    Mode,
    QuadratureScheme,
    auto_glue,
)
from dtorus.schema import RampRow, TorusSummary
from dtorus.system import CatalogEntry, SystemDefinition, catalog

logger = logging.getLogger("dtorus.torus")

ModeRequest = Union[Mode, str]  # "auto" is resolved per point
X = TypeVar("X")
Y = TypeVar("Y")


class TorusError(RuntimeError):
    def __init__(self, message: str, failures: List[Tuple[int, str]], partial=None):
        self.failures = failures
        self.partial = partial
        super().__init__(message)


@dataclass(frozen=True)
class PointResult:
    phi: np.ndarray
    value: np.ndarray
    mode: Mode
    residual: float
    solvable: bool
    tail_bound: float
    degeneracy: float
    latency_ms: float


@dataclass(frozen=True)
class TorusPipeline:
    """Numerical settings shared by every grid point."""

    system: SystemDefinition
    projectors: ProjectorProvider
    quad: QuadratureScheme = QuadratureScheme()
    rtol: float = DEFAULT_RTOL
    tol: Tolerances = Tolerances()
    checkpoint: float = 1.0
    tol_solv: float = DEFAULT_TOL_SOLV
    cert_window: float = 10.0
    cert_step: float = 0.5

    def operator(self, phi: Sequence[float]) -> GreenOperator:
        T = self.quad.T
        oracle = build_oracle(self.system, phi, (-T, T), self.tol, self.checkpoint)
        plus, minus = self.projectors.fields(oracle)
        cd = pinv(build_D(plus.base, minus.base), self.rtol)
        return GreenOperator(
            self.system, plus, minus, cd, oracle, self.quad, self.tol_solv, self.cert_window, self.cert_step
        )

    def point(self, phi: Sequence[float], mode: ModeRequest) -> PointResult:
        started = time.perf_counter()
        op = self.operator(phi)
        resolved: Mode = auto_glue(self.system, op.Cp, op.Cm) if mode == "auto" else mode
        value = op.evaluate(0.0, resolved)
        residual, solvable = op.residual(resolved)
        latency = (time.perf_counter() - started) * 1000.0
        logger.debug(
            "torus_point phi=%s residual=%.3e solvable=%s latency_ms=%.1f",
            op.phi.tolist(), residual, solvable, latency,
        )
        return PointResult(
            phi=op.phi.copy(),
            value=value,
            mode=resolved,
            residual=residual,
            solvable=solvable,
            tail_bound=op.tail,
            degeneracy=op.degeneracy_defect(resolved),
            latency_ms=latency,
        )


@dataclass(frozen=True)
class TorusSample:
    grid: np.ndarray  # (k, m)
    values: np.ndarray  # (k, n)
    mode: Mode
    residuals: np.ndarray
    solvable: np.ndarray
    tail_bounds: np.ndarray
    degeneracy: np.ndarray
    quad: QuadratureScheme
    latency_ms: np.ndarray
    estimated: bool = False

    @property
    def unsolvable_points(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(~self.solvable)]

    def with_values(self, values: np.ndarray) -> "TorusSample":
        return replace(self, values=np.asarray(values, dtype=float))

    def summary(
        self,
        known_error: Optional[float] = None,
        invariance: Optional["InvarianceReport"] = None,
    ) -> TorusSummary:
        return TorusSummary(
            points=len(self.grid),
            mode=self.mode if isinstance(self.mode, str) else list(self.mode),
            max_residual=float(np.max(self.residuals)),
            max_tail_bound=float(np.max(self.tail_bounds)),
            unsolvable_points=self.unsolvable_points,
            known_torus_max_error=known_error,
            invariance_defect=None if invariance is None else invariance.max_defect,
            t_star=None if invariance is None else invariance.t_star,
        )


@dataclass(frozen=True)
class InvarianceReport:
    t_star: float
    defects: np.ndarray
    shifted_residuals: np.ndarray

    @property
    def max_defect(self) -> float:
        return float(np.max(self.defects))


def make_grid(lo: float, hi: float, count: int, m: int = 1, endpoint: bool = True) -> np.ndarray:
    """Uniform axis grid; for m > 1 the tensor product of the same axis. Shape (count**m, m)."""
    if count < 1:
        raise ValueError(f"grid needs at least one point, got count={count}")
    axis = np.linspace(lo, hi, count, endpoint=endpoint)
    mesh = np.meshgrid(*([axis] * m), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def default_grid(system: SystemDefinition) -> np.ndarray:
    if system.phase_mode == "periodic":
        return make_grid(0.0, 2.0 * math.pi, 61, system.m, endpoint=False)
    return make_grid(-3.0, 3.0, 61, system.m)


def _run_all(fn: Callable[[X], Y], items: Sequence[X], jobs: int) -> List[Union[Y, Exception]]:
    """fn over items, results in input order; per-item errors are returned, not raised."""

    def guarded(item: X) -> Union[Y, Exception]:
        try:
            return fn(item)
        except (ValueError, RuntimeError, ArithmeticError) as e:
            return e

    if jobs <= 1 or len(items) <= 1:
        return [guarded(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(guarded, items))


def _as_grid(grid, m: int) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("grid is empty")
    return grid.reshape(-1, m)


def sample_torus(
    pipeline: TorusPipeline,
    grid,
    mode: ModeRequest,
    jobs: int = 1,
) -> TorusSample:
    grid = _as_grid(grid, pipeline.system.m)
    n = pipeline.system.n
    started = time.perf_counter()
    results = _run_all(lambda phi: pipeline.point(phi, mode), list(grid), jobs)

    failures = [(i, str(r)) for i, r in enumerate(results) if isinstance(r, Exception)]
    good = [r for r in results if isinstance(r, PointResult)]
    modes = {r.mode for r in good}
    if len(modes) > 1:
        raise GlueError(f"glue assignment changes along the grid: {sorted(modes, key=str)}")
    resolved = modes.pop() if modes else mode

    def column(attr: str, fill) -> np.ndarray:
        return np.array([getattr(r, attr) if isinstance(r, PointResult) else fill for r in results])

    values = np.array([r.value if isinstance(r, PointResult) else np.full(n, np.nan) for r in results])
    sample = TorusSample(
        grid=grid,
        values=values.reshape(len(grid), n),
        mode=resolved,
        residuals=column("residual", np.nan),
        solvable=column("solvable", False).astype(bool),
        tail_bounds=column("tail_bound", np.nan),
        degeneracy=column("degeneracy", np.nan),
        quad=pipeline.quad,
        latency_ms=column("latency_ms", np.nan),
        estimated=bool(getattr(pipeline.projectors, "estimated", False)),
    )
    logger.info(
        "sample_torus points=%d failed=%d jobs=%d latency_ms=%.1f",
        len(grid), len(failures), jobs, (time.perf_counter() - started) * 1000.0,
    )
    if failures:
        first = "; ".join(f"#{i}: {msg}" for i, msg in failures[:3])
        raise TorusError(f"{len(failures)} of {len(grid)} grid points failed ({first})", failures, sample)

    if sample.estimated:
        logger.warning("projectors were estimated numerically at every grid point")
    if sample.unsolvable_points:
        logger.warning(
            "solvability test failed at %d of %d grid points (first: phi=%s)",
            len(sample.unsolvable_points), len(grid), grid[sample.unsolvable_points[0]].tolist(),
        )
    worst = float(np.max(sample.degeneracy))
    if worst > DEGENERACY_TOL:
        logger.warning("degeneracy condition violated for mode=%s: max defect %.3e", resolved, worst)
    return sample


def known_torus_error(entry: CatalogEntry, sample: TorusSample) -> float:
    """max |u(phi) - u_known(phi)| over the grid."""
    known = np.array([entry.torus_at(phi) for phi in sample.grid])
    return float(np.max(np.abs(sample.values - known)))


def _coupled_endpoint(system: SystemDefinition, phi: np.ndarray, x0: np.ndarray, t_star: float, tol: Tolerances):
    m = system.m

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        ph, x = y[:m], y[m:]
        return np.concatenate([system.angular_velocity(ph), system.matrix(ph) @ x + system.forcing(ph)])

    sol = solve_ivp(
        rhs, (0.0, t_star), np.concatenate([phi, x0]), method="DOP853", rtol=tol.rel_tol, atol=tol.abs_tol
    )
    if not sol.success or not np.all(np.isfinite(sol.y[:, -1])):
        raise RuntimeError(f"coupled integration from phi={phi.tolist()} failed at t={sol.t[-1]:.6g}: {sol.message}")
    return sol.y[:m, -1], sol.y[m:, -1]


def verify_invariance(
    pipeline: TorusPipeline,
    sample: TorusSample,
    t_star: float,
    jobs: int = 1,
) -> InvarianceReport:
    """
    Integrate the coupled system from (phi, u(phi)) over [0, t_star] and compare
    x(t_star) with u(phi_{t_star}(phi)) recomputed by the same pipeline.
    Negative t_star checks backward invariance.
    """
    if not math.isfinite(t_star) or t_star == 0.0:
        raise ValueError(f"t_star must be finite and non-zero, got {t_star}")
    system = pipeline.system

    def check(i: int) -> Tuple[float, float]:
        phi, u = sample.grid[i], sample.values[i]
        phi_end, x_end = _coupled_endpoint(system, phi, u, t_star, pipeline.tol)
        shifted = pipeline.point(phi_end, sample.mode)
        return float(inf_norm(x_end - shifted.value)), shifted.residual

    started = time.perf_counter()
    results = _run_all(check, list(range(len(sample.grid))), jobs)
    failures = [(i, str(r)) for i, r in enumerate(results) if isinstance(r, Exception)]
    if failures:
        first = "; ".join(f"#{i}: {msg}" for i, msg in failures[:3])
        raise TorusError(f"invariance check failed at {len(failures)} grid points ({first})", failures)
    report = InvarianceReport(
        t_star=float(t_star),
        defects=np.array([r[0] for r in results]),
        shifted_residuals=np.array([r[1] for r in results]),
    )
    logger.info(
        "verify_invariance points=%d t_star=%g max_defect=%.3e latency_ms=%.1f",
        len(sample.grid), t_star, report.max_defect, (time.perf_counter() - started) * 1000.0,
    )
    return report


@dataclass(frozen=True)
class RampStep:
    N: int
    values: np.ndarray
    residual: float
    known_error: float
    max_change: Optional[float]

    def to_row(self) -> RampRow:
        return RampRow(
            N=self.N,
            values=self.values.tolist(),
            residual_norm=self.residual,
            known_error=self.known_error,
            max_change=self.max_change,
        )


def l2_ramp(
    Ns: Sequence[int],
    phi: Sequence[float],
    quad: QuadratureScheme = QuadratureScheme(),
    rtol: float = DEFAULT_RTOL,
    tol: Tolerances = Tolerances(),
    checkpoint: float = 1.0,
    tol_solv: float = DEFAULT_TOL_SOLV,
    jobs: int = 1,
) -> List[RampStep]:
    """
    Truncations of the countable catalog system at growing N. max_change compares
    the components shared with the previous N.
    """
    Ns = [int(N) for N in Ns]
    if not Ns:
        raise ValueError("Ns must not be empty")
    if any(N < 3 for N in Ns):
        raise ValueError(f"every N must be >= 3, got {Ns}")
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ValueError(f"Ns must be strictly ascending, got {Ns}")

    def run(N: int) -> Tuple[PointResult, float]:
        entry = catalog("paper-l2", {"N": N})
        pipeline = TorusPipeline(
            entry.system, ExactProjectors(entry), quad, rtol, tol, checkpoint, tol_solv
        )
        result = pipeline.point(phi, "auto")
        known = float(np.max(np.abs(result.value - entry.torus_at(result.phi))))
        return result, known

    results = _run_all(run, Ns, jobs)
    failures = [(N, str(r)) for N, r in zip(Ns, results) if isinstance(r, Exception)]
    if failures:
        raise TorusError(f"ramp failed for N in {[N for N, _ in failures]} ({failures[0][1]})", failures)

    steps: List[RampStep] = []
    previous: Optional[np.ndarray] = None
    for N, (result, known) in zip(Ns, results):
        change = None
        if previous is not None:
            k = previous.size
            change = float(np.max(np.abs(result.value[:k] - previous)))
        steps.append(RampStep(N, result.value, result.residual, known, change))
        previous = result.value
        logger.info("l2_ramp N=%d known_error=%.3e max_change=%s", N, known, change)
    return steps
