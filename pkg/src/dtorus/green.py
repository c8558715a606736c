# src/dtorus/green.py
"""
Solvability conditions and the generalized Green operator.

For a fixed base point phi everything reduces to integrals of

    g(tau) = Omega_tau^0(phi) f(phi_tau(phi))

over (-inf, 0] and [0, +inf), truncated at -T and T. With L = int_{-T}^0 g,
R = int_0^T g the two matching systems at t = 0 read

    variant one:  D xi = C- L + (I - C+) R
    variant two:  D xi = (I - C-) L + C+ R

and are solvable iff P_N(D*) applied to the right side vanishes.

Design choices:
- Integrands use the projectors at the base point (C+(phi) Omega_tau^0(phi),
  ...). The transported-projector form of the semi-axis solutions is kept as
  semi_axis_solution() for cross-checks only.
- Truncation is never silent: every result carries the tail bound
  2 K e^{-alpha T} / alpha * sup ||f||, with (K, alpha) the worst case of the
  plus and minus dichotomy certificates.
- The t <= 0 branch of both variants adds [C+ D+ - I] B; with the matching
  condition this is (I - C-) D+ B, so both branches meet at t = 0.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Dict, Iterable, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss

from dtorus.critical import CriticalData, degeneracy_defects, degeneracy_rows
from dtorus.dichotomy import DichotomyCertificate, ProjectorField, verify_dichotomy
from dtorus.flow import FundamentalMatrixOracle, inf_norm
from dtorus.schema import SolvabilityPayload
from dtorus.system import SystemDefinition

logger = logging.getLogger("dtorus.green")

Variant = Literal["one", "two"]
VARIANTS: Tuple[Variant, Variant] = ("one", "two")
Mode = Union[Variant, Tuple[Variant, ...]]

DEFAULT_TOL_SOLV = 1e-7
DEGENERACY_TOL = 1e-10


class QuadratureError(RuntimeError):
    pass


class GlueError(ValueError):
    pass


class UnsolvableError(RuntimeError):
    pass


@lru_cache(maxsize=None)
def _gauss(order: int) -> Tuple[np.ndarray, np.ndarray]:
    return leggauss(order)


@dataclass(frozen=True)
class QuadratureScheme:
    """Composite Gauss-Legendre rule on [-T, T] with panels of width <= panel_width."""

    T: float = 40.0
    order: int = 7
    panel_width: float = 0.25
    K: Optional[float] = None
    alpha: Optional[float] = None

    def __post_init__(self) -> None:
        if not (self.T > 0 and self.panel_width > 0 and self.order >= 1):
            raise ValueError(f"invalid quadrature scheme: {self}")

    @property
    def is_calibrated(self) -> bool:
        return self.K is not None and self.alpha is not None

    def calibrated(self, certificates: Iterable[DichotomyCertificate]) -> "QuadratureScheme":
        certs = list(certificates)
        return replace(self, K=max(c.K for c in certs), alpha=min(c.alpha for c in certs))

    def nodes(self, a: float, b: float) -> Tuple[np.ndarray, np.ndarray]:
        if b <= a:
            return np.empty(0), np.empty(0)
        panels = max(1, math.ceil((b - a) / self.panel_width - 1e-9))
        edges = np.linspace(a, b, panels + 1)
        xi, wi = _gauss(self.order)
        half = 0.5 * np.diff(edges)[:, None]
        mid = 0.5 * (edges[:-1] + edges[1:])[:, None]
        return (mid + half * xi).ravel(), (half * wi).ravel()

    def integrate(self, fun: Callable[[np.ndarray], np.ndarray], a: float, b: float) -> np.ndarray:
        """int_a^b fun; fun maps k nodes to a (k, n) array."""
        x, w = self.nodes(a, b)
        if x.size == 0:
            return np.zeros(np.shape(fun(np.array([a])))[1:])
        return w @ fun(x)

    def tail_bound(self, sup_f: float) -> float:
        if not self.is_calibrated:
            raise QuadratureError("tail bound needs a calibrated scheme (K, alpha)")
        return 2.0 * self.K * math.exp(-self.alpha * self.T) / self.alpha * sup_f


@dataclass(frozen=True)
class SolvabilityReport:
    variant: Variant
    phi: np.ndarray
    residual: np.ndarray
    residual_norm: float
    cross_check: Dict[str, np.ndarray]
    T: float
    tail_bound: float
    tol_solv: float
    solvable: bool

    @property
    def cross_check_gap(self) -> float:
        return max((float(inf_norm(v - self.residual)) for v in self.cross_check.values()), default=0.0)

    def to_payload(self, xi: Optional[np.ndarray] = None) -> SolvabilityPayload:
        return SolvabilityPayload(
            variant=self.variant,
            phi=self.phi.tolist(),
            residual=self.residual.tolist(),
            residual_norm=self.residual_norm,
            cross_check={k: v.tolist() for k, v in sorted(self.cross_check.items())},
            T=self.T,
            tail_bound=self.tail_bound,
            tol_solv=self.tol_solv,
            solvable=self.solvable,
            xi=None if xi is None else xi.tolist(),
        )


class GreenOperator:
    """
    All solvability/Green quantities at one base point. The two half-line
    integrals are computed once; evaluations at other t reuse them.
    """

    def __init__(
        self,
        system: SystemDefinition,
        plus: ProjectorField,
        minus: ProjectorField,
        cd: CriticalData,
        oracle: FundamentalMatrixOracle,
        quad: QuadratureScheme = QuadratureScheme(),
        tol_solv: float = DEFAULT_TOL_SOLV,
        cert_window: float = 10.0,
        cert_step: float = 0.5,
    ):
        if plus.side != "plus" or minus.side != "minus":
            raise ValueError("expected (plus, minus) projector fields")
        if not (plus.n == minus.n == cd.n == system.n):
            raise ValueError("projector, critical data and system dimensions differ")
        self.system = system
        self.Cp = plus.base
        self.Cm = minus.base
        self.cd = cd
        self.oracle = oracle
        self.tol_solv = tol_solv
        self.I = np.eye(system.n)
        T = quad.T
        oracle.ensure_span(-T, T)

        self.certificates: Tuple[DichotomyCertificate, ...] = ()
        if not quad.is_calibrated:
            window = min(cert_window, T)
            self.certificates = (
                verify_dichotomy(plus, oracle, window, cert_step),
                verify_dichotomy(minus, oracle, window, cert_step),
            )
            quad = quad.calibrated(self.certificates)
        self.quad = quad

        x_left, w_left = quad.nodes(-T, 0.0)
        x_right, w_right = quad.nodes(0.0, T)
        g_left, f_left = self._g(x_left)
        g_right, f_right = self._g(x_right)
        self.L = w_left @ g_left
        self.R = w_right @ g_right
        if not (np.all(np.isfinite(self.L)) and np.all(np.isfinite(self.R))):
            raise QuadratureError(f"non-finite half-line integral at phi={self.phi.tolist()}")
        self.sup_f = float(max(inf_norm(f_left), inf_norm(f_right)))
        self.tail = quad.tail_bound(self.sup_f)
        self._reports: Dict[Variant, SolvabilityReport] = {}
        logger.debug(
            "green_setup phi=%s T=%g nodes=%d sup_f=%.3e tail=%.3e",
            self.phi.tolist(), T, x_left.size + x_right.size, self.sup_f, self.tail,
        )

    @property
    def phi(self) -> np.ndarray:
        return self.oracle.base

    def _g(self, taus: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(Omega_tau^0 f(phi_tau), f(phi_tau)) at the nodes, shapes (k, n)."""
        if taus.size == 0:
            return np.zeros((0, self.system.n)), np.zeros((0, self.system.n))
        f = self.system.forcing_grid(self.oracle.phase(taus))
        B = self.oracle.backward(taus)
        return np.einsum("kij,kj->ki", B, f), f

    def _integral(self, a: float, b: float) -> np.ndarray:
        x, w = self.quad.nodes(a, b)
        if x.size == 0:
            return np.zeros(self.system.n)
        return w @ self._g(x)[0]

    # ---------- solvability ----------

    def bracket(self, variant: Variant) -> np.ndarray:
        """Right-hand side of the matching system for xi."""
        if variant == "one":
            return self.Cm @ self.L + (self.I - self.Cp) @ self.R
        if variant == "two":
            return (self.I - self.Cm) @ self.L + self.Cp @ self.R
        raise ValueError(f"unknown variant {variant!r}")

    def solvability(self, variant: Variant) -> SolvabilityReport:
        if variant in self._reports:
            return self._reports[variant]
        P = self.cd.P_NDstar
        residual = P @ self.bracket(variant)
        whole = self.L + self.R
        if variant == "one":
            cross = {"C-": P @ self.Cm @ whole, "I-C+": P @ (self.I - self.Cp) @ whole}
        else:
            cross = {"I-C-": P @ (self.I - self.Cm) @ whole, "C+": P @ self.Cp @ whole}
        norm = float(inf_norm(residual))
        report = SolvabilityReport(
            variant=variant,
            phi=self.phi.copy(),
            residual=residual,
            residual_norm=norm,
            cross_check=cross,
            T=self.quad.T,
            tail_bound=self.tail,
            tol_solv=self.tol_solv,
            solvable=norm <= self.tol_solv + self.tail,
        )
        self._reports[variant] = report
        return report

    def _require_solvable(self, variant: Variant, force: bool) -> None:
        report = self.solvability(variant)
        if not report.solvable and not force:
            raise UnsolvableError(
                f"variant {variant} is not solvable at phi={self.phi.tolist()}: "
                f"residual {report.residual_norm:.3e} > {self.tol_solv:.1e} + tail {self.tail:.1e}"
            )

    def xi(self, variant: Variant, c: Optional[Sequence[float]] = None, force: bool = False) -> np.ndarray:
        """xi = D+ {bracket} + P_N(D) c."""
        self._require_solvable(variant, force)
        c = np.zeros(self.system.n) if c is None else np.asarray(c, dtype=float)
        return self.cd.D_plus @ self.bracket(variant) + self.cd.P_ND @ c

    # ---------- Green operator ----------

    def degeneracy_defects(self) -> Dict[str, float]:
        """Homogeneous-degeneracy condition in both projector placements."""
        return degeneracy_defects(self.Cp, self.Cm, self.cd)

    def degeneracy_defect(self, mode: Mode) -> float:
        """Same condition restricted to the components a glue assignment takes from each variant."""
        if isinstance(mode, str):
            return float(np.max(degeneracy_rows(self.Cp, self.Cm, self.cd, mode)))
        rows = {v: degeneracy_rows(self.Cp, self.Cm, self.cd, v) for v in set(mode)}
        return float(max(rows[v][i] for i, v in enumerate(mode)))

    def _check_t(self, t: float) -> None:
        if not math.isfinite(t) or abs(t) >= self.quad.T:
            raise QuadratureError(f"t={t} outside the truncation window (-{self.quad.T}, {self.quad.T})")

    def branch(self, t: float, variant: Variant, side: Literal["plus", "minus"]) -> np.ndarray:
        """One branch of (G_t f)(phi) evaluated at t (either sign)."""
        self._check_t(t)
        Cp, Cm, I = self.Cp, self.Cm, self.I
        B = self.bracket(variant)
        if side == "plus":
            lo, hi = (Cp, I - Cp) if variant == "one" else (I - Cp, Cp)
            head = self._integral(0.0, t) if t >= 0 else -self._integral(t, 0.0)
            inner = lo @ head - hi @ (self.R - head) + Cp @ self.cd.D_plus @ B
        else:
            lo, hi = (Cm, I - Cm) if variant == "one" else (I - Cm, Cm)
            tail = self._integral(t, 0.0) if t <= 0 else -self._integral(0.0, t)
            inner = lo @ (self.L - tail) - hi @ tail + (Cp @ self.cd.D_plus - I) @ B
        return self.oracle.forward(t) @ inner

    def green(self, t: float, variant: Variant) -> np.ndarray:
        return self.branch(t, variant, "plus" if t >= 0 else "minus")

    def glued(self, t: float, assignment: Sequence[Variant]) -> np.ndarray:
        if len(assignment) != self.system.n:
            raise GlueError(f"glue assignment has {len(assignment)} entries, n={self.system.n}")
        values = {v: self.green(t, v) for v in set(assignment)}
        return np.array([values[v][i] for i, v in enumerate(assignment)])

    def evaluate(self, t: float, mode: Mode) -> np.ndarray:
        if isinstance(mode, str):
            return self.green(t, mode)
        return self.glued(t, mode)

    def residual(self, mode: Mode) -> Tuple[float, bool]:
        """Residual norm and verdict for a variant or a glue assignment."""
        if isinstance(mode, str):
            report = self.solvability(mode)
            return report.residual_norm, report.solvable
        r = np.array([self.solvability(v).residual[i] for i, v in enumerate(mode)])
        norm = float(inf_norm(r))
        return norm, norm <= self.tol_solv + self.tail

    def bounded_solution(
        self,
        t: float,
        variant: Variant,
        c: Optional[Sequence[float]] = None,
        force: bool = False,
    ) -> np.ndarray:
        """Green term plus the free term C+ P_N(D) c (t >= 0) / (I - C-) P_N(D) c (t <= 0)."""
        self._require_solvable(variant, force)
        x = self.green(t, variant)
        if c is None:
            return x
        c = np.asarray(c, dtype=float)
        free = self.Cp if t >= 0 else self.I - self.Cm
        return x + self.oracle.forward(t) @ (free @ self.cd.P_ND @ c)

    def semi_axis_solution(self, t: float, variant: Variant, xi: np.ndarray) -> np.ndarray:
        """
        Semi-axis family with transported projectors C(phi_tau) = Omega_0^tau C Omega_tau^0
        and kernels Omega_tau^t; used to cross-check the base-projector formulas.
        """
        self._check_t(t)
        T = self.quad.T
        F_t = self.oracle.forward(t)
        I = self.I

        def transported(C: np.ndarray, a: float, b: float) -> np.ndarray:
            x, w = self.quad.nodes(a, b)
            if x.size == 0:
                return np.zeros(self.system.n)
            F, B = self.oracle.forward(x), self.oracle.backward(x)
            f = self.system.forcing_grid(self.oracle.phase(x))
            C_tau = F @ C @ B
            kernel = F_t[None] @ B  # Omega_tau^t
            return w @ np.einsum("kij,kjl,kl->ki", kernel, C_tau, f)

        if t >= 0:
            near = self.Cp if variant == "one" else I - self.Cp
            return F_t @ self.Cp @ xi + transported(near, 0.0, t) - transported(I - near, t, T)
        near = self.Cm if variant == "one" else I - self.Cm
        return F_t @ (I - self.Cm) @ xi + transported(near, -T, t) - transported(I - near, t, 0.0)


# ---------- glue ----------

def auto_glue(system: SystemDefinition, Cplus: np.ndarray, Cminus: np.ndarray) -> Tuple[Variant, ...]:
    """
    Diagonal systems with diagonal 0/1 projectors only: component i takes
    variant two iff C+_ii = 1 and C-_ii = 0 (bounded homogeneous solution on
    the whole axis), variant one otherwise.
    """
    if not system.is_diagonal():
        raise GlueError("glue=auto needs a diagonal P; pass an explicit per-component list")
    for label, C in (("C+", Cplus), ("C-", Cminus)):
        off = C - np.diag(np.diag(C))
        d = np.diag(C)
        if np.max(np.abs(off), initial=0.0) > 1e-12 or np.any(np.minimum(np.abs(d), np.abs(d - 1.0)) > 1e-12):
            raise GlueError(f"glue=auto needs diagonal 0/1 projectors; {label} is not")
    return tuple("two" if (p > 0.5 and q < 0.5) else "one" for p, q in zip(np.diag(Cplus), np.diag(Cminus)))


def parse_glue(text: str, n: int) -> Optional[Tuple[Variant, ...]]:
    """'auto' -> None (derive later); otherwise a comma list of one/two of length n."""
    text = text.strip()
    if text == "auto":
        return None
    parts = tuple(p.strip() for p in text.split(","))
    if any(p not in VARIANTS for p in parts):
        raise GlueError(f"glue entries must be 'one' or 'two', got {text!r}")
    if len(parts) != n:
        raise GlueError(f"glue list has {len(parts)} entries, n={n}")
    return parts  # type: ignore[return-value]


# ---------- functional entry points ----------

def _operator(system, projectors, cd, oracle, quad, tol_solv) -> GreenOperator:
    plus, minus = projectors
    return GreenOperator(system, plus, minus, cd, oracle, quad, tol_solv)


def solvability(
    system: SystemDefinition,
    projectors: Tuple[ProjectorField, ProjectorField],
    cd: CriticalData,
    oracle: FundamentalMatrixOracle,
    variant: Variant,
    quad: QuadratureScheme = QuadratureScheme(),
    tol_solv: float = DEFAULT_TOL_SOLV,
) -> SolvabilityReport:
    return _operator(system, projectors, cd, oracle, quad, tol_solv).solvability(variant)


def xi(
    system: SystemDefinition,
    projectors: Tuple[ProjectorField, ProjectorField],
    cd: CriticalData,
    oracle: FundamentalMatrixOracle,
    variant: Variant,
    c: Optional[Sequence[float]] = None,
    quad: QuadratureScheme = QuadratureScheme(),
    force: bool = False,
) -> np.ndarray:
    return _operator(system, projectors, cd, oracle, quad, DEFAULT_TOL_SOLV).xi(variant, c, force)


def green(
    system: SystemDefinition,
    projectors: Tuple[ProjectorField, ProjectorField],
    cd: CriticalData,
    oracle: FundamentalMatrixOracle,
    t: float,
    variant: Variant,
    quad: QuadratureScheme = QuadratureScheme(),
) -> np.ndarray:
    op = _operator(system, projectors, cd, oracle, quad, DEFAULT_TOL_SOLV)
    defect = op.degeneracy_defect(variant)
    if defect > DEGENERACY_TOL:
        logger.warning(
            "degeneracy condition violated phi=%s variant=%s defect=%.3e",
            op.phi.tolist(), variant, defect,
        )
    return op.green(t, variant)


def bounded_solution(
    system: SystemDefinition,
    projectors: Tuple[ProjectorField, ProjectorField],
    cd: CriticalData,
    oracle: FundamentalMatrixOracle,
    t: float,
    variant: Variant,
    c: Optional[Sequence[float]] = None,
    quad: QuadratureScheme = QuadratureScheme(),
    force: bool = False,
) -> np.ndarray:
    return _operator(system, projectors, cd, oracle, quad, DEFAULT_TOL_SOLV).bounded_solution(t, variant, c, force)
