# src/dtorus/flow.py
"""
Angular flow phi_t(phi) and the matriciant Omega_tau^t(phi).

Purpose:
- Integrate dphi/dt = a(phi) from a base point (FlowTrajectory).
- Integrate the variational equation dX/dt = P(phi_t(phi)) X for
  Omega_0^t(phi), and the adjoint equation dY/dtau = -Y P(phi_tau(phi)) for
  Omega_tau^0(phi) (FundamentalMatrixOracle).

Design choices:
- Omega_tau^0 always comes from the adjoint equation, never from inverting
  Omega_0^tau: in a dichotomous system Omega_0^tau is exponentially
  ill-conditioned.
- Integration runs in segments of length dt_ckpt (default 1.0) starting from
  t = 0 in both directions; each segment keeps its DOP853 dense output and the
  state at its end is cached as a checkpoint. Evaluation at arbitrary times
  (whole quadrature grids) needs no re-integration, and a checkpoint time
  returns the cached state exactly (Omega_0^0 = I bit for bit).
- Spans grow lazily under a lock, so one oracle may be shared by threads.
"""
from __future__ import annotations

import logging
import math
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from dtorus.system import SystemDefinition

logger = logging.getLogger("dtorus.flow")

# Hard ceiling on lazy span growth; beyond it something is wrong with the caller.
MAX_SPAN = 1.0e4


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t_fail: Optional[float] = None):
        self.t_fail = t_fail
        super().__init__(message)


class SpanError(IntegrationError):
    pass


@dataclass(frozen=True)
class Tolerances:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10

    def __post_init__(self) -> None:
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError(f"tolerances must be positive (got {self.abs_tol}, {self.rel_tol})")


class _SegmentedSolution:
    """
    Dense solution of y' = rhs(t, y), y(0) = y0, built from fixed-length
    segments in both time directions.
    """

    def __init__(
        self,
        rhs: Callable[[float, np.ndarray], np.ndarray],
        y0: np.ndarray,
        checkpoint: float,
        tol: Tolerances,
        label: str,
    ):
        if not checkpoint > 0:
            raise ValueError(f"checkpoint spacing must be positive, got {checkpoint}")
        self.rhs = rhs
        self.dt = float(checkpoint)
        self.tol = tol
        self.label = label
        self.dim = len(y0)
        y0 = np.array(y0, dtype=float)
        # checkpoints[k] is the state at +-k*dt; segments[k] covers [k dt, (k+1) dt]
        self._fwd: List = []
        self._bwd: List = []
        self._fwd_ckpt: List[np.ndarray] = [y0]
        self._bwd_ckpt: List[np.ndarray] = [y0]
        self._lock = threading.Lock()

    @property
    def span(self) -> Tuple[float, float]:
        return (-len(self._bwd) * self.dt, len(self._fwd) * self.dt)

    @property
    def checkpoints(self) -> List[Tuple[float, np.ndarray]]:
        back = [(-k * self.dt, y) for k, y in enumerate(self._bwd_ckpt)][:0:-1]
        fwd = [(k * self.dt, y) for k, y in enumerate(self._fwd_ckpt)]
        return back + fwd

    def ensure(self, t_lo: float, t_hi: float) -> None:
        if not (math.isfinite(t_lo) and math.isfinite(t_hi)):
            raise SpanError(f"{self.label}: non-finite span [{t_lo}, {t_hi}]")
        if max(abs(t_lo), abs(t_hi)) > MAX_SPAN:
            raise SpanError(f"{self.label}: span [{t_lo}, {t_hi}] exceeds the limit {MAX_SPAN}")
        lo, hi = self.span
        if t_lo >= lo and t_hi <= hi:
            return
        with self._lock:
            while len(self._fwd) * self.dt < t_hi:
                self._extend(+1)
            while len(self._bwd) * self.dt < -t_lo:
                self._extend(-1)

    def _extend(self, direction: int) -> None:
        segs = self._fwd if direction > 0 else self._bwd
        ckpts = self._fwd_ckpt if direction > 0 else self._bwd_ckpt
        k = len(segs)
        t0, t1 = direction * k * self.dt, direction * (k + 1) * self.dt
        sol = solve_ivp(
            self.rhs,
            (t0, t1),
            ckpts[k],
            method="DOP853",
            rtol=self.tol.rel_tol,
            atol=self.tol.abs_tol,
            dense_output=True,
        )
        bad = ~np.all(np.isfinite(sol.y), axis=0)
        if bad.any():
            t_fail = float(sol.t[int(np.argmax(bad))])
            raise SpanError(f"{self.label}: non-finite state at t={t_fail:.6g}", t_fail)
        if not sol.success:
            t_fail = float(sol.t[-1])
            raise SpanError(f"{self.label}: integration failed at t={t_fail:.6g}: {sol.message}", t_fail)
        segs.append(sol.sol)
        ckpts.append(sol.y[:, -1].copy())

    def __call__(self, t) -> np.ndarray:
        """State at t (scalar -> (dim,), array -> (dim, k))."""
        scalar = np.ndim(t) == 0
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        if ts.size:
            self.ensure(float(ts.min()), float(ts.max()))
        out = np.empty((self.dim, ts.size))
        for direction, segs, ckpts in ((1, self._fwd, self._fwd_ckpt), (-1, self._bwd, self._bwd_ckpt)):
            mask = ts >= 0 if direction > 0 else ts < 0
            if not mask.any():
                continue
            sub = ts[mask]
            r = np.abs(sub) / self.dt
            whole = np.floor(r)
            exact = (r == whole) & (whole < len(ckpts))
            vals = np.empty((self.dim, sub.size))
            for j in np.flatnonzero(exact):
                vals[:, j] = ckpts[int(whole[j])]
            idx = np.minimum(whole.astype(int), len(segs) - 1)
            for k in np.unique(idx[~exact]):
                sel = (idx == k) & ~exact
                vals[:, sel] = segs[k](sub[sel]).reshape(self.dim, -1)
            out[:, mask] = vals
        return out[:, 0] if scalar else out


class FlowTrajectory:
    """phi_t(phi) with dense output over a growing span."""

    def __init__(
        self,
        system: SystemDefinition,
        phi: Sequence[float],
        span: Tuple[float, float],
        tol: Tolerances = Tolerances(),
        checkpoint: float = 1.0,
    ):
        phi = np.array(phi, dtype=float).reshape(-1)
        if phi.size != system.m:
            raise ValueError(f"base point has {phi.size} components, system has m={system.m}")
        self.system = system
        self.base = phi
        self.tol = tol
        self._sol = _SegmentedSolution(
            lambda t, y: system.angular_velocity(y),
            phi,
            checkpoint,
            tol,
            label=f"flow phi={phi.tolist()}",
        )
        self._sol.ensure(min(span[0], 0.0), max(span[1], 0.0))

    @property
    def span(self) -> Tuple[float, float]:
        return self._sol.span

    def at(self, t) -> np.ndarray:
        """phi_t(phi): scalar t -> (m,), array -> (m, k)."""
        return self._sol(t)

    def extend(self, t_lo: float, t_hi: float) -> None:
        self._sol.ensure(t_lo, t_hi)


class FundamentalMatrixOracle:
    """
    Omega_0^t(phi) (forward) and Omega_t^0(phi) (adjoint), both with dense output.
    """

    def __init__(
        self,
        system: SystemDefinition,
        trajectory: FlowTrajectory,
        tol: Tolerances = Tolerances(),
        checkpoint: float = 1.0,
    ):
        self.system = system
        self.trajectory = trajectory
        self.tol = tol
        self.checkpoint = checkpoint
        m, n = system.m, system.n
        self._m, self._n = m, n
        eye = np.eye(n).ravel()
        y0 = np.concatenate([trajectory.base, eye, eye])

        def rhs(t: float, y: np.ndarray) -> np.ndarray:
            phi = y[:m]
            P = system.matrix(phi)
            X = y[m:m + n * n].reshape(n, n)
            Y = y[m + n * n:].reshape(n, n)
            return np.concatenate([system.angular_velocity(phi), (P @ X).ravel(), (-(Y @ P)).ravel()])

        self._sol = _SegmentedSolution(rhs, y0, checkpoint, tol, label=f"oracle phi={trajectory.base.tolist()}")

    @property
    def base(self) -> np.ndarray:
        return self.trajectory.base

    @property
    def span(self) -> Tuple[float, float]:
        return self._sol.span

    def ensure_span(self, t_lo: float, t_hi: float) -> None:
        self._sol.ensure(t_lo, t_hi)
        self.trajectory.extend(t_lo, t_hi)

    def _block(self, t, which: int) -> np.ndarray:
        m, n = self._m, self._n
        y = self._sol(t)
        start = m + which * n * n
        block = y[start:start + n * n]
        if np.ndim(t) == 0:
            return block.reshape(n, n)
        return block.T.reshape(-1, n, n)

    def forward(self, t) -> np.ndarray:
        """Omega_0^t(phi); array t gives shape (k, n, n)."""
        return self._block(t, 0)

    def backward(self, t) -> np.ndarray:
        """Omega_t^0(phi) from the adjoint equation; array t gives (k, n, n)."""
        return self._block(t, 1)

    def omega(self, t: float, tau: float) -> np.ndarray:
        """Omega_tau^t(phi) = Omega_0^t(phi) Omega_tau^0(phi)."""
        if t == tau:
            return np.eye(self._n)
        return self.forward(t) @ self.backward(tau)

    def phase(self, t) -> np.ndarray:
        return self.trajectory.at(t)

    @property
    def checkpoints(self) -> List[Tuple[float, np.ndarray]]:
        return self._sol.checkpoints


def _check_span(span: Tuple[float, float]) -> Tuple[float, float]:
    t0, t1 = float(span[0]), float(span[1])
    if not (math.isfinite(t0) and math.isfinite(t1)):
        raise ValueError(f"span must be finite, got [{t0}, {t1}]")
    if t0 > t1:
        raise ValueError(f"span must satisfy t0 <= t1, got [{t0}, {t1}]")
    return t0, t1


def flow(
    system: SystemDefinition,
    phi: Sequence[float],
    span: Tuple[float, float],
    tol: Tolerances = Tolerances(),
    checkpoint: float = 1.0,
) -> FlowTrajectory:
    t0, t1 = _check_span(span)
    started = time.perf_counter()
    traj = FlowTrajectory(system, phi, (t0, t1), tol, checkpoint)
    logger.debug(
        "integrate op=flow phi=%s span=[%g, %g] latency_ms=%.1f",
        traj.base.tolist(), t0, t1, (time.perf_counter() - started) * 1000.0,
    )
    return traj


def build_oracle(
    system: SystemDefinition,
    phi: Sequence[float],
    span: Tuple[float, float],
    tol: Tolerances = Tolerances(),
    checkpoint: float = 1.0,
) -> FundamentalMatrixOracle:
    """Flow + matriciant at one base point, pre-integrated over span."""
    t0, t1 = _check_span(span)
    started = time.perf_counter()
    traj = FlowTrajectory(system, phi, (t0, t1), tol, checkpoint)
    oracle = FundamentalMatrixOracle(system, traj, tol, checkpoint)
    oracle.ensure_span(min(t0, 0.0), max(t1, 0.0))
    logger.debug(
        "integrate op=oracle phi=%s span=[%g, %g] latency_ms=%.1f",
        traj.base.tolist(), t0, t1, (time.perf_counter() - started) * 1000.0,
    )
    return oracle


def omega(oracle: FundamentalMatrixOracle, t: float, tau: float) -> np.ndarray:
    return oracle.omega(t, tau)


def inf_norm(A: np.ndarray) -> float:
    """Operator infinity-norm (max absolute row sum); batched over leading axes."""
    A = np.asarray(A)
    if A.ndim == 1:
        return float(np.max(np.abs(A))) if A.size else 0.0
    return np.max(np.sum(np.abs(A), axis=-1), axis=-1)


def _defect(A: np.ndarray, ref: np.ndarray, relative: bool) -> float:
    err = float(inf_norm(A - ref))
    return err / max(1.0, float(inf_norm(ref))) if relative else err


def cocycle_check(
    oracle: FundamentalMatrixOracle,
    samples: Iterable[Tuple[float, float, float]],
    relative: bool = False,
) -> float:
    """
    Max over (t, tau, s) of the cocycle defect
        ||Omega_tau^t Omega_s^tau - Omega_s^t||
    and of the shift defect
        ||Omega_tau^t(phi_s(phi)) - Omega_{tau+s}^{t+s}(phi)||.
    Absolute by default; relative=True divides each by max(1, ||reference||).
    """
    worst = 0.0
    for t, tau, s in samples:
        ref = oracle.omega(t, s)
        worst = max(worst, _defect(oracle.omega(t, tau) @ oracle.omega(tau, s), ref, relative))

        shifted_base = oracle.phase(s)
        shifted = build_oracle(
            oracle.system,
            shifted_base,
            (min(t, tau, 0.0), max(t, tau, 0.0)),
            oracle.tol,
            oracle.checkpoint,
        )
        worst = max(worst, _defect(shifted.omega(t, tau), oracle.omega(t + s, tau + s), relative))
    return worst
