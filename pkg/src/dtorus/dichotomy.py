# src/dtorus/dichotomy.py
"""
Semi-axis dichotomy projectors C+(phi), C-(phi).

Purpose:
- Carry a projector given at the base point and transport it along the flow:
      C(phi_tau(phi)) = Omega_0^tau(phi) C(phi) Omega_tau^0(phi)
- Check the two exponential estimates numerically on a (t, tau) grid and fit
  the constants (DichotomyCertificate).
- Optionally estimate the projectors from singular vectors of Omega_0^{+-T}.

Conventions:
- Matrix norm: operator infinity-norm everywhere, so certificates from different
  runs are comparable.
- Plus side samples t, tau in [0, T]; minus side samples t, tau in [-T, 0].
- The decay rate is fitted on pairs with |t - tau| >= 1 whose times both lie
  in the outer half of the window (the asymptotic part of the semi-axis).
  Pairs closer to the diagonal or to the base point are transient and only
  enter K. With too few outer pairs the whole window is used.
- Estimation is a heuristic for systems with well separated exponents and is
  always flagged; exact projectors take precedence when known.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Optional, Protocol, Tuple

import numpy as np

from dtorus.flow import FundamentalMatrixOracle, inf_norm
from dtorus.schema import CertificatePayload
from dtorus.system import CatalogEntry, SystemDefinition

logger = logging.getLogger("dtorus.dichotomy")

Side = Literal["plus", "minus"]

IDEMPOTENCY_TOL = 1e-10
FIT_MIN_SEPARATION = 1.0
SPECTRAL_GAP = 10.0


class ProjectorError(ValueError):
    pass


class DichotomyError(RuntimeError):
    def __init__(self, message: str, offending: Optional[Tuple[float, float]] = None):
        self.offending = offending
        super().__init__(message)


class AmbiguousSpectrumError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProjectorField:
    side: Side
    base: np.ndarray
    estimated: bool = False

    def __post_init__(self) -> None:
        C = np.asarray(self.base, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ProjectorError(f"{self.side} projector must be square, got shape {C.shape}")
        if not np.all(np.isfinite(C)):
            raise ProjectorError(f"{self.side} projector has non-finite entries")
        defect = float(inf_norm(C @ C - C))
        if defect > IDEMPOTENCY_TOL:
            raise ProjectorError(f"{self.side} projector is not idempotent: ||C^2 - C|| = {defect:.3e}")
        object.__setattr__(self, "base", C)

    @property
    def n(self) -> int:
        return self.base.shape[0]


@dataclass(frozen=True)
class DichotomyCertificate:
    side: Side
    T: float
    times: np.ndarray = field(repr=False)
    alpha: float
    K: float
    max_violation: float
    pairs: int

    def to_payload(self) -> CertificatePayload:
        return CertificatePayload(side=self.side, K=self.K, alpha=self.alpha, maxViolation=self.max_violation, T=self.T)


def transport(field_: ProjectorField, oracle: FundamentalMatrixOracle, tau) -> np.ndarray:
    """Omega_0^tau C Omega_tau^0; array tau gives (k, n, n)."""
    F = oracle.forward(tau)
    B = oracle.backward(tau)
    return F @ field_.base @ B


def verify_dichotomy(
    field_: ProjectorField,
    oracle: FundamentalMatrixOracle,
    T: float,
    grid_step: float,
) -> DichotomyCertificate:
    """
    Sample ||Omega_0^t C Omega_tau^0|| for t >= tau and
    ||Omega_0^t (I - C) Omega_tau^0|| for tau >= t, fit log-norm against
    |t - tau| by least squares.
    """
    if not T > 0 or not grid_step > 0:
        raise ValueError(f"T and grid_step must be positive (got {T}, {grid_step})")
    count = int(np.floor(T / grid_step + 1e-9)) + 1
    times = np.linspace(0.0, grid_step * (count - 1), count)
    if field_.side == "minus":
        times = -times[::-1]

    F = oracle.forward(times)  # (k, n, n)
    B = oracle.backward(times)
    C = field_.base
    eye = np.eye(field_.n)
    stable = np.einsum("iab,bc,jcd->ijad", F, C, B)
    unstable = np.einsum("iab,bc,jcd->ijad", F, eye - C, B)
    norm_s = inf_norm(stable)  # [i, j]: t = times[i], tau = times[j]
    norm_u = inf_norm(unstable)

    ti, tj = np.meshgrid(times, times, indexing="ij")
    first = ti >= tj
    second = tj >= ti
    for norms, mask in ((norm_s, first), (norm_u, second)):
        bad = mask & ~np.isfinite(norms)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise DichotomyError(
                f"{field_.side}: non-finite norm at (t, tau) = ({times[i]:g}, {times[j]:g})",
                (float(times[i]), float(times[j])),
            )

    d = np.abs(ti - tj)
    dist = np.concatenate([d[first], d[second]])
    norms = np.concatenate([norm_s[first], norm_u[second]])
    far = np.minimum(np.abs(ti), np.abs(tj)) >= 0.5 * T
    outer = np.concatenate([far[first], far[second]])
    positive = norms > 1e-300
    fit = positive & (dist >= FIT_MIN_SEPARATION) & outer
    if np.unique(dist[fit]).size < 2:
        fit = positive & (dist >= FIT_MIN_SEPARATION)
    if np.unique(dist[fit]).size < 2:
        raise DichotomyError(f"{field_.side}: not enough separated samples to fit a rate (T={T}, step={grid_step})")

    slope, intercept = np.polyfit(dist[fit], np.log(norms[fit]), 1)
    alpha = float(-slope)
    if not alpha > 0:
        worst = int(np.argmax(np.where(fit, norms * np.exp(-dist), -np.inf)))
        raise DichotomyError(
            f"{field_.side}: growth detected, fitted rate alpha={alpha:.4g} <= 0 "
            f"(largest norm {norms[worst]:.4g} at |t - tau| = {dist[worst]:g})"
        )
    envelope = np.exp(intercept - alpha * dist)
    violation = float(np.max(np.where(fit, norms / envelope - 1.0, 0.0), initial=0.0))
    K = float(max(1.0, np.max(norms * np.exp(alpha * dist))))

    cert = DichotomyCertificate(
        side=field_.side,
        T=float(T),
        times=times,
        alpha=alpha,
        K=K,
        max_violation=max(0.0, violation),
        pairs=int(first.sum() + second.sum()),
    )
    logger.debug(
        "certificate side=%s phi=%s alpha=%.4g K=%.4g violation=%.3e",
        cert.side, oracle.base.tolist(), cert.alpha, cert.K, cert.max_violation,
    )
    return cert


def _decaying_subspace(M: np.ndarray, label: str) -> np.ndarray:
    """Orthoprojector onto the right singular vectors of M with singular value < 1."""
    _, s, Vt = np.linalg.svd(M)
    n = s.size
    k = int(np.sum(s >= 1.0))  # s is descending: first k grow, the rest decay
    if 0 < k < n:
        ratio = s[k - 1] / s[k] if s[k] > 0 else np.inf
        if ratio < SPECTRAL_GAP:
            raise AmbiguousSpectrumError(
                f"{label}: ambiguous spectral gap, singular values {s.tolist()} split with ratio {ratio:.3g} < {SPECTRAL_GAP:g}"
            )
    elif n >= 2:
        ratios = s[:-1] / np.where(s[1:] > 0, s[1:], np.finfo(float).tiny)
        if np.max(ratios) < SPECTRAL_GAP:
            raise AmbiguousSpectrumError(
                f"{label}: no separated exponents, all singular values {s.tolist()} on one side of 1"
            )
    V = Vt[k:].T
    return V @ V.T


def estimate_projectors(
    system: SystemDefinition,
    oracle: FundamentalMatrixOracle,
    T: float,
) -> Tuple[ProjectorField, ProjectorField]:
    """
    C+ = orthoprojector onto the forward-decaying subspace of Omega_0^T;
    I - C- = orthoprojector onto the backward-decaying subspace of Omega_0^{-T}.
    """
    if not T > 0:
        raise ValueError(f"estimation window must be positive, got {T}")
    if oracle.system.n != system.n:
        raise ValueError("oracle and system dimensions differ")
    plus = _decaying_subspace(oracle.forward(T), "C+ estimate")
    minus = np.eye(system.n) - _decaying_subspace(oracle.forward(-T), "C- estimate")
    logger.debug("estimate_projectors phi=%s T=%g", oracle.base.tolist(), T)
    return ProjectorField("plus", plus, estimated=True), ProjectorField("minus", minus, estimated=True)


class ProjectorProvider(Protocol):
    estimated: bool

    def fields(self, oracle: FundamentalMatrixOracle) -> Tuple[ProjectorField, ProjectorField]:
        ...


@dataclass(frozen=True)
class ExactProjectors:
    """Projectors from a catalog entry or a system file, evaluated at the base point."""

    entry: CatalogEntry
    estimated: bool = False

    def fields(self, oracle: FundamentalMatrixOracle) -> Tuple[ProjectorField, ProjectorField]:
        plus, minus = self.entry.projectors_at(oracle.base)
        return ProjectorField("plus", plus), ProjectorField("minus", minus)


@dataclass(frozen=True)
class EstimatedProjectors:
    window: float = 20.0
    estimated: bool = True

    def fields(self, oracle: FundamentalMatrixOracle) -> Tuple[ProjectorField, ProjectorField]:
        return estimate_projectors(oracle.system, oracle, self.window)
