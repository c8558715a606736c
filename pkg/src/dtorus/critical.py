# src/dtorus/critical.py
"""
Critical-case data at a base point.

    D(phi) = C+(phi) - (I - C-(phi))

with its Moore-Penrose pseudoinverse D+(phi) and the orthoprojectors
    P_N(D)  = I - D+ D      (onto ker D)
    P_N(D*) = I - D D+      (onto ker D*)

Rank decisions change the whole solvability analysis, so the relative rank
tolerance is explicit (default 1e-10 * sigma_max) and travels with every
CriticalData.

Transport along the flow is a similarity by Omega_0^t(phi). The transported
inverse still satisfies D D^- D = D and D^- D D^- = D^-, but Omega is not
orthogonal, so it is in general no longer the Moore-Penrose inverse and the
transported projectors are no longer orthogonal. CriticalData.moore_penrose
records which of the two a value is.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, Literal

import numpy as np

from dtorus.flow import FundamentalMatrixOracle, inf_norm
from dtorus.schema import CriticalPayload

DEFAULT_RTOL = 1e-10


class CriticalError(RuntimeError):
    pass


@dataclass(frozen=True)
class CriticalData:
    D: np.ndarray
    D_plus: np.ndarray
    P_ND: np.ndarray
    P_NDstar: np.ndarray
    rank: int
    singular_values: np.ndarray
    rtol: float = DEFAULT_RTOL
    moore_penrose: bool = True

    @property
    def n(self) -> int:
        return self.D.shape[0]


def build_D(Cplus: np.ndarray, Cminus: np.ndarray) -> np.ndarray:
    Cplus = np.asarray(Cplus, dtype=float)
    Cminus = np.asarray(Cminus, dtype=float)
    if Cplus.ndim != 2 or Cplus.shape[0] != Cplus.shape[1] or Cplus.shape != Cminus.shape:
        raise ValueError(f"shape mismatch: C+ {Cplus.shape}, C- {Cminus.shape}")
    return Cplus - np.eye(Cplus.shape[0]) + Cminus


def pinv(D: np.ndarray, rtol: float = DEFAULT_RTOL) -> CriticalData:
    """SVD pseudoinverse; sigma_i <= rtol * sigma_max counts as zero."""
    if not 0.0 < rtol < 1.0:
        raise ValueError(f"rtol must lie in (0, 1), got {rtol}")
    D = np.asarray(D, dtype=float)
    if not np.all(np.isfinite(D)):
        raise CriticalError("D has non-finite entries")
    try:
        U, s, Vt = np.linalg.svd(D)
    except np.linalg.LinAlgError as e:
        raise CriticalError(f"SVD did not converge: {e}") from e
    cutoff = rtol * s[0] if s.size else 0.0
    keep = s > cutoff
    r = int(keep.sum())
    D_plus = (Vt[:r].T / s[:r]) @ U[:, :r].T
    eye = np.eye(D.shape[0])
    return CriticalData(
        D=D,
        D_plus=D_plus,
        P_ND=eye - D_plus @ D,
        P_NDstar=eye - D @ D_plus,
        rank=r,
        singular_values=s,
        rtol=rtol,
    )


def transport_critical(cd: CriticalData, oracle: FundamentalMatrixOracle, t: float) -> CriticalData:
    """Omega_0^t X Omega_t^0 applied to D, D^-, P_N(D), P_N(D*)."""
    F = oracle.forward(t)
    B = oracle.backward(t)

    def move(X: np.ndarray) -> np.ndarray:
        return F @ X @ B

    D_t = move(cd.D)
    return replace(
        cd,
        D=D_t,
        D_plus=move(cd.D_plus),
        P_ND=move(cd.P_ND),
        P_NDstar=move(cd.P_NDstar),
        singular_values=np.linalg.svd(D_t, compute_uv=False),
        moore_penrose=False,
    )


def regime(cd: CriticalData) -> Literal["regular", "critical"]:
    """regular: D invertible, the bounded solution is unique (full-axis dichotomy)."""
    return "regular" if cd.rank == cd.n else "critical"


def penrose_defects(cd: CriticalData) -> Dict[str, float]:
    """Residuals of the Penrose conditions (the last two only hold for D+)."""
    D, G = cd.D, cd.D_plus
    out = {
        "DGD-D": float(inf_norm(D @ G @ D - D)),
        "GDG-G": float(inf_norm(G @ D @ G - G)),
    }
    if cd.moore_penrose:
        out["(DG)^T-DG"] = float(inf_norm((D @ G).T - D @ G))
        out["(GD)^T-GD"] = float(inf_norm((G @ D).T - G @ D))
    return out


def identity_defects(Cplus: np.ndarray, Cminus: np.ndarray, cd: CriticalData) -> Dict[str, float]:
    """
    P_N(D*) C+ = P_N(D*) (I - C-)   and   [C+ - (I - C-)] D+ = I - P_N(D*).
    """
    eye = np.eye(cd.n)
    P = cd.P_NDstar
    return {
        "PC+ - P(I-C-)": float(inf_norm(P @ Cplus - P @ (eye - Cminus))),
        "DD+ - (I-P)": float(inf_norm((Cplus - (eye - Cminus)) @ cd.D_plus - (eye - P))),
    }


def degeneracy_rows(
    Cplus: np.ndarray, Cminus: np.ndarray, cd: CriticalData, variant: Literal["one", "two"]
) -> np.ndarray:
    """
    Row-wise max of the homogeneous-degeneracy matrices, shape (n,):
        one: C+ P_N(D),       (I - C-) P_N(D)
        two: (I - C+) P_N(D), C- P_N(D)
    Row i vanishes iff component i of every free term vanishes.
    """
    eye = np.eye(cd.n)
    PN = cd.P_ND
    if variant == "one":
        pair = (Cplus @ PN, (eye - Cminus) @ PN)
    elif variant == "two":
        pair = ((eye - Cplus) @ PN, Cminus @ PN)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return np.maximum(*(np.sum(np.abs(M), axis=1) for M in pair))


def degeneracy_defects(Cplus: np.ndarray, Cminus: np.ndarray, cd: CriticalData) -> Dict[str, float]:
    return {v: float(np.max(degeneracy_rows(Cplus, Cminus, cd, v))) for v in ("one", "two")}


def to_payload(cd: CriticalData, Cplus: np.ndarray, Cminus: np.ndarray) -> CriticalPayload:
    return CriticalPayload(
        D=cd.D.tolist(),
        D_plus=cd.D_plus.tolist(),
        P_ND=cd.P_ND.tolist(),
        P_NDstar=cd.P_NDstar.tolist(),
        rank=cd.rank,
        singular_values=cd.singular_values.tolist(),
        rtol=cd.rtol,
        regime=regime(cd),
        moore_penrose=cd.moore_penrose,
        penrose_defects=penrose_defects(cd),
        identity_defects=identity_defects(Cplus, Cminus, cd),
    )
