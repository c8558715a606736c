# src/dtorus/schema.py
"""
External contracts (schema).

Purpose:
- Strict, machine-validated models for everything that crosses the process
  boundary: system definition files, resolved run options, and the JSON
  reports written by the CLI.
- Validation happens before any numerics run, so a malformed file fails with a
  field-level message instead of a shape error deep inside an integrator.

Numeric domain objects (matrices, oracles) stay as dataclasses/numpy arrays in
their modules; they are converted to these payloads only when rendered.
"""
from __future__ import annotations

from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

PhaseMode = Literal["periodic", "line"]
Variant = Literal["one", "two"]
Side = Literal["plus", "minus"]


def _to_text(value):
    # JSON numbers are accepted wherever an expression is expected
    if isinstance(value, bool):
        raise ValueError("booleans are not expressions")
    if isinstance(value, (int, float)):
        return repr(value)
    return value


class ProjectorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    plus: List[List[str]] = Field(..., description="C+(phi) as a matrix of expressions.")
    minus: List[List[str]] = Field(..., description="C-(phi) as a matrix of expressions.")

    @field_validator("plus", "minus", mode="before")
    @classmethod
    def _cells_to_text(cls, v):
        if isinstance(v, list):
            return [[_to_text(c) for c in row] if isinstance(row, list) else row for row in v]
        return v


class SystemConfig(BaseModel):
    """Contents of a system definition file (JSON)."""

    model_config = ConfigDict(extra="forbid")

    name: str = Field("custom", description="Label used in reports.")
    m: int = Field(..., ge=1, description="Phase dimension.")
    n: int = Field(..., ge=1, description="State dimension.")
    a: List[str] = Field(..., description="Angular velocity field, m expressions.")
    P: List[List[str]] = Field(..., description="n x n coefficient matrix of expressions.")
    f: List[str] = Field(..., description="Inhomogeneity, n expressions.")
    phase_mode: PhaseMode = Field("line", description="periodic: angles mod 2pi; line: unbounded reals.")
    projectors: Optional[ProjectorConfig] = None
    torus: Optional[List[str]] = Field(None, description="Closed-form torus u(phi), if known.")

    @field_validator("a", "f", "torus", mode="before")
    @classmethod
    def _vector_to_text(cls, v):
        if isinstance(v, list):
            return [_to_text(c) for c in v]
        return v

    @field_validator("P", mode="before")
    @classmethod
    def _matrix_to_text(cls, v):
        if isinstance(v, list):
            return [[_to_text(c) for c in row] if isinstance(row, list) else row for row in v]
        return v

    @model_validator(mode="after")
    def _check_shapes(self) -> "SystemConfig":
        if len(self.a) != self.m:
            raise ValueError(f"dimension mismatch: a has {len(self.a)} entries, m={self.m}")
        if len(self.f) != self.n:
            raise ValueError(f"dimension mismatch: f has {len(self.f)} entries, n={self.n}")
        _check_square("P", self.P, self.n)
        if self.projectors is not None:
            _check_square("projectors.plus", self.projectors.plus, self.n)
            _check_square("projectors.minus", self.projectors.minus, self.n)
        if self.torus is not None and len(self.torus) != self.n:
            raise ValueError(f"dimension mismatch: torus has {len(self.torus)} entries, n={self.n}")
        return self


def _check_square(label: str, rows: List[List[str]], n: int) -> None:
    if len(rows) != n:
        raise ValueError(f"dimension mismatch: {label} has {len(rows)} rows, n={n}")
    for i, row in enumerate(rows):
        if len(row) != n:
            raise ValueError(f"dimension mismatch: {label} row {i} has {len(row)} entries, n={n}")


class RunConfig(BaseModel):
    """Every resolved CLI option. Its dump is the run manifest."""

    model_config = ConfigDict(extra="forbid")

    command: str
    system: str
    forcing: Dict[str, str] = Field(default_factory=dict)
    phi: List[float] = Field(default_factory=list)
    span: Tuple[float, float] = (-10.0, 10.0)
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    checkpoint: float = 1.0
    rtol: float = 1e-10
    tol_solv: float = 1e-7
    T: float = 40.0
    order: int = 7
    panel: float = 0.25
    cert_window: float = 10.0
    cert_step: float = 0.5
    grid: Optional[str] = None
    variant: Optional[Variant] = None
    glue: Optional[str] = None
    c: List[float] = Field(default_factory=list)
    t_star: float = 2.0
    Ns: List[int] = Field(default_factory=list)
    estimate_projectors: bool = False
    force: bool = False
    out: Optional[str] = None
    format: Literal["csv", "json"] = "json"
    seed: int = 0
    jobs: int = 1


# ---------- Report payloads ----------

class CertificatePayload(BaseModel):
    side: Side
    K: float
    alpha: float
    maxViolation: float
    T: float


class CriticalPayload(BaseModel):
    D: List[List[float]]
    D_plus: List[List[float]]
    P_ND: List[List[float]]
    P_NDstar: List[List[float]]
    rank: int
    singular_values: List[float]
    rtol: float
    regime: Literal["regular", "critical"]
    moore_penrose: bool
    penrose_defects: Dict[str, float]
    identity_defects: Dict[str, float]


class SolvabilityPayload(BaseModel):
    variant: Variant
    phi: List[float]
    residual: List[float]
    residual_norm: float
    cross_check: Dict[str, List[float]]
    T: float
    tail_bound: float
    tol_solv: float
    solvable: bool
    xi: Optional[List[float]] = None


class TorusSummary(BaseModel):
    points: int
    mode: Union[Variant, List[Variant]]
    max_residual: float
    max_tail_bound: float
    unsolvable_points: List[int]
    known_torus_max_error: Optional[float] = None
    invariance_defect: Optional[float] = None
    t_star: Optional[float] = None


class RampRow(BaseModel):
    N: int
    values: List[float]
    residual_norm: float
    known_error: float
    max_change: Optional[float] = None
