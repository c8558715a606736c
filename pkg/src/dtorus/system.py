# src/dtorus/system.py
"""
Skew-product system definitions.

    dphi/dt = a(phi),     dx/dt = P(phi) x + f(phi)

Purpose:
- Hold the triple (a, P, f) as parsed expressions (SystemDefinition).
- Ship the built-in catalog of worked examples (with their exact dichotomy
  projectors and closed-form tori) so results can be checked against known
  answers.
- Load user systems from JSON files validated by schema.SystemConfig.

Design choices:
- Catalog systems run in "line" phase mode: their coefficients (tanh, cosh, ...)
  are not 2pi-periodic, so the flow lives on the real line.
- The countable l2 example exists only as finite truncations; the truncation
  dimension N is an explicit parameter. The system is diagonal, so every
  truncation is exact componentwise.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple
from urllib.parse import parse_qsl

import numpy as np
from pydantic import ValidationError

from dtorus.expr import Expression, ExpressionError, constant_value, parse
from dtorus.schema import PhaseMode, SystemConfig

logger = logging.getLogger("dtorus.system")

ExprMatrix = Tuple[Tuple[Expression, ...], ...]

CATALOG_NAMES = ("paper-2d", "paper-l2")

PROJECTOR_SAMPLES = 100
PROJECTOR_SEED = 0
PROJECTOR_IDEMPOTENCY_TOL = 1e-12


class ConfigError(ValueError):
    pass


class CatalogError(ValueError):
    pass


@dataclass(frozen=True)
class _CompiledMatrix:
    """Constant entries pre-evaluated; only phase-dependent cells are re-evaluated."""

    base: np.ndarray
    cells: Tuple[Tuple[int, int, Expression], ...]

    def at(self, phi: Sequence[Any]) -> np.ndarray:
        out = self.base.copy()
        for i, j, e in self.cells:
            out[i, j] = e.evaluate(phi)
        return out

    def grid(self, phis: np.ndarray) -> np.ndarray:
        """phis of shape (m, k) -> (k, rows, cols)."""
        k = phis.shape[1]
        out = np.broadcast_to(self.base, (k,) + self.base.shape).copy()
        for i, j, e in self.cells:
            out[:, i, j] = e.evaluate(list(phis))
        return out


def _compile(rows: Sequence[Sequence[Expression]]) -> _CompiledMatrix:
    base = np.zeros((len(rows), len(rows[0]) if rows else 0))
    cells = []
    for i, row in enumerate(rows):
        for j, e in enumerate(row):
            value = constant_value(e)
            if value is None:
                cells.append((i, j, e))
            else:
                base[i, j] = value
    return _CompiledMatrix(base, tuple(cells))


@dataclass(frozen=True)
class SystemDefinition:
    m: int
    n: int
    a: Tuple[Expression, ...]
    P: ExprMatrix
    f: Tuple[Expression, ...]
    phase_mode: PhaseMode = "line"
    name: str = "custom"

    def __post_init__(self) -> None:
        if self.m < 1 or self.n < 1:
            raise ConfigError(f"m and n must be >= 1 (got m={self.m}, n={self.n})")
        if len(self.a) != self.m:
            raise ConfigError(f"dimension mismatch: a has {len(self.a)} entries, m={self.m}")
        if len(self.f) != self.n:
            raise ConfigError(f"dimension mismatch: f has {len(self.f)} entries, n={self.n}")
        if len(self.P) != self.n or any(len(row) != self.n for row in self.P):
            raise ConfigError(f"dimension mismatch: P must be {self.n}x{self.n}")
        for label, e in self._labelled():
            _check_phase_refs(label, e, self.m)

    def _labelled(self):
        for i, e in enumerate(self.a):
            yield f"a[{i}]", e
        for i, row in enumerate(self.P):
            for j, e in enumerate(row):
                yield f"P[{i}][{j}]", e
        for i, e in enumerate(self.f):
            yield f"f[{i}]", e

    @cached_property
    def _a(self) -> _CompiledMatrix:
        return _compile([[e] for e in self.a])

    @cached_property
    def _P(self) -> _CompiledMatrix:
        return _compile(self.P)

    @cached_property
    def _f(self) -> _CompiledMatrix:
        return _compile([[e] for e in self.f])

    def angular_velocity(self, phi: Sequence[Any]) -> np.ndarray:
        return self._a.at(phi)[:, 0]

    def matrix(self, phi: Sequence[Any]) -> np.ndarray:
        return self._P.at(phi)

    def forcing(self, phi: Sequence[Any]) -> np.ndarray:
        return self._f.at(phi)[:, 0]

    def forcing_grid(self, phis: np.ndarray) -> np.ndarray:
        """f along a batch of phases, phis shape (m, k) -> (k, n)."""
        return self._f.grid(np.atleast_2d(phis))[:, :, 0]

    def matrix_grid(self, phis: np.ndarray) -> np.ndarray:
        return self._P.grid(np.atleast_2d(phis))

    def is_diagonal(self) -> bool:
        for i, row in enumerate(self.P):
            for j, e in enumerate(row):
                if i != j and constant_value(e) != 0.0:
                    return False
        return True

    def wrap(self, phi: np.ndarray) -> np.ndarray:
        """Reported phase: mod 2pi in periodic mode, unchanged on the line."""
        phi = np.asarray(phi, dtype=float)
        if self.phase_mode == "periodic":
            return np.mod(phi, 2.0 * math.pi)
        return phi

    def with_forcing(self, overrides: Mapping[int, str]) -> "SystemDefinition":
        """Replace f components (0-based index -> expression text)."""
        f = list(self.f)
        for i, src in overrides.items():
            if not 0 <= i < self.n:
                raise ConfigError(f"forcing override index {i} outside 0..{self.n - 1}")
            f[i] = _parse_field(f"f[{i}]", src)
        return replace(self, f=tuple(f))


def _check_phase_refs(label: str, e: Expression, m: int) -> None:
    if e.max_index > m:
        raise ConfigError(f"{label}: '{e.source}' uses phi{e.max_index} but m={m}")
    if e.uses_alias and m != 1:
        raise ConfigError(f"{label}: 'phi' is only allowed when m=1 (use phi1..phi{m})")


def _parse_field(label: str, src: str) -> Expression:
    try:
        return parse(src)
    except ExpressionError as e:
        raise ConfigError(f"{label}: {e}") from e


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    system: SystemDefinition
    known_projectors: Optional[Tuple[ExprMatrix, ExprMatrix]] = None
    known_torus: Optional[Tuple[Expression, ...]] = None
    params: Dict[str, Any] = field(default_factory=dict)

    def projectors_at(self, phi: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
        if self.known_projectors is None:
            raise CatalogError(f"'{self.name}' has no known projectors")
        plus, minus = self.known_projectors
        return _compile(plus).at(phi), _compile(minus).at(phi)

    def torus_at(self, phi: Sequence[float]) -> np.ndarray:
        if self.known_torus is None:
            raise CatalogError(f"'{self.name}' has no known torus")
        return _compile([[e] for e in self.known_torus]).at(phi)[:, 0]


# ---------- Config files ----------

def _format_validation_error(err: ValidationError) -> str:
    parts: List[str] = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e.get("loc", ()))
        if e.get("type") == "missing":
            parts.append(f"missing field {loc}")
        else:
            msg = str(e.get("msg", "")).removeprefix("Value error, ")
            parts.append(f"{loc}: {msg}" if loc else msg)
    return "; ".join(parts)


def system_from_config(cfg: SystemConfig) -> CatalogEntry:
    a = tuple(_parse_field(f"a[{i}]", s) for i, s in enumerate(cfg.a))
    P = tuple(
        tuple(_parse_field(f"P[{i}][{j}]", s) for j, s in enumerate(row))
        for i, row in enumerate(cfg.P)
    )
    f = tuple(_parse_field(f"f[{i}]", s) for i, s in enumerate(cfg.f))
    system = SystemDefinition(cfg.m, cfg.n, a, P, f, cfg.phase_mode, cfg.name)

    projectors = None
    if cfg.projectors is not None:
        projectors = (
            _parse_matrix_field("projectors.plus", cfg.projectors.plus, cfg.m),
            _parse_matrix_field("projectors.minus", cfg.projectors.minus, cfg.m),
        )
    torus = None
    if cfg.torus is not None:
        torus = tuple(_parse_field(f"torus[{i}]", s) for i, s in enumerate(cfg.torus))
        for i, e in enumerate(torus):
            _check_phase_refs(f"torus[{i}]", e, cfg.m)
    entry = CatalogEntry(cfg.name, system, projectors, torus)
    check_known_projectors(entry)
    return entry


def _sample_phases(system: SystemDefinition) -> np.ndarray:
    rng = np.random.default_rng(PROJECTOR_SEED)
    if system.phase_mode == "periodic":
        return rng.uniform(0.0, 2.0 * math.pi, size=(system.m, PROJECTOR_SAMPLES))
    return rng.uniform(-10.0, 10.0, size=(system.m, PROJECTOR_SAMPLES))


def check_known_projectors(entry: CatalogEntry) -> None:
    """Each known projector must satisfy ||C^2 - C|| <= 1e-12 at seeded sample phases."""
    if entry.known_projectors is None:
        return
    phis = _sample_phases(entry.system)
    for side, rows in zip(("plus", "minus"), entry.known_projectors):
        C = _compile(rows).grid(phis)
        if not np.all(np.isfinite(C)):
            raise ConfigError(f"projectors.{side}: non-finite entries at sampled phases")
        defect = float(np.max(np.sum(np.abs(C @ C - C), axis=-1)))
        if defect > PROJECTOR_IDEMPOTENCY_TOL:
            raise ConfigError(f"projectors.{side} is not idempotent: ||C^2 - C|| = {defect:.3e}")


def _parse_matrix_field(label: str, rows: List[List[str]], m: int) -> ExprMatrix:
    out = []
    for i, row in enumerate(rows):
        cells = []
        for j, s in enumerate(row):
            e = _parse_field(f"{label}[{i}][{j}]", s)
            _check_phase_refs(f"{label}[{i}][{j}]", e, m)
            cells.append(e)
        out.append(tuple(cells))
    return tuple(out)


def load_entry(path: Path) -> CatalogEntry:
    """Load a system file including its optional projectors and closed-form torus."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"system file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    try:
        cfg = SystemConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: {_format_validation_error(e)}") from e
    entry = system_from_config(cfg)
    logger.info("load_config path=%s name=%s m=%d n=%d", path, cfg.name, cfg.m, cfg.n)
    return entry


def load_config(path: Path) -> SystemDefinition:
    return load_entry(path).system


# ---------- Built-in catalog ----------

def _diag(entries: Sequence[str]) -> ExprMatrix:
    n = len(entries)
    return tuple(
        tuple(parse(entries[i]) if i == j else parse("0") for j in range(n))
        for i in range(n)
    )


def _paper_2d() -> CatalogEntry:
    system = SystemDefinition(
        m=1,
        n=2,
        a=(parse("1"),),
        P=_diag(["tanh(phi)", "-tanh(phi)"]),
        f=(parse("sinh(phi)/cosh(phi)^3"), parse("sinh(phi)/cosh(phi)^4")),
        phase_mode="line",
        name="paper-2d",
    )
    return CatalogEntry(
        name="paper-2d",
        system=system,
        known_projectors=(_diag(["0", "1"]), _diag(["1", "0"])),
        known_torus=(parse("-1/(3*cosh(phi)^2)"), parse("-1/(2*cosh(phi)^3)")),
    )


def _paper_l2(N: int) -> CatalogEntry:
    """
    Truncation of the countable diagonal system
        P = diag(th, th, -th, -th, ...),  f_i = sh / ch^(i+2)
    Closed-form torus components:
        i <= 2: -1 / ((i+2) ch^(i+1))      (variant one)
        i >= 3: -1 / (i ch^(i+1))          (variant two)
    """
    P = ["tanh(phi)" if i <= 2 else "-tanh(phi)" for i in range(1, N + 1)]
    f = tuple(parse(f"sinh(phi)/cosh(phi)^{i + 2}") for i in range(1, N + 1))
    torus = tuple(
        parse(f"-1/({i + 2}*cosh(phi)^{i + 1})" if i <= 2 else f"-1/({i}*cosh(phi)^{i + 1})")
        for i in range(1, N + 1)
    )
    system = SystemDefinition(
        m=1, n=N, a=(parse("1"),), P=_diag(P), f=f, phase_mode="line", name=f"paper-l2[N={N}]"
    )
    plus = _diag(["0" if i <= 2 else "1" for i in range(1, N + 1)])
    minus = _diag(["1" if i <= 2 else "0" for i in range(1, N + 1)])
    return CatalogEntry("paper-l2", system, (plus, minus), torus, {"N": N})


def catalog(name: str, params: Optional[Mapping[str, Any]] = None) -> CatalogEntry:
    params = dict(params or {})
    if name == "paper-2d":
        return _paper_2d()
    if name == "paper-l2":
        if "N" not in params:
            raise CatalogError("paper-l2 needs the truncation dimension N (N >= 3)")
        try:
            N = int(params["N"])
        except (TypeError, ValueError) as e:
            raise CatalogError(f"paper-l2: N must be an integer, got {params['N']!r}") from e
        if N < 3:
            raise CatalogError(f"paper-l2: N must be >= 3, got {N}")
        return _paper_l2(N)
    raise CatalogError(f"unknown catalog name '{name}' (known: {', '.join(CATALOG_NAMES)})")


def resolve_source(text: str) -> CatalogEntry:
    """
    --system value: "catalog:name?key=value&..." or a path to a JSON file.
    """
    if text.startswith("catalog:"):
        ref = text[len("catalog:"):]
        name, _, query = ref.partition("?")
        params = dict(parse_qsl(query, keep_blank_values=True))
        return catalog(name, params)
    return load_entry(Path(text))
