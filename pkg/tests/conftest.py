from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
import pytest

from dtorus.dichotomy import ExactProjectors
from dtorus.flow import build_oracle
from dtorus.schema import SystemConfig
from dtorus.system import CatalogEntry, catalog, system_from_config
from dtorus.torus import TorusPipeline


@pytest.fixture(scope="session")
def paper2d() -> CatalogEntry:
    return catalog("paper-2d")


@pytest.fixture(scope="session")
def oracle0(paper2d):
    return build_oracle(paper2d.system, [0.0], (-40.0, 40.0))


@pytest.fixture(scope="session")
def pipeline2d(paper2d) -> TorusPipeline:
    return TorusPipeline(paper2d.system, ExactProjectors(paper2d))


@pytest.fixture(scope="session")
def green0(pipeline2d):
    return pipeline2d.operator([0.0])


@pytest.fixture(scope="session")
def green1(pipeline2d):
    return pipeline2d.operator([1.0])


@pytest.fixture(scope="session")
def make_entry() -> Callable[..., CatalogEntry]:
    """Build a CatalogEntry from plain lists, the way a system file would."""

    def build(
        a: Sequence,
        P: Sequence[Sequence],
        f: Sequence,
        plus: Optional[Sequence[Sequence]] = None,
        minus: Optional[Sequence[Sequence]] = None,
        torus: Optional[Sequence] = None,
        phase_mode: str = "line",
    ) -> CatalogEntry:
        raw = {"m": len(a), "n": len(f), "a": list(a), "P": [list(r) for r in P], "f": list(f), "phase_mode": phase_mode}
        if plus is not None:
            raw["projectors"] = {"plus": [list(r) for r in plus], "minus": [list(r) for r in minus]}
        if torus is not None:
            raw["torus"] = list(torus)
        return system_from_config(SystemConfig.model_validate(raw))

    return build


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)
