from __future__ import annotations

import numpy as np
import pytest

from dtorus.critical import (
    CriticalError,
    build_D,
    degeneracy_defects,
    degeneracy_rows,
    identity_defects,
    penrose_defects,
    pinv,
    regime,
    to_payload,
    transport_critical,
)
from dtorus.flow import inf_norm

C_PLUS = np.diag([0.0, 1.0])
C_MINUS = np.diag([1.0, 0.0])
SKEW = np.array([[0.5, 0.5], [0.5, 0.5]])


def test_build_D_paper_2d_is_zero():
    np.testing.assert_array_equal(build_D(C_PLUS, C_MINUS), np.zeros((2, 2)))


def test_build_D_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        build_D(np.eye(2), np.eye(3))
    with pytest.raises(ValueError):
        build_D(np.zeros((2, 3)), np.zeros((2, 3)))


def test_pinv_of_zero():
    cd = pinv(np.zeros((2, 2)))
    assert cd.rank == 0
    np.testing.assert_array_equal(cd.D_plus, np.zeros((2, 2)))
    np.testing.assert_array_equal(cd.P_ND, np.eye(2))
    np.testing.assert_array_equal(cd.P_NDstar, np.eye(2))
    assert regime(cd) == "critical"


def test_pinv_of_rank_one_diagonal():
    cd = pinv(np.diag([2.0, 0.0]))
    assert cd.rank == 1
    np.testing.assert_allclose(cd.D_plus, np.diag([0.5, 0.0]), atol=1e-15)
    np.testing.assert_allclose(cd.P_ND, np.diag([0.0, 1.0]), atol=1e-15)
    np.testing.assert_allclose(cd.P_NDstar, np.diag([0.0, 1.0]), atol=1e-15)


def test_invertible_D_is_regular():
    cd = pinv(np.array([[2.0, 1.0], [0.0, 3.0]]))
    assert regime(cd) == "regular"
    np.testing.assert_allclose(cd.D_plus, np.linalg.inv(cd.D), atol=1e-14)
    assert inf_norm(cd.P_ND) <= 1e-14


def test_rank_tolerance_is_relative():
    D = np.diag([1.0, 1e-12])
    assert pinv(D).rank == 1
    assert pinv(D, rtol=1e-13).rank == 2
    assert pinv(1e6 * D).rank == 1


@pytest.mark.parametrize("rtol", [0.0, 1.0, -1e-3])
def test_rtol_range(rtol):
    with pytest.raises(ValueError):
        pinv(np.eye(2), rtol=rtol)


def test_non_finite_D_is_rejected():
    with pytest.raises(CriticalError, match="non-finite"):
        pinv(np.array([[1.0, np.nan], [0.0, 1.0]]))


def test_penrose_conditions_on_random_matrices(rng):
    for _ in range(200):
        n = int(rng.integers(2, 7))
        r = int(rng.integers(0, n + 1))
        D = rng.normal(size=(n, r)) @ rng.normal(size=(r, n))
        cd = pinv(D)
        assert cd.rank == r
        scale = (1.0 + inf_norm(D)) * (1.0 + inf_norm(cd.D_plus)) ** 2
        defects = penrose_defects(cd)
        assert set(defects) == {"DGD-D", "GDG-G", "(DG)^T-DG", "(GD)^T-GD"}
        assert max(defects.values()) <= 1e-11 * scale
        for P in (cd.P_ND, cd.P_NDstar):
            assert inf_norm(P @ P - P) <= 1e-11 * scale
            assert inf_norm(P - P.T) <= 1e-11 * scale
        np.testing.assert_allclose(cd.D_plus, np.linalg.pinv(D, 1e-10), atol=1e-9 * scale)


def test_identities_on_random_projector_pairs(rng):
    for _ in range(100):
        n = int(rng.integers(2, 7))
        V = np.linalg.qr(rng.normal(size=(n, n)))[0] @ np.diag(rng.uniform(1, 2, n))
        W = np.linalg.qr(rng.normal(size=(n, n)))[0] @ np.diag(rng.uniform(1, 2, n))
        Cplus = V @ np.diag(rng.integers(0, 2, n).astype(float)) @ np.linalg.inv(V)
        Cminus = W @ np.diag(rng.integers(0, 2, n).astype(float)) @ np.linalg.inv(W)
        cd = pinv(build_D(Cplus, Cminus))
        bound = 1e-10 * (1.0 + inf_norm(cd.D_plus))
        for name, value in identity_defects(Cplus, Cminus, cd).items():
            assert value <= bound, name


def test_transport_of_zero_D(oracle0):
    cd = pinv(build_D(C_PLUS, C_MINUS))
    moved = transport_critical(cd, oracle0, 2.0)
    np.testing.assert_array_equal(moved.D, np.zeros((2, 2)))
    np.testing.assert_array_equal(moved.D_plus, np.zeros((2, 2)))
    np.testing.assert_allclose(moved.P_ND, np.eye(2), atol=1e-8)
    np.testing.assert_allclose(moved.P_NDstar, np.eye(2), atol=1e-8)


def test_transport_at_zero_is_identity(oracle0):
    cd = pinv(build_D(SKEW, np.zeros((2, 2))))
    moved = transport_critical(cd, oracle0, 0.0)
    np.testing.assert_array_equal(moved.D, cd.D)
    np.testing.assert_array_equal(moved.D_plus, cd.D_plus)
    assert not moved.moore_penrose


def test_transport_of_diagonal_D(oracle0):
    cd = pinv(np.diag([1.0, 0.0]))
    moved = transport_critical(cd, oracle0, 1.0)
    np.testing.assert_allclose(moved.D, np.diag([1.0, 0.0]), atol=1e-8)
    np.testing.assert_allclose(moved.D_plus, np.diag([1.0, 0.0]), atol=1e-8)
    assert moved.rank == 1


def test_transported_inverse_is_generalized(oracle0):
    cd = pinv(build_D(SKEW, np.zeros((2, 2))))
    assert cd.rank == 1
    eye = np.eye(2)
    for t in np.linspace(-2, 2, 10):
        moved = transport_critical(cd, oracle0, float(t))
        defects = penrose_defects(moved)
        assert set(defects) == {"DGD-D", "GDG-G"}
        assert max(defects.values()) <= 1e-6
        np.testing.assert_allclose(moved.P_ND, eye - moved.D_plus @ moved.D, atol=1e-6)
        np.testing.assert_allclose(moved.P_NDstar, eye - moved.D @ moved.D_plus, atol=1e-6)


def test_degeneracy_defects_paper_2d():
    cd = pinv(build_D(C_PLUS, C_MINUS))
    assert degeneracy_defects(C_PLUS, C_MINUS, cd) == {"one": 1.0, "two": 1.0}
    np.testing.assert_array_equal(degeneracy_rows(C_PLUS, C_MINUS, cd, "one"), [0.0, 1.0])
    np.testing.assert_array_equal(degeneracy_rows(C_PLUS, C_MINUS, cd, "two"), [1.0, 0.0])
    with pytest.raises(ValueError):
        degeneracy_rows(C_PLUS, C_MINUS, cd, "three")


def test_degeneracy_vanishes_when_D_is_invertible():
    cd = pinv(build_D(np.eye(2), np.eye(2)))
    assert regime(cd) == "regular"
    assert max(degeneracy_defects(np.eye(2), np.eye(2), cd).values()) <= 1e-14


def test_payload():
    cd = pinv(build_D(C_PLUS, C_MINUS))
    payload = to_payload(cd, C_PLUS, C_MINUS)
    assert payload.rank == 0
    assert payload.regime == "critical"
    assert payload.D == [[0.0, 0.0], [0.0, 0.0]]
    assert payload.moore_penrose
    assert max(payload.identity_defects.values()) == 0.0
