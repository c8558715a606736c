from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.linalg import expm

from dtorus.flow import (
    MAX_SPAN,
    IntegrationError,
    SpanError,
    Tolerances,
    build_oracle,
    cocycle_check,
    flow,
    inf_norm,
    omega,
)


def test_affine_flow(make_entry):
    system = make_entry(["1"], [["-1"]], ["0"]).system
    traj = flow(system, [0.5], (0.0, 2.0))
    assert traj.at(2.0)[0] == pytest.approx(2.5, abs=1e-12)
    np.testing.assert_allclose(traj.at(np.array([0.25, 1.5]))[0], [0.75, 2.0], atol=1e-12)


def test_fixed_point(make_entry):
    system = make_entry(["0"], [["-1"]], ["0"]).system
    traj = flow(system, [1.7], (-3.0, 3.0))
    np.testing.assert_array_equal(traj.at(np.array([-3.0, -0.4, 2.2]))[0], [1.7, 1.7, 1.7])


def test_exponential_flow(make_entry):
    system = make_entry(["phi"], [["-1"]], ["0"]).system
    traj = flow(system, [1.0], (0.0, 1.0))
    assert traj.at(1.0)[0] == pytest.approx(math.e, abs=1e-8)


def test_initial_phase_is_exact(make_entry):
    system = make_entry(["phi"], [["-1"]], ["0"]).system
    traj = flow(system, [0.3], (-1.0, 1.0))
    assert traj.at(0.0)[0] == 0.3


def test_group_property(make_entry):
    system = make_entry(["1 + 0.5*sin(phi)"], [["-1"]], ["0"]).system
    traj = flow(system, [0.2], (-4.0, 4.0))
    for s, tau in [(0.7, 1.1), (-1.5, 2.0), (2.3, -3.1)]:
        shifted = flow(system, traj.at(s), (min(tau, 0.0), max(tau, 0.0)))
        assert inf_norm(shifted.at(tau) - traj.at(tau + s)) <= 1e-8


def test_span_must_be_ordered(paper2d):
    with pytest.raises(ValueError, match="t0 <= t1"):
        flow(paper2d.system, [0.0], (1.0, -1.0))


def test_blow_up_reports_failure_time(make_entry):
    system = make_entry(["phi^2"], [["-1"]], ["0"]).system
    with pytest.raises(IntegrationError) as info:
        flow(system, [1.0], (0.0, 2.0))
    assert info.value.t_fail is not None
    assert 0.5 < info.value.t_fail < 1.1


def test_span_limit(oracle0):
    with pytest.raises(SpanError):
        oracle0.forward(MAX_SPAN * 2)


def test_closed_form_matriciant(oracle0):
    np.testing.assert_allclose(
        omega(oracle0, 1.0, 0.0), np.diag([math.cosh(1.0), 1.0 / math.cosh(1.0)]), atol=1e-7
    )
    np.testing.assert_allclose(np.diag(omega(oracle0, 1.0, 0.0)), [1.54308, 0.64805], atol=1e-5)


def test_closed_form_against_grid(oracle0):
    ts = np.linspace(-6, 6, 25)
    F = oracle0.forward(ts)
    B = oracle0.backward(ts)
    np.testing.assert_allclose(F[:, 0, 0], np.cosh(ts), rtol=1e-8)
    np.testing.assert_allclose(F[:, 1, 1], 1 / np.cosh(ts), rtol=1e-8)
    np.testing.assert_allclose(B[:, 0, 0], 1 / np.cosh(ts), rtol=1e-8)
    np.testing.assert_allclose(B[:, 1, 1], np.cosh(ts), rtol=1e-8)


def test_identity_on_the_diagonal(oracle0):
    for t in (-3.0, 0.0, 2.5):
        np.testing.assert_array_equal(omega(oracle0, t, t), np.eye(2))
    # checkpoint states are returned as stored
    np.testing.assert_array_equal(oracle0.forward(0.0), np.eye(2))
    np.testing.assert_array_equal(oracle0.backward(0.0), np.eye(2))
    np.testing.assert_array_equal(oracle0.forward(3.0), oracle0.forward(np.array([3.0]))[0])


def test_two_step_cocycle(oracle0):
    np.testing.assert_allclose(omega(oracle0, 2.0, 1.0) @ omega(oracle0, 1.0, 0.0), omega(oracle0, 2.0, 0.0), atol=1e-7)


def test_forward_backward_consistency(oracle0):
    ts = np.linspace(-10, 10, 41)
    products = oracle0.forward(ts) @ oracle0.backward(ts)
    assert np.max(inf_norm(products - np.eye(2))) <= 1e-6


def test_cocycle_check_random_triples(oracle0, rng):
    samples = [tuple(rng.uniform(-5, 5, 3)) for _ in range(50)]
    assert cocycle_check(oracle0, samples, relative=True) <= 1e-6


def test_cocycle_check_absolute_defect(oracle0, rng):
    samples = [tuple(rng.uniform(-2, 2, 3)) for _ in range(20)]
    absolute = cocycle_check(oracle0, samples)
    assert absolute <= 1e-5
    assert absolute >= cocycle_check(oracle0, samples, relative=True)


def test_cocycle_check_constant_coefficients(make_entry, rng):
    entry = make_entry(["1"], [["-1", "0"], ["0", "0.5"]], ["0", "0"])
    oracle = build_oracle(entry.system, [0.0], (-5.0, 5.0))
    samples = [tuple(rng.uniform(-2, 2, 3)) for _ in range(10)]
    assert cocycle_check(oracle, samples) <= 1e-6


def test_cocycle_check_trivial_sample(oracle0):
    assert cocycle_check(oracle0, [(0.0, 0.0, 0.0)]) <= 1e-14


def test_constant_coefficients_match_matrix_exponential(make_entry):
    entry = make_entry(["1"], [["-1", "0"], ["0", "0.5"]], ["0", "0"])
    oracle = build_oracle(entry.system, [0.0], (-3.0, 3.0))
    A = np.diag([-1.0, 0.5])
    for t, tau in [(2.0, -1.0), (-2.5, 0.5), (1.3, 1.0)]:
        np.testing.assert_allclose(oracle.omega(t, tau), expm((t - tau) * A), atol=1e-7)


def test_non_diagonal_constant_coefficients(make_entry):
    entry = make_entry(["1"], [["-1", "2"], ["0", "0.5"]], ["0", "0"])
    oracle = build_oracle(entry.system, [0.0], (-2.0, 2.0))
    A = np.array([[-1.0, 2.0], [0.0, 0.5]])
    np.testing.assert_allclose(oracle.omega(1.5, -0.5), expm(2.0 * A), rtol=1e-8, atol=1e-8)


def test_tighter_tolerance_reduces_cocycle_defect(paper2d, rng):
    samples = [tuple(rng.uniform(-4, 4, 3)) for _ in range(8)]
    loose = build_oracle(paper2d.system, [0.3], (-4.0, 4.0), Tolerances(1e-5, 1e-5))
    tight = build_oracle(paper2d.system, [0.3], (-4.0, 4.0), Tolerances(1e-9, 1e-9))
    assert cocycle_check(tight, samples) <= cocycle_check(loose, samples)


def test_span_grows_lazily(paper2d):
    oracle = build_oracle(paper2d.system, [0.0], (-1.0, 1.0))
    assert oracle.span == (-1.0, 1.0)
    oracle.forward(3.5)
    assert oracle.span[1] >= 3.5
    assert len(oracle.checkpoints) == len(set(t for t, _ in oracle.checkpoints))


def test_tolerances_must_be_positive():
    with pytest.raises(ValueError):
        Tolerances(0.0, 1e-10)
