import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from isospec.errors import EvaluationError
from isospec.geometry import (PhasePoint, classify_morse_bott, flow, flow_w, hopf_pullback,
                              sphere_grad, sphere_grad_hess, tangent_frame, xray_average)
from isospec.symbols import HomogeneousTerm, linear_form, p2, quadratic_form, radial_power

from conftest import unit_points

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def vec(n):
    return st.lists(finite, min_size=n, max_size=n).map(np.array)


def test_quarter_rotation():
    q = flow(PhasePoint([1.0, 0.0], [0.0, 0.0]), math.pi / 2)
    np.testing.assert_allclose(q.x, [0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(q.xi, [-1.0, 0.0], atol=1e-15)


def test_half_period_is_antipodal():
    q = flow(PhasePoint([1.0, 0.0], [0.0, 1.0]), math.pi)
    np.testing.assert_allclose(q.w, [-1.0, 0.0, 0.0, -1.0], atol=1e-15)


@given(vec(4))
def test_full_period_returns(w):
    np.testing.assert_allclose(flow_w(w, 2 * math.pi), w, atol=1e-13 * (1 + np.abs(w).max()))


@given(vec(6), st.floats(-4 * math.pi, 4 * math.pi))
def test_flow_preserves_p2(w, t):
    assert abs(p2(flow_w(w, t)) - p2(w)) <= 1e-12 * max(p2(w), 1e-300)


def test_phase_point_validation():
    with pytest.raises(ValueError):
        PhasePoint([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        PhasePoint([np.nan], [0.0])


def test_xray_of_radial_function():
    f = radial_power(math.sqrt(2.0), 1)  # sqrt(2 p2) = |w|
    w = unit_points(np.random.default_rng(0), 5, 4)
    np.testing.assert_allclose(xray_average(f, w), 2 * math.pi, rtol=1e-13)


def test_xray_of_coordinate_vanishes():
    f = linear_form(np.array([1.0, 0.0, 0.0, 0.0]))
    w = unit_points(np.random.default_rng(1), 5, 4)
    np.testing.assert_allclose(xray_average(f, w), 0.0, atol=1e-13)


def test_xray_of_square():
    f = quadratic_form(np.diag([1.0, 0.0, 0.0, 0.0]))
    assert xray_average(f, PhasePoint([1.0, 0.0], [0.0, 0.0])) == pytest.approx(math.pi, 1e-13)


def test_xray_rejects_nonfinite():
    with pytest.raises(EvaluationError):
        xray_average(lambda w: np.full(w.shape[:-1], np.nan), PhasePoint([1.0], [0.0]))


@given(vec(4), st.floats(-10, 10))
def test_xray_flow_invariance(w, s):
    f = quadratic_form(np.array([[1.0, 0.3, 0, 0.2], [0.3, -1, 0.5, 0], [0, 0.5, 2, 0],
                                 [0.2, 0, 0, 0.1]]))
    a = xray_average(f, w)
    b = xray_average(f, flow_w(w, s))
    assert abs(a - b) <= 1e-10 * (1 + abs(a))


@given(vec(4), st.floats(-5, 5), st.floats(-5, 5))
def test_xray_linearity(w, a, b):
    f = linear_form(np.array([1.0, 2.0, -1.0, 0.5]))
    g = quadratic_form(np.diag([1.0, 2.0, 3.0, 4.0]))
    lhs = xray_average(lambda P: a * f(P) + b * g(P), w)
    rhs = a * xray_average(f, w) + b * xray_average(g, w)
    assert abs(lhs - rhs) <= 1e-10 * (1 + abs(lhs))


def test_hopf_pullback_value():
    f = hopf_pullback([0.3, 0.7])
    assert f(np.array([1.0, 0.0, 0.0, 0.0])) == pytest.approx(0.15 / math.sqrt(0.5), 1e-14)


def test_hopf_pullback_equal_entries_is_radial():
    w = unit_points(np.random.default_rng(2), 10, 6) * 3.0
    np.testing.assert_allclose(hopf_pullback([0.4] * 3)(w), 0.4 * np.sqrt(p2(w)), rtol=1e-14)


@given(st.lists(st.floats(-0.9, 0.9), min_size=1, max_size=3), st.data())
def test_hopf_pullback_is_flow_invariant(c, data):
    d = len(c)
    w = data.draw(vec(2 * d))
    if np.linalg.norm(w) < 1e-3:
        return
    f = hopf_pullback(c)
    assert abs(xray_average(f, w) - 2 * math.pi * f(w)) <= 1e-10 * (1 + abs(f(w)))


def test_tangent_frame_orthonormal():
    w = unit_points(np.random.default_rng(3), 1, 6)[0]
    E = tangent_frame(w, drop_flow=True)
    assert E.shape == (4, 6)
    np.testing.assert_allclose(E @ E.T, np.eye(4), atol=1e-13)
    np.testing.assert_allclose(E @ w, 0.0, atol=1e-13)


def test_sphere_gradient_of_radial_is_zero():
    f = radial_power(math.sqrt(2.0), 1)
    for w in unit_points(np.random.default_rng(4), 5, 4):
        assert np.linalg.norm(sphere_grad(f, w)) < 1e-9


def test_sphere_gradient_at_pole_of_linear():
    f = linear_form(np.array([1.0, 0.0, 0.0, 0.0]))
    assert np.linalg.norm(sphere_grad(f, np.array([1.0, 0.0, 0.0, 0.0]))) < 1e-9


def test_hopf_critical_circle_hessian_rank():
    F = lambda P: xray_average(hopf_pullback([1.0, 0.0]), P)  # noqa: E731
    w = np.array([1.0, 0.0, 0.0, 0.0])
    g, H, _ = sphere_grad_hess(F, w, frame=tangent_frame(w, drop_flow=True))
    assert np.linalg.norm(g) < 1e-8
    ev = np.abs(np.linalg.eigvalsh(H))
    assert int(np.sum(ev > 1e-4 * ev.max())) == 2


def test_classifier_flat_for_radial():
    rep = classify_morse_bott(radial_power(math.sqrt(2.0), 1), 2)
    assert rep.flat_set_detected and not rep.is_morse_bott


def test_classifier_two_circles_d2():
    rep = classify_morse_bott(hopf_pullback([0.3, 0.7]), 2)
    assert rep.is_morse_bott and not rep.flat_set_detected
    assert len(rep.manifolds) == 2
    assert rep.k_min == 2
    assert all(m.dimension == 1 for m in rep.manifolds)


def test_classifier_circles_are_hopf_fibres():
    rep = classify_morse_bott(hopf_pullback([1.0, 0.0]), 2)
    assert len(rep.manifolds) == 2
    for m in rep.manifolds:
        for w in m.representative_points:
            z1, z2 = math.hypot(w[0], w[2]), math.hypot(w[1], w[3])
            assert min(z1, z2) < 1e-6


def test_classifier_distinct_d3():
    rep = classify_morse_bott(hopf_pullback([0.2, 0.5, 0.8]), 3)
    assert rep.is_morse_bott
    assert len(rep.manifolds) == 3
    assert rep.k_min == 4


def test_classifier_repeated_entry_d3():
    rep = classify_morse_bott(hopf_pullback([0.3, 0.3, 0.7]), 3)
    assert rep.is_morse_bott
    dims = sorted(m.dimension for m in rep.manifolds)
    assert dims == [1, 3]
    assert rep.k_min == 2


def test_classifier_seeded_reproducible():
    a = classify_morse_bott(hopf_pullback([0.3, 0.7]), 2, samples=16, seed=5)
    b = classify_morse_bott(hopf_pullback([0.3, 0.7]), 2, samples=16, seed=5)
    assert [m.value for m in a.manifolds] == [m.value for m in b.manifolds]


def test_classifier_worker_count_does_not_change_result():
    a = classify_morse_bott(hopf_pullback([0.3, 0.7]), 2, samples=16)
    b = classify_morse_bott(hopf_pullback([0.3, 0.7]), 2, samples=16, workers=3)
    assert [(m.value, m.hessian_rank) for m in a.manifolds] == \
        [(m.value, m.hessian_rank) for m in b.manifolds]


def test_homogeneous_term_is_a_callable_input():
    assert isinstance(hopf_pullback([0.1, 0.2]), HomogeneousTerm)
