from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impulsive_lorenz import flow_core as fc
from impulsive_lorenz.errors import NoReturn

CHART = fc.classical_chart()
HP = fc.IntegratorConfig.high_precision()


def attractor_point(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return fc.integrate(np.array([1.0, 1.0, 20.0]) + rng.normal(size=3), 5.0)


def test_zero_time_is_identity():
    p = np.array([1.0, -2.0, 20.0])
    np.testing.assert_array_equal(fc.integrate(p, 0), p)


def test_origin_is_fixed():
    np.testing.assert_array_equal(fc.integrate(np.zeros(3), 10.0), np.zeros(3))


def test_equilibria_are_fixed():
    for q in fc.CLASSICAL.equilibria():
        np.testing.assert_allclose(fc.integrate(q, 5.0), q, atol=1e-9)


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.floats(0, 2), st.floats(0, 2))
def test_short_semigroup_dopri(seed, s, t):
    p = attractor_point(seed)
    a = fc.integrate(p, s + t)
    b = fc.integrate(fc.integrate(p, s), t)
    assert np.max(np.abs(a - b)) < 1e-7


@settings(max_examples=3)
@given(st.integers(0, 10_000), st.floats(0, 20), st.floats(0, 20))
def test_long_semigroup_taylor_dd(seed, s, t):
    p = attractor_point(seed)
    a = fc.integrate(p, Fraction(s) + Fraction(t), HP)
    b = fc.integrate(fc.integrate(p, s, HP), t, HP)
    assert fc.point_distance(a, b) < 1e-10 * (1 + np.linalg.norm(a.value))


def test_taylor_and_dopri_agree():
    p = attractor_point(1)
    np.testing.assert_allclose(fc.integrate(p, 3.0, HP).value, fc.integrate(p, 3.0), atol=1e-8)


def test_backward_undoes_forward():
    p = attractor_point(2)
    q = fc.integrate(fc.integrate(p, 0.5), 0.5, direction=-1)
    np.testing.assert_allclose(q, p, atol=1e-9)


@settings(max_examples=20)
@given(st.floats(-0.95, 0.95).filter(lambda u: abs(u) > 0.05), st.floats(-0.9, 0.9))
def test_return_lands_on_plane_in_chart(u, v):
    hit = fc.first_hit(CHART.to_point([u, v]), CHART)
    p = fc.as_double(hit.point)
    assert abs(p[2] - CHART.plane) < 1e-9
    assert hit.time > 0
    assert CHART.contains(hit.uv, tol=1e-9)
    # crossing direction of the chart
    assert np.sign(fc.lorenz_rhs(p)[2]) == CHART.direction


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_chart_roundtrip(u, v):
    np.testing.assert_allclose(CHART.to_uv(CHART.to_point([u, v])), [u, v], atol=1e-12)


def test_chart_serialization_roundtrip():
    assert fc.SectionChart.from_dict(CHART.to_dict()) == CHART


def test_point_on_singular_line_does_not_return():
    cfg = fc.IntegratorConfig(max_flight_time=3.0)
    with pytest.raises(NoReturn):
        fc.first_hit(CHART.to_point([0.0, 0.0]), CHART, cfg)


def test_singular_line_passes_through_center():
    assert abs(fc.singular_u(0.0, CHART)) < 1e-10
    assert abs(fc.singular_u(0.5, CHART)) < 1e-3


def test_variational_differential_matches_finite_differences():
    z = np.array([0.3, 0.2])
    dF = fc.variational_hit(CHART.to_point(z), CHART).section_differential(CHART)
    h = 1e-6
    fd = np.empty((2, 2))
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd[:, k] = (fc.return_map(z + e, CHART)[0] - fc.return_map(z - e, CHART)[0]) / (2 * h)
    np.testing.assert_allclose(dF, fd, rtol=1e-4, atol=1e-6)


def test_return_time_grows_logarithmically_near_singular_line():
    times = [fc.return_map([u, 0.0], CHART)[1] for u in (1e-2, 1e-4, 1e-6)]
    d1, d2 = times[1] - times[0], times[2] - times[1]
    assert d1 > 0 and d2 > 0
    assert d2 == pytest.approx(d1, rel=0.1)


def test_dense_arc_interpolates_endpoints():
    p = attractor_point(3)
    arc = fc.dense_arc(p, 1.0, CHART, stop_at_section=False)
    np.testing.assert_allclose(arc(np.array([0.0]))[0], p, atol=1e-12)
    np.testing.assert_allclose(arc(np.array([arc.duration]))[0], fc.integrate(p, arc.duration),
                               atol=1e-8)
    nodes, weights = arc.quadrature_nodes(0.01)
    assert weights.sum() == pytest.approx(arc.duration, rel=1e-12)
