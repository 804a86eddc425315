from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from impulsive_lorenz import geometric as g
from impulsive_lorenz.errors import SingularInput

nonzero_u = st.floats(-1, 1).filter(lambda u: abs(u) > 1e-6)
coord = st.floats(-1, 1)


def test_f1d_closed_form():
    assert g.f1d(1 / 16) == pytest.approx(2 * 0.125 - 1)
    assert g.f1d(-1 / 16) == pytest.approx(1 - 2 * 0.125)
    assert g.f1d(1.0) == pytest.approx(1.0)


def test_singular_line_rejected():
    with pytest.raises(SingularInput):
        g.geo_F([0.0, 0.3])
    with pytest.raises(SingularInput):
        g.geo_R([0.0, 0.3])


@given(nonzero_u, coord)
def test_F_maps_square_into_itself(u, v):
    out = g.geo_F([u, v])
    assert np.all(np.abs(out) <= 1 + 1e-12)


@given(nonzero_u, coord)
def test_F_is_odd(u, v):
    np.testing.assert_allclose(g.geo_F([-u, -v]), -g.geo_F([u, v]), atol=1e-15)


@given(st.floats(0.01, 1), coord, st.sampled_from([-1, 1]))
def test_jacobian_matches_finite_differences(au, v, s):
    z = np.array([s * au, v])
    h = 1e-7 * au
    fd = np.empty((2, 2))
    for k, step in enumerate((h, 1e-7)):
        e = np.zeros(2)
        e[k] = step
        fd[:, k] = (g.geo_F(z + e) - g.geo_F(z - e)) / (2 * step)
    np.testing.assert_allclose(g.geo_F_jacobian(z), fd, rtol=1e-5, atol=1e-7)


@given(st.floats(1e-4, 1), coord, st.sampled_from([-1, 1]))
def test_inverse_roundtrip(au, v, s):
    z = np.array([s * au, v])
    back = g.geo_F_inverse(g.geo_F(z), s)
    np.testing.assert_allclose(back, z, rtol=1e-9, atol=1e-9)


def test_roof_is_logarithmic():
    geo = g.DEFAULT_GEO
    u = np.geomspace(1e-12, 1, 50)
    R = g.geo_R(np.stack([u, np.zeros_like(u)], axis=1))
    np.testing.assert_allclose(R, geo.r0 - np.log(u) / geo.lambda1, rtol=1e-15)


def test_params_validation():
    with pytest.raises(ValueError):
        g.GeoParams(alpha=0.5)
    with pytest.raises(ValueError):
        g.GeoParams(eta=0.8)
    bad = g.GeoParams.unchecked(eta=1.5)
    assert bad.eta == 1.5
    assert bad.violations()


@given(nonzero_u, coord, st.floats(0, 20), st.floats(0, 20))
def test_suspension_flow_semigroup_is_exact(u, v, s, t):
    x = g.SuspensionState((u, v), 0)
    a = g.geo_flow(x, Fraction(s) + Fraction(t))
    b = g.geo_flow(g.geo_flow(x, s), t)
    assert a == b


def test_suspension_flow_crosses_roof():
    z = np.array([0.25, 0.1])
    x = g.SuspensionState(tuple(z), 0)
    R = float(g.geo_R(z))
    y = g.geo_flow(x, R)
    np.testing.assert_array_equal(np.array(y.base), g.geo_F(z))
    assert y.height == 0
