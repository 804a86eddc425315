from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from impulsive_lorenz.errors import FamilyMismatch
from impulsive_lorenz.geometric import DEFAULT_GEO
from impulsive_lorenz.impulse import ImpulseSpec
from impulsive_lorenz.measures import (ODE_FAMILY, SECTION_FAMILY, SUSPENSION_FAMILY,
                                       EmpiricalMeasure, MeasureVector, TwoAttractorMap,
                                       birkhoff_flow_average, birkhoff_map_average, cluster_basins,
                                       distance_with_stderr, empirical_invariant_measure,
                                       flow_invariance_defect, orbit_statistics, probe_basins,
                                       section_basis, suspension_lift, weak_star_distance)
from impulsive_lorenz.poincare import GeometricPoincare

coord = st.floats(-1, 1)
point = st.tuples(coord, coord)
GEO0 = GeometricPoincare(spec=ImpulseSpec(0.0))
GEO5 = GeometricPoincare(spec=ImpulseSpec(0.05))


def dirac(z) -> MeasureVector:
    return MeasureVector(SECTION_FAMILY.key, section_basis(np.array([z]))[0])


def test_family_layout():
    assert SECTION_FAMILY.size == 41 == len(SECTION_FAMILY.names)
    assert SUSPENSION_FAMILY.size == 45 == len(SUSPENSION_FAMILY.names)
    assert ODE_FAMILY.size == 45 == len(ODE_FAMILY.names)


@given(st.lists(point, min_size=1, max_size=20))
def test_family_bounded_with_constant_first(pts):
    vals = section_basis(np.array(pts))
    assert np.all(np.abs(vals) <= 1 + 1e-15)
    np.testing.assert_array_equal(vals[:, 0], 1.0)


@given(point, point)
def test_dirac_distance_bounded_by_lipschitz(a, b):
    d = weak_star_distance(dirac(a), dirac(b))
    gap = np.max(np.abs(np.subtract(a, b)))
    assert d <= np.max(SECTION_FAMILY.lipschitz) * gap * 2 + 1e-12
    assert weak_star_distance(dirac(a), dirac(a)) == 0


@given(point, point, point)
def test_distance_triangle_inequality(a, b, c):
    ma, mb, mc = dirac(a), dirac(b), dirac(c)
    assert weak_star_distance(ma, mc) <= weak_star_distance(ma, mb) + weak_star_distance(mb, mc) + 1e-12


def test_family_mismatch():
    a = dirac((0.1, 0.2))
    b = MeasureVector(SUSPENSION_FAMILY.key, np.zeros(45))
    with pytest.raises(FamilyMismatch):
        weak_star_distance(a, b)
    with pytest.raises(FamilyMismatch):
        distance_with_stderr(a, b)
    with pytest.raises(FamilyMismatch):
        SUSPENSION_FAMILY.evaluate(np.zeros((1, 2)))


def test_fixed_point_average_is_dirac():
    geo = DEFAULT_GEO
    z = np.array([1.0, geo.delta0 / (1 - geo.eta)])
    np.testing.assert_allclose(GEO0.apply(z), z, atol=1e-15)
    res = birkhoff_map_average(GEO0, z, 500)
    assert not res.truncated and res.completed == 500
    np.testing.assert_allclose(res.values, section_basis(z[None])[0], atol=1e-12)


def test_birkhoff_map_average_truncates_in_guard_band():
    res = birkhoff_map_average(TwoAttractorMap(), [0.5, 0.1], 10)
    # 0.5 -> 1.0 lies in the guard band of the fixture
    assert res.truncated and res.completed == 1


def test_empirical_measure_normalizes_and_roundtrips():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, (100, 2))
    mu = EmpiricalMeasure(pts, np.arange(1, 101), np.repeat(np.arange(10), 10))
    assert mu.weights.sum() == pytest.approx(1.0)
    back = EmpiricalMeasure.from_bytes(mu.to_bytes())
    np.testing.assert_array_equal(back.points, mu.points)
    np.testing.assert_array_equal(back.weights, mu.weights)
    rows = mu.to_csv().strip().splitlines()
    assert rows[0] == "u,v,weight" and len(rows) == 101
    assert float(rows[1].split(",")[0]) == pts[0, 0]
    with pytest.raises(ValueError):
        EmpiricalMeasure(pts, -np.ones(100), np.zeros(100))


def test_u_marginal_matches_one_dimensional_loop():
    # the u coordinate of the geometric map is autonomous: compare with a plain 1-D loop
    stats = orbit_statistics(GEO0, 200, 200, 5000, 3, flow=False)
    vec = stats.section_vector()
    rng = np.random.default_rng(11)
    u = rng.uniform(-1, 1, 400)
    for _ in range(200):
        u = np.sign(u) * (2 * np.abs(u) ** 0.75 - 1)
    acc = np.zeros((5, u.size))
    for _ in range(5000):
        acc += np.cos(np.arange(5)[:, None] * np.pi * u)
        u = np.sign(u) * (2 * np.abs(u) ** 0.75 - 1)
    oracle = acc.mean(axis=1) / 5000
    oracle_se = (acc / 5000).std(axis=1, ddof=1) / np.sqrt(u.size)
    idx = [j * 5 for j in range(5)]  # cos(j pi u) cos(0 pi v)
    se = np.hypot(vec.stderr[idx], oracle_se)
    assert np.all(np.abs(vec.values[idx] - oracle) <= 5 * se + 1e-12)
    assert np.max(np.abs(vec.values[idx] - oracle)) <= 0.02


def test_doubling_orbit_length_stabilizes_integrals():
    a = orbit_statistics(GEO5, 100, 1000, 10_000, 6, flow=False).section_vector()
    b = orbit_statistics(GEO5, 100, 1000, 20_000, 6, flow=False).section_vector()
    assert weak_star_distance(a, b) <= 0.01


def test_lift_normalized_and_matches_flow_vector():
    mu = empirical_invariant_measure(GEO5, 200, 100, 500, 1, thin=2)
    lift = suspension_lift(mu, GEO5)
    assert lift.values[0] == pytest.approx(1.0, abs=1e-12)
    st_ = orbit_statistics(GEO5, 200, 100, 20_000, 2)
    assert weak_star_distance(lift, st_.flow_vector()) < 0.02


def test_flow_average_matches_lift():
    st_ = orbit_statistics(GEO5, 100, 100, 20_000, 4)
    res = birkhoff_flow_average(GEO5, [0.3, 0.2], 40_000.0)
    assert res.values[0] == pytest.approx(1.0, abs=1e-10)
    assert weak_star_distance(MeasureVector(SUSPENSION_FAMILY.key, res.values),
                              st_.flow_vector()) < 0.03


def test_invariance_defect_small_and_zero_at_zero_shift():
    mu = empirical_invariant_measure(GEO5, 400, 100, 500, 5, thin=2)
    assert flow_invariance_defect(mu, GEO5, 0.0)[0] == 0.0
    assert flow_invariance_defect(mu, GEO5, 1.0)[0] < 0.02
    with pytest.raises(ValueError):
        flow_invariance_defect(mu, GEO5, 6.0)


def test_orbit_statistics_independent_of_workers_and_blocks():
    a = orbit_statistics(GEO5, 40, 50, 2000, 9, tangent=True, workers=1, block=256)
    b = orbit_statistics(GEO5, 40, 50, 2000, 9, tangent=True, workers=2, block=7)
    np.testing.assert_array_equal(a.sec_sum, b.sec_sum)
    np.testing.assert_array_equal(a.flow_sum, b.flow_sum)
    np.testing.assert_array_equal(a.log_sum, b.log_sum)
    c = orbit_statistics(GEO5, 20, 50, 2000, 9, tangent=True, seed_offset=20)
    np.testing.assert_array_equal(a.sec_sum[20:], c.sec_sum)


def test_two_attractor_fixture_has_two_basins():
    rep = probe_basins(TwoAttractorMap(), 200, 100, 5000, 0)
    assert rep.s == 2
    assert rep.accepted
    assert rep.fractions.sum() == pytest.approx(1.0, abs=0.02)


def test_geometric_map_has_one_basin():
    rep = probe_basins(GEO0, 200, 500, 10_000, 0)
    assert rep.s == 1 and rep.coverage == 1.0


def test_cluster_basins_needs_enough_seeds():
    with pytest.raises(ValueError):
        cluster_basins(np.zeros((10, 3)))
