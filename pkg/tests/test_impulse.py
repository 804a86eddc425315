from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impulsive_lorenz import flow_core as fc
from impulsive_lorenz.errors import OutOfSection
from impulsive_lorenz.geometric import SuspensionState, geo_flow
from impulsive_lorenz.impulse import (CATALOG, GeometricImpulsiveSystem, ImpulseSpec,
                                      OdeImpulsiveSystem, h_eps, h_eps_inverse, h_eps_jacobian,
                                      trajectory_csv)
from impulsive_lorenz.measures import orbit_statistics
from impulsive_lorenz.poincare import GeometricPoincare

coord = st.floats(-1, 1)
section_point = st.tuples(coord, coord).filter(lambda z: abs(z[0]) > 1e-9)
eps_value = st.floats(0, 0.1)


def test_sine_bump_example():
    np.testing.assert_allclose(h_eps([0.0, 0.5], ImpulseSpec(0.05)), [0.0, 0.55], atol=1e-15)


@pytest.mark.parametrize("field", sorted(CATALOG))
@given(z=st.tuples(coord, coord))
def test_zero_epsilon_is_identity(field, z):
    w = np.array(z)
    np.testing.assert_array_equal(h_eps(w, ImpulseSpec(0.0, field=field)), w)


@given(eps_value, coord, st.sampled_from([-1.0, 1.0]))
def test_sine_bump_fixes_boundary(eps, t, side):
    spec = ImpulseSpec(eps)
    for w in (np.array([side, t]), np.array([t, side])):
        np.testing.assert_allclose(h_eps(w, spec), w, atol=1e-15)


@pytest.mark.parametrize("field", sorted(CATALOG))
@given(eps=eps_value, z=st.tuples(coord, coord))
def test_displacement_stays_in_square_and_near_identity(field, eps, z):
    w = np.array(z)
    out = h_eps(w, ImpulseSpec(eps, field=field))
    assert np.all(np.abs(out) <= 1 + 1e-12)
    assert np.max(np.abs(out - w)) <= 2 * eps + 1e-15


@given(eps_value, st.tuples(st.floats(-0.99, 0.99), st.floats(-0.99, 0.99)))
def test_inverse_and_jacobian(eps, z):
    spec = ImpulseSpec(eps)
    w = np.array(z)
    np.testing.assert_allclose(h_eps_inverse(h_eps(w, spec), spec), w, atol=1e-12)
    h = 1e-7
    fd = np.empty((2, 2))
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd[:, k] = (h_eps(w + e, spec, check=False) - h_eps(w - e, spec, check=False)) / (2 * h)
    np.testing.assert_allclose(h_eps_jacobian(w, spec), fd, atol=1e-7)


def test_out_of_section_raised():
    with pytest.raises(OutOfSection):
        h_eps([1.5, 0.0], ImpulseSpec(0.05))


def test_spec_validation():
    with pytest.raises(ValueError):
        ImpulseSpec(0.2)
    with pytest.raises(ValueError):
        ImpulseSpec(0.05, s0=0.1, t0=0.05)
    with pytest.raises(ValueError):
        ImpulseSpec(0.05, field="nope")
    assert ImpulseSpec(0.05).t0 == 0.1


@given(section_point, eps_value)
def test_impulse_times_strictly_increase(z, eps):
    system = GeometricImpulsiveSystem(spec=ImpulseSpec(eps))
    traj = system.impulsive_trajectory(system.entry_state(z), 30)
    taus = traj.taus_exact
    gaps = np.array([float(b - a) for a, b in zip(taus[:-1], taus[1:])])
    assert taus[0] == 0
    # every gap is at least the minimum return time r0 - s0
    assert np.all(gaps >= system.geo.r0 - system.spec.s0 - 1e-12)


@given(section_point, eps_value, st.floats(0, 20), st.floats(0, 20))
def test_geometric_semiflow_is_exact(z, eps, s, t):
    system = GeometricImpulsiveSystem(spec=ImpulseSpec(eps))
    x = system.entry_state(z)
    a = system.evaluate_Y(x, Fraction(s) + Fraction(t))
    b = system.evaluate_Y(system.evaluate_Y(x, s), t)
    assert a == b


def test_impulsive_time_is_right_continuous():
    system = GeometricImpulsiveSystem(spec=ImpulseSpec(0.05))
    x = system.entry_state([0.3, 0.2])
    traj = system.impulsive_trajectory(x, 10)
    tau1 = traj.taus_exact[1]
    y = system.evaluate_Y(x, tau1)
    assert y.height == Fraction(system.spec.s0)
    assert y == traj.segments[1].entry


@settings(max_examples=20)
@given(section_point, st.floats(0, 40))
def test_zero_epsilon_only_drops_the_state(z, t):
    # without displacement every impulse only moves the state s0 down the same orbit
    system = GeometricImpulsiveSystem(spec=ImpulseSpec(0.0))
    x = system.entry_state(z)
    traj = system.impulsive_trajectory(x, t)
    plain = geo_flow(x, Fraction(t) + traj.n_impulses * Fraction(system.spec.s0), system.geo)
    assert traj.final_state == plain


def test_impulse_count_matches_mean_return_time():
    P = GeometricPoincare(spec=ImpulseSpec(0.05))
    T = 4000
    traj = P.system.impulsive_trajectory(P.system.entry_state([0.3, 0.2]), T)
    st_ = orbit_statistics(P, 50, 100, 20000, 0, flow=False)
    mean_RY = st_.mean_roof()[0] - P.spec.s0
    assert traj.n_impulses == pytest.approx(T / mean_RY, rel=0.05)


def test_geometric_trajectory_csv():
    system = GeometricImpulsiveSystem(spec=ImpulseSpec(0.05))
    traj = system.impulsive_trajectory(system.entry_state([0.3, 0.2]), 5)
    lines = trajectory_csv(traj, system, 0.01).strip().splitlines()
    assert lines[0] == "t,u,v,height,segment"
    assert len(lines) == 1 + 501


def test_ode_trajectory():
    system = OdeImpulsiveSystem(spec=ImpulseSpec(0.05))
    w = np.array([0.3, 0.2])
    x = system.entry_state(w)
    traj = system.impulsive_trajectory(x, 5.0)
    taus = traj.taus
    assert taus[0] == 0 and np.all(np.diff(taus) > 0)
    assert not traj.no_return
    # first hitting time after the impulse is R(h(w)) - s0
    z = h_eps(w, system.spec)
    R = fc.return_map(z, system.chart)[1]
    assert taus[1] == pytest.approx(R - system.spec.s0, abs=1e-8)
    lines = trajectory_csv(traj, system, 0.05).strip().splitlines()
    assert lines[0] == "t,x1,x2,x3,segment"
    assert len(lines) == 1 + 101
