"""Acceptance suite.

Every test checks one criterion at its stated tolerance and records a single
PASS/FAIL line, shown in the terminal summary.  Criteria that fail are left
failing; the analysis lives in the project notes.
"""

from __future__ import annotations

import time
from fractions import Fraction

import numpy as np
import pytest

from impulsive_lorenz import flow_core as fc
from impulsive_lorenz.conditions import FIXTURES, check_conditions, fixture_map
from impulsive_lorenz.config import ExperimentConfig
from impulsive_lorenz.entropy import quotient_entropy_oracle
from impulsive_lorenz.experiments import basin_counts, nonincreasing_within, stability_sweep
from impulsive_lorenz.geometric import geo_F
from impulsive_lorenz.impulse import GeometricImpulsiveSystem, ImpulseSpec, OdeImpulsiveSystem, h_eps
from impulsive_lorenz.measures import empirical_invariant_measure, flow_invariance_defect
from impulsive_lorenz.poincare import GeometricPoincare, OdePoincare

pytestmark = pytest.mark.slow

DEFAULTS = ExperimentConfig()
SWEEP_EPS = DEFAULTS.epsilons  # (0.1, 0.05, 0.02, 0.01, 0.005, 0.0)
CHART = fc.classical_chart()


def geometric(eps: float) -> GeometricPoincare:
    return GeometricPoincare(DEFAULTS.geo, DEFAULTS.impulse.with_epsilon(eps))


@pytest.fixture(scope="module")
def sweep():
    m, e = DEFAULTS.measure, DEFAULTS.entropy
    t = time.perf_counter()
    res = stability_sweep(geometric, SWEEP_EPS, seeds=m.seeds, burn_in=m.burn_in,
                          n=m.orbit_length, rng_seed=DEFAULTS.seed, degree=m.degree,
                          align_steps=e.align_steps, cone_half_angle=e.cone_half_angle)
    res.settings["seconds"] = time.perf_counter() - t
    return res


def test_criterion_1_degenerate_impulse(criterion):
    t = time.perf_counter()
    rng = np.random.default_rng(101)
    Z = rng.uniform(-1, 1, (1_000_000, 2))
    P = geometric(0.0)
    geo_equal = bool(np.array_equal(P.apply(Z), geo_F(Z)))

    ode = OdePoincare(CHART, ImpulseSpec(0.0))
    worst = 0.0
    for z in rng.uniform(-1, 1, (1000, 2)):
        corrected = ode.psi(ode.poincare_FY(ode.psi_inv(z)))
        worst = max(worst, float(np.max(np.abs(corrected - ode.return_map(z)[0]))))
    dt = time.perf_counter() - t
    ok = geo_equal and worst <= 1e-6 and dt < 120
    criterion(1, ok, f"geometric bit-equal on 1e6 points: {geo_equal}; ODE max defect "
                     f"{worst:.2e} (<= 1e-6) on 1e3 points; {dt:.0f} s (< 120 s)")
    assert ok


def test_criterion_2_semiflow_law(criterion):
    t = time.perf_counter()
    rng = np.random.default_rng(202)
    geo_sys = GeometricImpulsiveSystem(DEFAULTS.geo, ImpulseSpec(0.05))
    geo_worst = 0.0
    geo_exact = True
    for _ in range(200):
        x = geo_sys.entry_state(rng.uniform(-1, 1, 2))
        s, tt = rng.uniform(0, 20, 2)
        a = geo_sys.evaluate_Y(x, Fraction(s) + Fraction(tt))
        b = geo_sys.evaluate_Y(geo_sys.evaluate_Y(x, s), tt)
        geo_exact &= a == b
        geo_worst = max(geo_worst, float(np.max(np.abs(np.subtract(a.base, b.base)))),
                        abs(float(a.height - b.height)))

    ode_sys = OdeImpulsiveSystem(CHART, ImpulseSpec(0.05), fc.IntegratorConfig.high_precision())
    ode_worst = 0.0
    for _ in range(200):
        x = ode_sys.entry_state(rng.uniform(-1, 1, 2))
        s, tt = rng.uniform(0, 20, 2)
        a = ode_sys.evaluate_Y(x, Fraction(s) + Fraction(tt))
        b = ode_sys.evaluate_Y(ode_sys.evaluate_Y(x, s), tt)
        ode_worst = max(ode_worst, fc.point_distance(a, b))
    dt = time.perf_counter() - t
    ok = geo_exact and ode_worst <= 1e-6 and dt < 300
    criterion(2, ok, f"geometric exact: {geo_exact} (max defect {geo_worst:.1e}); ODE max defect "
                     f"{ode_worst:.2e} (<= 1e-6) over 200 samples; {dt:.0f} s (< 300 s)")
    assert ok


def test_criterion_3_conjugacy(criterion):
    t = time.perf_counter()
    rng = np.random.default_rng(303)
    spec = ImpulseSpec(0.1)
    P = GeometricPoincare(DEFAULTS.geo, spec)
    geo_worst = 0.0
    for w in rng.uniform(-1, 1, (1000, 2)):
        x = P.psi_inv(h_eps(w, spec))
        geo_worst = max(geo_worst, float(np.max(np.abs(P.psi(P.poincare_FY(x))
                                                       - P.tilde_FY(P.psi(x))))))
    ode = OdePoincare(CHART, spec)
    ode_worst = 0.0
    for w in rng.uniform(-1, 1, (1000, 2)):
        x = ode.psi_inv(h_eps(w, spec))
        ode_worst = max(ode_worst, float(np.max(np.abs(ode.psi(ode.poincare_FY(x))
                                                       - ode.tilde_FY(ode.psi(x))))))
    dt = time.perf_counter() - t
    ok = geo_worst <= 1e-8 and ode_worst <= 1e-6 and dt < 120
    criterion(3, ok, f"sup defect geometric {geo_worst:.2e} (<= 1e-8), ODE {ode_worst:.2e} "
                     f"(<= 1e-6) on 1e3 points at eps=0.1; {dt:.0f} s (< 120 s)")
    assert ok


def test_criterion_4_return_time_law(criterion):
    t = time.perf_counter()
    rng = np.random.default_rng(404)
    # geometric: roof against -log|u| has slope exactly 1/lambda1
    P = geometric(0.05)
    au = 10 ** rng.uniform(-12, 0, 1000)
    Z = np.stack([au * rng.choice([-1, 1], au.size), rng.uniform(-1, 1, au.size)], axis=1)
    slope = np.polyfit(-np.log(au), P.roof(Z), 1)[0]
    slope_err = abs(slope - 1 / DEFAULTS.geo.lambda1)

    # ODE: flight time against -log of the distance to the singular line
    vs = np.linspace(-0.5, 0.5, 9)
    gamma = [fc.singular_u(v, CHART) for v in vs]
    x, y = [], []
    for i in range(200):
        k = i % vs.size
        d = 10 ** rng.uniform(-6, -2) * rng.choice([-1, 1])
        x.append(-np.log(abs(d)))
        y.append(fc.return_map([gamma[k] + d, vs[k]], CHART)[1])
    x, y = np.array(x), np.array(y)
    b, a = np.polyfit(x, y, 1)
    r2 = 1 - np.sum((y - a - b * x) ** 2) / np.sum((y - y.mean()) ** 2)
    dt = time.perf_counter() - t
    ok = slope_err <= 1e-12 and r2 >= 0.99 and dt < 300
    criterion(4, ok, f"geometric slope error {slope_err:.1e} (<= 1e-12); ODE R^2 {r2:.5f} (>= 0.99), "
                     f"slope {b:.4f}; {dt:.0f} s (< 300 s)")
    assert ok


def test_criterion_5_measure_invariance(criterion):
    t = time.perf_counter()
    P = geometric(0.05)
    per_seed, thin, burn = 250, 10, 100

    def defect(n_samples: int, master: int) -> float:
        mu = empirical_invariant_measure(P, n_samples // per_seed, burn, per_seed * thin, master,
                                         thin=thin)
        return flow_invariance_defect(mu, P, 1.0)[0]

    reps = 8
    small = [defect(250_000, 500 + r) for r in range(reps)]
    large = [defect(1_000_000, 600 + r) for r in range(reps)]
    ratio = float(np.mean(large) / np.mean(small))
    dt = time.perf_counter() - t
    ok = max(large) <= 0.02 and 0.35 <= ratio <= 0.65 and dt < 900
    criterion(5, ok, f"defect at s=1 with 1e6 samples: max {max(large):.2e} over {reps} replicates "
                     f"(<= 0.02); mean ratio 4N/N {ratio:.3f} (0.5 +- 30%); {dt:.0f} s (< 900 s)")
    assert ok


def test_criterion_6_statistical_stability(criterion, sweep):
    pts = sweep.ordered()
    d = [p.distance for p in pts]
    se = [p.distance_stderr for p in pts]
    mono = nonincreasing_within(d, se, 2.0)
    halved = sweep.by_epsilon(0.005).distance <= 0.5 * sweep.by_epsilon(0.1).distance
    ok = mono and halved and sweep.settings["seconds"] < 1800
    desc = ", ".join(f"{p.epsilon:g}: {p.distance:.4f}+-{p.distance_stderr:.4f}" for p in pts)
    criterion(6, ok, f"distances {{{desc}}}; nonincreasing within 2 stderr: {mono}; "
                     f"d(0.005) <= d(0.1)/2: {halved}; sweep {sweep.settings['seconds']:.0f} s")
    assert ok


def test_criterion_7_entropy_oracle(criterion, sweep):
    t = time.perf_counter()
    ref = sweep.by_epsilon(0.0).entropy
    oracle = quotient_entropy_oracle(DEFAULTS.geo, n=100_000, seed=7, orbits=200)
    rel = abs(ref.h_map - oracle.h) / oracle.h
    dt = time.perf_counter() - t
    ok = rel <= 0.02 and dt + sweep.settings["seconds"] / len(SWEEP_EPS) < 600
    criterion(7, ok, f"h_map {ref.h_map:.5f}+-{ref.h_map_stderr:.5f} vs quotient oracle "
                     f"{oracle.h:.5f}+-{oracle.h_stderr:.5f}: relative gap {rel:.2e} (<= 0.02)")
    assert ok


def test_criterion_8_entropy_stability(criterion, sweep):
    pts = sweep.ordered()
    gaps = [p.entropy_gap for p in pts]
    se = [p.entropy_gap_stderr for p in pts]
    ok = nonincreasing_within(gaps, se, 2.0)
    desc = ", ".join(f"{p.epsilon:g}: {p.entropy_gap:.5f}+-{p.entropy_gap_stderr:.5f}" for p in pts)
    criterion(8, ok, f"|h_flow(eps) - h_flow(0)| {{{desc}}}; nonincreasing within 2 stderr: {ok}")
    assert ok


def test_criterion_9_conditions(criterion):
    t = time.perf_counter()
    failures = {}
    lam = {}
    for eps in SWEEP_EPS:
        rep = check_conditions(geometric(eps), DEFAULTS.conditions, DEFAULTS.seed)
        lam[eps] = rep.H2.get("lambda_min", float("nan"))
        if not rep.all_passed:
            failures[eps] = rep.failed_checks()
    fixtures_ok = True
    fixture_desc = []
    for target in FIXTURES:
        rep = check_conditions(fixture_map(target), DEFAULTS.conditions, DEFAULTS.seed)
        fixtures_ok &= rep.failed_checks() == [target]
        fixture_desc.append(f"{target} fixture fails {rep.failed_checks()}")
    dt = time.perf_counter() - t
    ok = not failures and fixtures_ok and dt < 600
    lam_desc = ", ".join(f"{e:g}: {v:.3f}" for e, v in lam.items())
    criterion(9, ok, f"failing checks by eps {failures or 'none'}; H2 lambda_min {{{lam_desc}}} "
                     f"(>= 1.4); {'; '.join(fixture_desc)}; {dt:.0f} s (< 600 s)")
    assert ok


def test_criterion_10_basin_finiteness(criterion):
    t = time.perf_counter()
    m = DEFAULTS.measure
    counts = {}
    stable = True
    for eps in sorted(SWEEP_EPS):
        res = basin_counts(geometric(eps), m.seeds, m.burn_in, m.orbit_length, [0, 1],
                           tol=m.basin_tol, degree=m.degree)
        cs = {c for pair in res["counts"].values() for c in pair}
        counts[eps] = sorted(cs)
        stable &= len(cs) == 1
    dt = time.perf_counter() - t
    ok = stable and counts[0.0] == [1] and dt < 1200
    desc = ", ".join(f"{e:g}: s={c}" for e, c in counts.items())
    criterion(10, ok, f"cluster counts over 2 master seeds and doubled seeds {{{desc}}}; "
                      f"{dt:.0f} s (< 1200 s)")
    assert ok
