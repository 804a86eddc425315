"""Impulse maps and the impulsive trajectory engine.

An impulse takes a section point ``w``, displaces it inside the section by the
near-identity map ``h_eps`` and then drops it a fixed time ``s0`` below the
section along the flow.  The impulsive trajectory flows until it hits the
section, applies the impulse and repeats.  Since the impulse always lands
strictly below the section, consecutive impulse times are separated by at
least ``s0`` plus a positive flight residual.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable

import numpy as np

from . import flow_core as fc
from .errors import NoReturn, OutOfSection, SingularInput
from .geometric import DEFAULT_GEO, GeoParams, SuspensionState, geo_F, geo_R

# --------------------------------------------------------------------------
# displacement catalog


def _sine_bump(w):
    u, v = w[..., 0], w[..., 1]
    return np.stack([np.sin(np.pi * u) * (1 - v * v), np.sin(np.pi * v) * (1 - u * u)], axis=-1)


def _sine_bump_jac(w):
    u, v = w[..., 0], w[..., 1]
    j = np.empty(w.shape[:-1] + (2, 2))
    j[..., 0, 0] = np.pi * np.cos(np.pi * u) * (1 - v * v)
    j[..., 0, 1] = -2 * v * np.sin(np.pi * u)
    j[..., 1, 0] = -2 * u * np.sin(np.pi * v)
    j[..., 1, 1] = np.pi * np.cos(np.pi * v) * (1 - u * u)
    return j


def _shear(w):
    u, v = w[..., 0], w[..., 1]
    return np.stack([(1 - u * u) * v, np.zeros_like(u)], axis=-1)


def _shear_jac(w):
    u, v = w[..., 0], w[..., 1]
    j = np.zeros(w.shape[:-1] + (2, 2))
    j[..., 0, 0] = -2 * u * v
    j[..., 0, 1] = 1 - u * u
    return j


def _rotation(eps):
    c, s = np.cos(eps), np.sin(eps)
    scale = 1.0 / (abs(c) + abs(s))
    return scale * np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class DisplacementField:
    """A named near-identity in-section map ``h_eps``."""

    name: str
    apply: Callable[[np.ndarray, float], np.ndarray]
    jacobian: Callable[[np.ndarray, float], np.ndarray]


def _additive(d, dj, name):
    return DisplacementField(
        name,
        lambda w, eps: w + eps * d(w),
        lambda w, eps: np.eye(2) + eps * dj(w),
    )


CATALOG: dict[str, DisplacementField] = {
    "sine-bump": _additive(_sine_bump, _sine_bump_jac, "sine-bump"),
    "shear": _additive(_shear, _shear_jac, "shear"),
    # rigid rotation by eps radians, rescaled so the square maps into itself
    "rotate": DisplacementField(
        "rotate",
        lambda w, eps: w @ _rotation(eps).T,
        lambda w, eps: np.broadcast_to(_rotation(eps), np.shape(w)[:-1] + (2, 2)).copy(),
    ),
}


@dataclass(frozen=True)
class ImpulseSpec:
    """Impulse parameters.

    Parameters
    ----------
    epsilon : float
        Displacement magnitude, ``0 <= epsilon <= 0.1``.
    s0 : float
        Drop time below the section.
    t0 : float, optional
        Flow-box depth, defaults to ``2 * s0``.
    field : str
        Name of a displacement field in :data:`CATALOG`.
    """

    epsilon: float = 0.0
    s0: float = 0.05
    t0: float | None = None
    field: str = "sine-bump"

    def __post_init__(self):
        if self.t0 is None:
            object.__setattr__(self, "t0", 2.0 * self.s0)
        if not (0 < self.s0 <= self.t0):
            raise ValueError("ImpulseSpec needs 0 < s0 <= t0")
        if not (0 <= self.epsilon <= 0.1):
            raise ValueError("ImpulseSpec needs 0 <= epsilon <= 0.1")
        if self.field not in CATALOG:
            raise ValueError(f"unknown displacement field {self.field!r}")

    def with_epsilon(self, eps: float) -> "ImpulseSpec":
        return ImpulseSpec(eps, self.s0, self.t0, self.field)

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "s0": self.s0, "t0": self.t0, "field": self.field}


def h_eps(w, spec: ImpulseSpec, *, check: bool = True) -> np.ndarray:
    """In-section displacement map ``h_eps``; raises OutOfSection if it leaves the square."""
    w = np.asarray(w, dtype=float)
    out = CATALOG[spec.field].apply(w, spec.epsilon)
    if check and np.any(np.abs(out) > 1.0 + 1e-12):
        raise OutOfSection("displaced point left the square")
    return out


def h_eps_jacobian(w, spec: ImpulseSpec) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return CATALOG[spec.field].jacobian(w, spec.epsilon)


def h_eps_inverse(w, spec: ImpulseSpec, tol: float = 1e-14, max_iter: int = 50) -> np.ndarray:
    """Inverse of ``h_eps`` by Newton iteration (``h_eps`` is a near-identity diffeomorphism)."""
    w = np.asarray(w, dtype=float)
    z = w.copy()
    for _ in range(max_iter):
        r = h_eps(z, spec, check=False) - w
        jac = h_eps_jacobian(z, spec)
        dz = np.linalg.solve(jac, r[..., None])[..., 0]
        z = z - dz
        if np.max(np.abs(dz)) < tol:
            break
    return z


def impulse_apply(w, spec: ImpulseSpec, chart: fc.SectionChart | None = None,
                  cfg: fc.IntegratorConfig = fc.DEFAULT_CFG):
    """Apply the impulse ``phi`` to a section point.

    Geometric backend (``chart is None``): returns ``(h_eps(w), s0)``.
    ODE backend: returns the physical point ``X_{s0}(chart^{-1}(h_eps(w)))``.
    """
    z = h_eps(w, spec)
    if chart is None:
        return z, spec.s0
    return fc.integrate(chart.to_point(z), spec.s0, cfg, chart.params)


# --------------------------------------------------------------------------
# trajectories


@dataclass
class Segment:
    """One flow arc ``[start, end)`` of an impulsive trajectory.

    ``hit`` is the section point that ends the arc (``None`` when the arc was
    truncated at the horizon or never returned).
    """

    index: int
    start: Fraction
    entry: Any
    end: Fraction | None = None
    hit: np.ndarray | None = None


@dataclass
class ImpulsiveTrajectory:
    """Record of an impulsive trajectory up to ``T_max``."""

    start: Any
    T_max: Fraction
    segments: list[Segment] = field(default_factory=list)
    final_state: Any = None
    no_return: bool = False
    gamma_nudges: int = 0

    @property
    def taus(self) -> list[float]:
        """Impulsive times ``tau_0 = 0 < tau_1 < ...`` (within the horizon)."""
        return [float(s.start) for s in self.segments]

    @property
    def taus_exact(self) -> list[Fraction]:
        return [s.start for s in self.segments]

    @property
    def n_impulses(self) -> int:
        return len(self.segments) - 1

    def segment_at(self, t) -> Segment:
        t = Fraction(t)
        seg = self.segments[0]
        for s in self.segments:
            if s.start <= t:
                seg = s
            else:
                break
        return seg


class ImpulsiveSystem:
    """Common driver for the inductive impulsive construction.

    Subclasses implement :meth:`_advance` (flow until the section or until a
    time budget runs out) and :meth:`_impulse` (apply ``phi`` to a hit).
    """

    spec: ImpulseSpec

    def _advance(self, state, budget: Fraction):
        raise NotImplementedError

    def _impulse(self, hit):
        raise NotImplementedError

    def tau1(self, x) -> float:
        """First hitting time of the section under the underlying flow."""
        raise NotImplementedError

    def impulsive_trajectory(self, x, T_max) -> ImpulsiveTrajectory:
        """Flow until the section, record the time, apply the impulse, repeat.

        The loop stops only at the horizon ``T_max`` or when the underlying
        flow fails to return (flagged with ``no_return``).
        """
        T = Fraction(T_max)
        if T < 0:
            raise ValueError("T_max must be non-negative")
        traj = ImpulsiveTrajectory(x, T)
        t = Fraction(0)
        state = x
        seg = Segment(0, t, state)
        traj.segments.append(seg)
        while True:
            try:
                kind, elapsed, payload = self._advance(state, T - t)
            except NoReturn:
                traj.no_return = True
                return traj
            if kind == "end":
                seg.end = T
                traj.final_state = payload
                return traj
            tau = t + elapsed
            seg.end = tau
            seg.hit = np.asarray(payload[1], dtype=float)
            state = self._impulse(payload)
            t = tau
            seg = Segment(seg.index + 1, t, state)
            traj.segments.append(seg)

    def evaluate_Y(self, x, t):
        """State of the impulsive trajectory of ``x`` at time ``t``.

        Right-continuous at impulsive times.
        """
        traj = self.impulsive_trajectory(x, t)
        if traj.no_return:
            raise NoReturn("trajectory did not return before the requested time")
        return traj.final_state


class GeometricImpulsiveSystem(ImpulsiveSystem):
    """Impulsive semiflow on the geometric suspension.

    States are :class:`~impulsive_lorenz.geometric.SuspensionState` with the
    height measured from the section.  The roof is reached at height
    ``R(base)``; the impulse then restarts at ``(h_eps(F(base)), s0)``.
    """

    def __init__(self, geo: GeoParams = DEFAULT_GEO, spec: ImpulseSpec = ImpulseSpec()):
        self.geo = geo
        self.spec = spec
        self.nudges = 0

    def roof(self, base) -> Fraction:
        return Fraction(float(geo_R(np.asarray(base, dtype=float), self.geo)))

    def tau1(self, x: SuspensionState) -> float:
        return float(self.roof(x.base) - Fraction(x.height))

    def _advance(self, state: SuspensionState, budget: Fraction):
        height = Fraction(state.height)
        to_roof = self.roof(state.base) - height
        if to_roof > budget:
            return "end", budget, SuspensionState(state.base, height + budget)
        return "hit", to_roof, (state, np.asarray(state.base, dtype=float))

    def _impulse(self, payload) -> SuspensionState:
        state, base = payload
        z = h_eps(geo_F(base, self.geo), self.spec)
        if z[0] == 0:
            # land off the singular line, toward the side of the previous point
            z = z.copy()
            z[0] = 1e-15 * (1.0 if base[0] > 0 else -1.0)
            self.nudges += 1
        return SuspensionState((float(z[0]), float(z[1])), Fraction(self.spec.s0))

    def entry_state(self, w) -> SuspensionState:
        """``phi(w)`` as a suspension state."""
        z, s0 = impulse_apply(w, self.spec)
        return SuspensionState((float(z[0]), float(z[1])), Fraction(s0))


def _dd_shift(p: fc.DDPoint, d: np.ndarray) -> fc.DDPoint:
    hi, lo = p.hi.copy(), p.lo.copy()
    s = hi + d
    bb = s - hi
    err = (hi - (s - bb)) + (d - bb)
    lo = lo + err
    hi2 = s + lo
    lo2 = lo - (hi2 - s)
    return fc.DDPoint(hi2, lo2)


class OdeImpulsiveSystem(ImpulsiveSystem):
    """Impulsive semiflow of the Lorenz equations.

    States are physical points (``ndarray`` or :class:`~impulsive_lorenz.flow_core.DDPoint`
    depending on the integrator).
    """

    def __init__(self, chart: fc.SectionChart | None = None, spec: ImpulseSpec = ImpulseSpec(),
                 cfg: fc.IntegratorConfig = fc.DEFAULT_CFG):
        self.chart = chart if chart is not None else fc.classical_chart()
        self.spec = spec
        self.cfg = cfg

    @property
    def params(self) -> fc.LorenzParams:
        return self.chart.params

    def tau1(self, x) -> float:
        return fc.first_hit(x, self.chart, self.cfg).time

    def _advance(self, state, budget: Fraction):
        horizon = min(budget, Fraction(self.cfg.max_flight_time))
        res = fc.advance(state, horizon, self.chart, self.cfg)
        if res.hit is None:
            if horizon < budget:
                raise NoReturn("no section crossing within the max flight time")
            return "end", res.elapsed, res.point
        return "hit", res.elapsed, (res.hit, res.hit.uv)

    def displaced_plane_point(self, hit: fc.Hit):
        """Plane point ``chart^{-1}(h_eps(w))`` computed as a shift of the hit point."""
        uv = np.asarray(hit.uv, dtype=float)
        duv = h_eps(uv, self.spec) - uv
        offset = np.zeros(3)
        offset[:2] = self.chart.plane_offset(duv)
        if isinstance(hit.point, fc.DDPoint):
            p = _dd_shift(hit.point, offset)
            hi, lo = p.hi.copy(), p.lo.copy()
            hi[2], lo[2] = self.chart.plane, 0.0
            return fc.DDPoint(hi, lo)
        p = np.asarray(hit.point, dtype=float) + offset
        p[2] = self.chart.plane
        return p

    def _impulse(self, payload):
        hit, _ = payload
        return fc.integrate(self.displaced_plane_point(hit), self.spec.s0, self.cfg, self.params)

    def entry_state(self, w):
        """``phi(w)`` for a section point ``w``."""
        return impulse_apply(w, self.spec, self.chart, self.cfg)


def trajectory_rows(traj: ImpulsiveTrajectory, system: ImpulsiveSystem, dt: float) -> list[tuple]:
    """Sample a trajectory on the uniform grid ``k * dt`` for export.

    Rows are ``(t, c1, c2, c3, segment)``: physical coordinates on the ODE
    backend (sampled from DOPRI dense output), ``(u, v, height)`` on the
    geometric backend.
    """
    rows = []
    T = float(traj.T_max)
    last = len(traj.segments) - 1
    for seg in traj.segments:
        start = float(seg.start)
        end = float(seg.end) if seg.end is not None else start
        k0 = int(np.ceil(start / dt - 1e-9))
        k1 = int(np.floor(end / dt + 1e-9))
        ks = [k for k in range(k0, k1 + 1)
              if k * dt < end or (seg.index == last and k * dt <= T + 1e-12)]
        if not ks:
            continue
        times = np.array([k * dt for k in ks])
        local = np.maximum(times - start, 0.0)
        if isinstance(system, GeometricImpulsiveSystem):
            st = seg.entry
            h0 = float(st.height)
            for tk, lk in zip(times, local):
                rows.append((tk, st.base[0], st.base[1], h0 + lk, seg.index))
        else:
            arc = fc.dense_arc(fc.as_double(seg.entry), max(end - start, 1e-12), system.chart,
                               system.cfg, stop_at_section=False)
            xs = arc(np.minimum(local, arc.duration))
            for tk, x in zip(times, xs):
                rows.append((tk, x[0], x[1], x[2], seg.index))
    return rows


def trajectory_csv(traj: ImpulsiveTrajectory, system: ImpulsiveSystem, dt: float = 0.01) -> str:
    """CSV text with header ``t,x1,x2,x3,segment`` (or ``t,u,v,height,segment``)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if isinstance(system, GeometricImpulsiveSystem):
        w.writerow(["t", "u", "v", "height", "segment"])
    else:
        w.writerow(["t", "x1", "x2", "x3", "segment"])
    for row in trajectory_rows(traj, system, dt):
        w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])),
                    repr(float(row[3])), row[4]])
    return buf.getvalue()
