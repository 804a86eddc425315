"""Lorenz vector field, adaptive integration and section-crossing detection.

Two integrators are available through :class:`IntegratorConfig`:

``"dopri5"``
    Dormand-Prince 5(4) with Hairer's quartic dense output.  Fast; used for
    bulk work and for variational (Jacobian) runs.
``"taylor-dd"``
    High-order Taylor series in double-double arithmetic.  Roughly 30
    significant digits, used where chaotic amplification over tens of time
    units would otherwise swamp double-precision truncation error.  States
    produced by this method are :class:`DDPoint` instances.

Section crossings are accepted only when ``x3`` decreases through the plane
``x3 = r - 1`` at a point inside the chart rectangle.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Union

import numpy as np

from . import _dopri, _taylor
from .errors import Escape, NoReturn, StepFailure

GRAZING_THRESHOLD = 1e-8


@dataclass(frozen=True)
class LorenzParams:
    """Lorenz parameters ``sigma``, ``r`` and ``b``."""

    sigma: float = 10.0
    r: float = 28.0
    b: float = 8.0 / 3.0

    def __post_init__(self):
        if not (self.sigma > 0 and self.r > 1 and self.b > 0):
            raise ValueError("LorenzParams need sigma > 0, r > 1, b > 0")

    @property
    def plane(self) -> float:
        """Height ``r - 1`` of the section plane."""
        return self.r - 1.0

    def equilibria(self) -> np.ndarray:
        q = math.sqrt(self.b * (self.r - 1.0))
        return np.array([[0.0, 0.0, 0.0], [q, q, self.r - 1.0], [-q, -q, self.r - 1.0]])

    def to_dict(self) -> dict:
        return asdict(self)


CLASSICAL = LorenzParams()


@dataclass(frozen=True)
class IntegratorConfig:
    """Integration settings.

    For ``method="taylor-dd"`` the relative tolerance is the Taylor series
    truncation tolerance and should be around ``1e-30``.
    """

    atol: float = 1e-12
    rtol: float = 1e-12
    max_step: float = 0.05
    max_flight_time: float = 50.0
    trapping_radius: float = 100.0
    method: str = "dopri5"
    taylor_order: int = 36

    def __post_init__(self):
        if not (self.atol > 0 and self.rtol > 0):
            raise ValueError("tolerances must be positive")
        if not (self.max_step > 0 and self.max_flight_time > 0):
            raise ValueError("max_step and max_flight_time must be positive")
        if self.method not in ("dopri5", "taylor-dd"):
            raise ValueError(f"unknown integration method {self.method!r}")

    @classmethod
    def high_precision(cls, **kw) -> "IntegratorConfig":
        base = dict(atol=1e-30, rtol=1e-30, max_step=1.0, method="taylor-dd")
        base.update(kw)
        return cls(**base)

    @property
    def tol(self) -> float:
        return max(self.atol, self.rtol)

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_CFG = IntegratorConfig()


@dataclass(frozen=True)
class DDPoint:
    """A state stored as an unevaluated double-double sum ``hi + lo``."""

    hi: np.ndarray
    lo: np.ndarray

    @property
    def value(self) -> np.ndarray:
        return self.hi + self.lo

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.value, dtype=dtype)


Point3 = Union[np.ndarray, DDPoint]


def as_dd(p: Point3) -> DDPoint:
    if isinstance(p, DDPoint):
        return p
    return DDPoint(np.array(p, dtype=float), np.zeros(3))


def as_double(p: Point3) -> np.ndarray:
    if isinstance(p, DDPoint):
        return p.value
    return np.asarray(p, dtype=float)


def point_distance(a: Point3, b: Point3) -> float:
    """Euclidean distance, computed from hi and lo parts separately."""
    if isinstance(a, DDPoint) or isinstance(b, DDPoint):
        a, b = as_dd(a), as_dd(b)
        d = (a.hi - b.hi) + (a.lo - b.lo)
    else:
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(np.sqrt(np.sum(d * d)))


def split_time(t) -> tuple[float, float]:
    """Split a Fraction (or float) into a double-double pair."""
    t = Fraction(t)
    hi = float(t)
    return hi, float(t - Fraction(hi))


def lorenz_rhs(p, params: LorenzParams = CLASSICAL) -> np.ndarray:
    """Lorenz vector field ``(s(x2-x1), r x1 - x2 - x1 x3, x1 x2 - b x3)``.

    Accepts arrays of shape ``(..., 3)``.
    """
    x = np.asarray(as_double(p) if isinstance(p, DDPoint) else p, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    return np.stack([params.sigma * (x2 - x1),
                     params.r * x1 - x2 - x1 * x3,
                     x1 * x2 - params.b * x3], axis=-1)


@dataclass(frozen=True)
class SectionChart:
    """Affine chart from the plane rectangle onto ``[-1, 1]^2``.

    A plane point ``(x1, x2)`` has normalized coordinates
    ``(u, v) = basis^{-1} ((x1, x2) - center)``.  The columns of ``basis``
    are the rectangle half-axes; the ``u = 0`` line approximates the trace of
    the origin's stable manifold.
    """

    params: LorenzParams = CLASSICAL
    center: tuple[float, float] = (0.0, 0.0)
    basis: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 0.0), (0.0, 1.0))
    direction: int = -1
    n_samples: int = 0
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if abs(np.linalg.det(self.basis_matrix)) < 1e-14:
            raise ValueError("chart basis must be invertible")

    @property
    def plane(self) -> float:
        return self.params.plane

    @property
    def basis_matrix(self) -> np.ndarray:
        return np.array(self.basis, dtype=float)

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.linalg.inv(self.basis_matrix)

    @property
    def center_array(self) -> np.ndarray:
        return np.array(self.center, dtype=float)

    def to_point(self, uv) -> np.ndarray:
        """Normalized coordinates to a physical point on the plane."""
        uv = np.asarray(uv, dtype=float)
        xy = self.center_array + uv @ self.basis_matrix.T
        z = np.full(uv.shape[:-1] + (1,), self.plane)
        return np.concatenate([xy, z], axis=-1)

    def to_uv(self, p) -> np.ndarray:
        """Physical point (its ``x1, x2`` part) to normalized coordinates."""
        if isinstance(p, DDPoint):
            w = (p.hi[:2] - self.center_array) + p.lo[:2]
        else:
            w = np.asarray(p, dtype=float)[..., :2] - self.center_array
        return w @ self.inverse_matrix.T

    def plane_offset(self, duv) -> np.ndarray:
        """Physical in-plane displacement for a normalized displacement."""
        return np.asarray(duv, dtype=float) @ self.basis_matrix.T

    def contains(self, uv, tol: float = 0.0) -> bool:
        uv = np.asarray(uv, dtype=float)
        return bool(np.all(np.abs(uv) <= 1.0 + tol))

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "center": [float(x) for x in self.center],
                "basis": [[float(x) for x in r] for r in self.basis], "direction": self.direction,
                "n_samples": self.n_samples, "metadata": self.metadata}

    @classmethod
    def from_dict(cls, d: dict) -> "SectionChart":
        return cls(params=LorenzParams(**d["params"]), center=tuple(d["center"]),
                   basis=tuple(tuple(r) for r in d["basis"]),
                   direction=int(d.get("direction", -1)), n_samples=int(d.get("n_samples", 0)),
                   metadata=d.get("metadata", {}))


@dataclass(frozen=True)
class Hit:
    """A section crossing.

    ``time`` is the flight time as a float; ``time_exact`` keeps the full
    double-double value as a Fraction.
    """

    point: Point3
    uv: np.ndarray
    time: float
    time_exact: Fraction
    steps: int = 0
    grazing: int = 0


@dataclass(frozen=True)
class SegmentEnd:
    """Result of :func:`advance`: either a hit or the state at the end time."""

    hit: Hit | None
    point: Point3
    elapsed: Fraction


_NO_RECT = (np.zeros(2), np.zeros((2, 2)))  # every plane point counts as inside


def _raise_status(status: int, what: str):
    if status == _dopri.ST_ESCAPE:
        raise Escape(f"{what}: trajectory left the trapping ball")
    if status == _dopri.ST_STEPFAIL:
        raise StepFailure(f"{what}: step size underflow")


def _run(p: Point3, t_end, params: LorenzParams, cfg: IntegratorConfig, *,
         event: bool, chart: SectionChart | None, direction: int = 1):
    """Dispatch to the configured kernel.

    Returns ``(status, elapsed Fraction, point, steps, grazing)``.
    """
    if chart is not None:
        center, rect_inv = chart.center_array, chart.inverse_matrix
        plane = chart.plane
    else:
        center, rect_inv = _NO_RECT
        plane = params.plane
    if cfg.method == "dopri5":
        y0 = np.ascontiguousarray(as_double(p), dtype=float)
        out = _dopri.dopri_run(y0, float(t_end), direction, params.sigma, params.r, params.b,
                               plane, event, center, rect_inv, cfg.rtol, cfg.atol,
                               cfg.max_step, cfg.trapping_radius, False)
        status, t, y, steps, graz = out[0], out[1], out[2], out[3], out[4]
        return status, Fraction(t), y, steps, graz
    dd = as_dd(p)
    th, tl = split_time(t_end)
    out = _taylor.taylor_run(np.ascontiguousarray(dd.hi), np.ascontiguousarray(dd.lo), th, tl,
                             direction, params.sigma, params.r, params.b, plane, event,
                             center, rect_inv, cfg.rtol, cfg.taylor_order, cfg.max_step,
                             cfg.trapping_radius)
    status, t_hi, t_lo, xh, xl, steps, graz = out
    return status, Fraction(t_hi) + Fraction(t_lo), DDPoint(xh, xl), steps, graz


def integrate(p: Point3, t, cfg: IntegratorConfig = DEFAULT_CFG,
              params: LorenzParams = CLASSICAL, *, direction: int = 1) -> Point3:
    """Approximate the time-``t`` map of the Lorenz flow.

    Parameters
    ----------
    p : array_like or DDPoint
    t : float or Fraction
        Non-negative duration.
    direction : {1, -1}
        ``-1`` integrates backward in time.

    Returns
    -------
    ndarray or DDPoint
        A :class:`DDPoint` when ``cfg.method == "taylor-dd"``.
    """
    if t < 0:
        raise ValueError("integrate needs t >= 0")
    if t == 0:
        return as_dd(p) if cfg.method == "taylor-dd" else as_double(p).copy()
    status, _, y, _, _ = _run(p, t, params, cfg, event=False, chart=None, direction=direction)
    _raise_status(status, "integrate")
    return y


def _make_hit(chart: SectionChart, y, elapsed: Fraction, steps: int, graz: int) -> Hit:
    if isinstance(y, DDPoint):
        pt = DDPoint(y.hi.copy(), y.lo.copy())
    else:
        pt = np.asarray(y, dtype=float).copy()
    return Hit(pt, chart.to_uv(pt), float(elapsed), elapsed, steps, graz)


def advance(p: Point3, t_end, chart: SectionChart, cfg: IntegratorConfig = DEFAULT_CFG, *,
            direction: int = 1) -> SegmentEnd:
    """Flow until the first valid section crossing or until ``t_end``.

    A start point lying exactly on the plane is never reported as a crossing.
    """
    status, elapsed, y, steps, graz = _run(p, t_end, chart.params, cfg, event=True,
                                           chart=chart, direction=direction)
    _raise_status(status, "advance")
    if status == _dopri.ST_HIT:
        hit = _make_hit(chart, y, elapsed, steps, graz)
        return SegmentEnd(hit, hit.point, elapsed)
    return SegmentEnd(None, y, elapsed)


def first_hit(p: Point3, chart: SectionChart, cfg: IntegratorConfig = DEFAULT_CFG, *,
              horizon: float | None = None, direction: int = 1) -> Hit:
    """First valid section crossing within ``horizon`` (default max flight time)."""
    horizon = cfg.max_flight_time if horizon is None else horizon
    res = advance(p, horizon, chart, cfg, direction=direction)
    if res.hit is None:
        raise NoReturn(f"no section crossing within {horizon}")
    return res.hit


def flow_to_section(p: Point3, chart: SectionChart,
                    cfg: IntegratorConfig = DEFAULT_CFG) -> tuple[np.ndarray, float]:
    """First return to the section.

    Returns
    -------
    hit : ndarray, shape (2,)
        Normalized section coordinates.
    flight_time : float
    """
    h = first_hit(p, chart, cfg)
    return h.uv, h.time


def return_map(uv, chart: SectionChart, cfg: IntegratorConfig = DEFAULT_CFG) -> tuple[np.ndarray, float]:
    """Unperturbed return map ``F`` and return time ``R`` at a section point."""
    h = first_hit(chart.to_point(uv), chart, cfg)
    return h.uv, h.time


@dataclass(frozen=True)
class VariationalHit:
    """A section crossing together with the fundamental matrix of the flow."""

    hit: Hit
    phi: np.ndarray

    def section_differential(self, chart: SectionChart) -> np.ndarray:
        """Differential of the hitting map in normalized coordinates.

        Uses the transversal projection ``(I - f e3^T / f3) Phi`` restricted to
        plane directions.
        """
        p = as_double(self.hit.point)
        f = lorenz_rhs(p, chart.params)
        proj = self.phi - np.outer(f, self.phi[2]) / f[2]
        b = chart.basis_matrix
        tang = np.zeros((3, 2))
        tang[:2] = b
        return chart.inverse_matrix @ (proj @ tang)[:2]


def variational_hit(p, chart: SectionChart, cfg: IntegratorConfig = DEFAULT_CFG, *,
                    horizon: float | None = None) -> VariationalHit:
    """First section crossing with the variational equations (DOPRI only)."""
    horizon = cfg.max_flight_time if horizon is None else horizon
    y0 = np.zeros(12)
    y0[:3] = as_double(p)
    y0[3:] = np.eye(3).ravel()
    prm = chart.params
    out = _dopri.dopri_run(y0, float(horizon), 1, prm.sigma, prm.r, prm.b, chart.plane, True,
                           chart.center_array, chart.inverse_matrix, cfg.rtol, cfg.atol,
                           cfg.max_step, cfg.trapping_radius, False)
    status, t, y = out[0], out[1], out[2]
    _raise_status(status, "variational_hit")
    if status != _dopri.ST_HIT:
        raise NoReturn(f"no section crossing within {horizon}")
    hit = _make_hit(chart, y[:3], Fraction(t), out[3], out[4])
    return VariationalHit(hit, y[3:].reshape(3, 3).copy())


def variational_integrate(p, t: float, cfg: IntegratorConfig = DEFAULT_CFG,
                          params: LorenzParams = CLASSICAL) -> tuple[np.ndarray, np.ndarray]:
    """Time-``t`` map and its Jacobian (DOPRI with variational equations)."""
    y0 = np.zeros(12)
    y0[:3] = as_double(p)
    y0[3:] = np.eye(3).ravel()
    c, m = _NO_RECT
    out = _dopri.dopri_run(y0, float(t), 1, params.sigma, params.r, params.b, params.plane,
                           False, c, m, cfg.rtol, cfg.atol, cfg.max_step, cfg.trapping_radius,
                           False)
    _raise_status(out[0], "variational_integrate")
    return out[2][:3].copy(), out[2][3:].reshape(3, 3).copy()


@dataclass(frozen=True)
class DenseArc:
    """Dense output of one DOPRI flow arc, parameterized by elapsed time."""

    t0: np.ndarray
    h: np.ndarray
    coef: np.ndarray
    duration: float
    hit: Hit | None

    def __call__(self, times) -> np.ndarray:
        tq = np.atleast_1d(np.asarray(times, dtype=float))
        order = np.argsort(tq, kind="stable")
        out = np.empty((tq.size, 3))
        buf = np.empty((tq.size, self.coef.shape[2]))
        _dopri.dense_eval(self.t0, self.h, self.coef, np.ascontiguousarray(tq[order]), buf)
        out[order] = buf[:, :3]
        return out

    def quadrature_nodes(self, max_node_step: float = 0.01) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre nodes and weights covering ``[0, duration]``.

        Each accepted step is split into panels no longer than
        ``max_node_step`` with four nodes each.
        """
        gx, gw = np.polynomial.legendre.leggauss(4)
        edges = [0.0]
        for a, h in zip(self.t0, self.h):
            b = min(a + h, self.duration)
            if b <= a:
                continue
            n = max(1, int(math.ceil((b - a) / max_node_step)))
            edges.extend(list(np.linspace(a, b, n + 1)[1:]))
        edges = np.array(edges)
        lo, hi = edges[:-1], edges[1:]
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        nodes = (mid[:, None] + half[:, None] * gx[None, :]).ravel()
        weights = (half[:, None] * gw[None, :]).ravel()
        return nodes, weights


def dense_arc(p, t_end: float, chart: SectionChart, cfg: IntegratorConfig = DEFAULT_CFG, *,
              stop_at_section: bool = True) -> DenseArc:
    """Integrate with DOPRI and keep the dense output of every accepted step."""
    prm = chart.params
    out = _dopri.dopri_run(np.ascontiguousarray(as_double(p), dtype=float), float(t_end), 1,
                           prm.sigma, prm.r, prm.b, chart.plane, stop_at_section,
                           chart.center_array, chart.inverse_matrix, cfg.rtol, cfg.atol,
                           min(cfg.max_step, 0.01), cfg.trapping_radius, True)
    status, t, y = out[0], out[1], out[2]
    _raise_status(status, "dense_arc")
    hit = _make_hit(chart, y, Fraction(t), out[3], out[4]) if status == _dopri.ST_HIT else None
    return DenseArc(out[5].copy(), out[6].copy(), out[7].copy(), float(t), hit)


# --------------------------------------------------------------------------
# chart calibration

def _collect_crossings(params: LorenzParams, n: int, cfg: IntegratorConfig, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    p = np.array([1.0, 1.0, params.plane]) + rng.normal(scale=0.1, size=3)
    p = integrate(p, 50.0, cfg, params)
    pts = np.empty((n, 2))
    c, m = _NO_RECT
    for i in range(n):
        out = _dopri.dopri_run(np.ascontiguousarray(p), cfg.max_flight_time, 1, params.sigma,
                               params.r, params.b, params.plane, True, c, m, cfg.rtol,
                               cfg.atol, cfg.max_step, cfg.trapping_radius, False)
        if out[0] != _dopri.ST_HIT:
            _raise_status(out[0], "calibration")
            raise NoReturn("calibration orbit failed to return")
        p = out[2].copy()
        pts[i] = p[:2]
    return pts


def _branch(params: LorenzParams, xy, cfg: IntegratorConfig, horizon: float = 15.0) -> float:
    """Sign of ``x1`` when ``|x1|`` first exceeds 3 along the orbit of ``xy``.

    Near the origin this identifies the side of the stable-manifold trace.
    """
    p = np.array([xy[0], xy[1], params.plane])
    c, m = _NO_RECT
    out = _dopri.dopri_run(p, horizon, 1, params.sigma, params.r, params.b, params.plane,
                           False, c, m, cfg.rtol, cfg.atol, cfg.max_step,
                           cfg.trapping_radius, True)
    t0, h, coef = out[5], out[6], out[7]
    ends = coef[:, 1, 0] + coef[:, 0, 0]
    idx = np.nonzero(np.abs(ends) > 3.0)[0]
    if idx.size == 0:
        return 0.0
    return float(np.sign(ends[idx[0]]))


def _singular_direction(params: LorenzParams, cfg: IntegratorConfig, radius: float) -> np.ndarray:
    """Direction of the stable-manifold trace through the plane origin.

    Scans a circle of the given radius for switches of the branch side and
    refines each switch by bisection in angle.
    """
    angles = np.linspace(0.0, 2 * np.pi, 73)
    sides = [_branch(params, radius * np.array([np.cos(a), np.sin(a)]), cfg) for a in angles]
    roots = []
    for a0, a1, s0, s1 in zip(angles[:-1], angles[1:], sides[:-1], sides[1:]):
        if s0 * s1 < 0:
            lo, hi = a0, a1
            for _ in range(50):
                mid = 0.5 * (lo + hi)
                sm = _branch(params, radius * np.array([np.cos(mid), np.sin(mid)]), cfg)
                if sm == s0:
                    lo = mid
                else:
                    hi = mid
            roots.append(0.5 * (lo + hi))
    if len(roots) != 2:
        raise NoReturn(f"expected two stable-manifold crossings on the circle, found {len(roots)}")
    p0 = np.array([np.cos(roots[0]), np.sin(roots[0])])
    p1 = np.array([np.cos(roots[1]), np.sin(roots[1])])
    g = p0 - p1
    g /= np.linalg.norm(g)
    if g[0] > 0:
        g = -g
    return g


def singular_u(v: float, chart: SectionChart, cfg: IntegratorConfig = DEFAULT_CFG, *,
               bracket: float = 0.05, iters: int = 45) -> float:
    """Chart ``u`` of the singular line at height ``v``, by bisection on the branch side.

    The chart's ``u = 0`` axis is the chord of the stable-manifold trace, so
    away from ``v = 0`` the trace sits slightly off the axis.
    """
    params = chart.params

    def side(u):
        return _branch(params, chart.to_point([u, v])[:2], cfg)

    lo, hi = -bracket, bracket
    s_lo = side(lo)
    if s_lo == 0 or s_lo * side(hi) >= 0:
        raise NoReturn(f"no branch switch within |u| <= {bracket} at v = {v}")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if side(mid) == s_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def calibrate_chart(params: LorenzParams = CLASSICAL, cfg: IntegratorConfig = DEFAULT_CFG,
                    n_crossings: int = 100_000, seed: int = 0, inflate: float = 0.05,
                    radius: float = 2.0) -> SectionChart:
    """Build the section chart from sampled attractor crossings.

    The ``v`` axis follows the stable-manifold trace through ``(0, 0, r-1)``
    and ``u > 0`` is the side whose points next cross at ``x1 > 0``.  The
    rectangle is the symmetric bounding box of ``n_crossings`` crossings in
    these axes, inflated by ``inflate``.
    """
    g = _singular_direction(params, cfg, radius)
    n = np.array([-g[1], g[0]])
    if _branch(params, 0.5 * n, cfg) < 0:
        n = -n
    pts = _collect_crossings(params, n_crossings, cfg, seed)
    a_u = (1.0 + inflate) * np.max(np.abs(pts @ n))
    a_v = (1.0 + inflate) * np.max(np.abs(pts @ g))
    basis = ((a_u * n[0], a_v * g[0]), (a_u * n[1], a_v * g[1]))
    meta = {"seed": seed, "inflate": inflate, "radius": radius,
            "max_x1x2": float(np.max(pts[:, 0] * pts[:, 1]))}
    return SectionChart(params, (0.0, 0.0), basis, -1, n_crossings, meta)


_CHART_CACHE: dict = {}


def classical_chart() -> SectionChart:
    """Pre-calibrated chart for the classical parameters (shipped data)."""
    if "classical" not in _CHART_CACHE:
        text = resources.files("impulsive_lorenz").joinpath("data/chart_classical.json").read_text()
        _CHART_CACHE["classical"] = SectionChart.from_dict(json.loads(text))
    return _CHART_CACHE["classical"]


def chart_for(params: LorenzParams, cfg: IntegratorConfig = DEFAULT_CFG,
              n_crossings: int = 100_000, seed: int = 0) -> SectionChart:
    """Chart for ``params``: the shipped one for classical values, else calibrated."""
    if params == CLASSICAL:
        return classical_chart()
    key = (params, n_crossings, seed)
    if key not in _CHART_CACHE:
        _CHART_CACHE[key] = calibrate_chart(params, cfg, n_crossings, seed)
    return _CHART_CACHE[key]
