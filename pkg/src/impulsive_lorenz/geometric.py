"""Closed-form geometric Lorenz backend.

The section is the square ``[-1, 1]^2`` with coordinates ``(u, v)``.  The
return map is the skew product

    F(u, v) = (f1d(u), eta * v * |u|**beta + delta0 * sign(u))

with ``f1d(u) = sign(u) * (c * |u|**alpha - 1)`` and the return time is the
logarithmic roof ``R(u, v) = r0 - log|u| / lambda1``.  The flow is the
suspension of ``F`` under ``R``.  Heights are tracked with
:class:`fractions.Fraction` so the semigroup law holds exactly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Callable, Union

import numpy as np

from .errors import SingularInput

Duration = Union[float, Fraction]

#: Floor applied to ``|u|`` before taking logarithms or powers.
U_FLOOR = 1e-300


@dataclass(frozen=True)
class GeoParams:
    """Parameters of the geometric Lorenz map.

    Construction validates the admissible region.  Use :meth:`unchecked` to
    build deliberately invalid parameter sets (failure fixtures).
    """

    alpha: float = 0.75
    c: float = 2.0
    eta: float = 0.3
    beta: float = 1.5
    delta0: float = 0.5
    lambda1: float = 1.0
    r0: float = 1.0

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise ValueError("invalid GeoParams: " + "; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        if not (math.sqrt(2) / 2 < self.alpha < 1):
            out.append("alpha must lie in (sqrt(2)/2, 1)")
        if not self.c * self.alpha > math.sqrt(2):
            out.append("c*alpha must exceed sqrt(2)")
        if not self.eta + self.delta0 <= 1:
            out.append("eta + delta0 must be <= 1")
        if not 0 < self.eta < 1:
            out.append("eta must lie in (0, 1)")
        if not self.r0 > 0:
            out.append("r0 must be positive")
        if not self.lambda1 > 0:
            out.append("lambda1 must be positive")
        if not self.beta > 0:
            out.append("beta must be positive")
        return out

    @classmethod
    def unchecked(cls, **kwargs) -> "GeoParams":
        """Build parameters without validation."""
        obj = object.__new__(cls)
        values = {**_defaults(), **kwargs}
        for key, val in values.items():
            object.__setattr__(obj, key, float(val))
        return obj

    def to_dict(self) -> dict:
        return asdict(self)


def _defaults() -> dict:
    return {"alpha": 0.75, "c": 2.0, "eta": 0.3, "beta": 1.5, "delta0": 0.5,
            "lambda1": 1.0, "r0": 1.0}


DEFAULT_GEO = GeoParams()


def _as_points(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.shape[-1] != 2:
        raise ValueError("section points need a trailing axis of length 2")
    return arr


def _check_nonsingular(u: np.ndarray) -> None:
    if np.any(u == 0):
        raise SingularInput("u = 0 lies on the singular line")


def f1d(u, geo: GeoParams = DEFAULT_GEO):
    """One-dimensional quotient map ``sign(u) * (c |u|^alpha - 1)``.

    Parameters
    ----------
    u : float or array_like
        Points of ``[-1, 1] \\ {0}``.
    geo : GeoParams

    Returns
    -------
    float or ndarray
    """
    u = np.asarray(u, dtype=float)
    _check_nonsingular(u)
    au = np.maximum(np.abs(u), U_FLOOR)
    out = np.sign(u) * (geo.c * au ** geo.alpha - 1.0)
    return out[()] if out.ndim == 0 else out


def f1d_prime(u, geo: GeoParams = DEFAULT_GEO):
    """Derivative ``c * alpha * |u|^(alpha - 1)`` of :func:`f1d`."""
    u = np.asarray(u, dtype=float)
    _check_nonsingular(u)
    au = np.maximum(np.abs(u), U_FLOOR)
    out = geo.c * geo.alpha * au ** (geo.alpha - 1.0)
    return out[()] if out.ndim == 0 else out


def f1d_inverse(x, branch: int, geo: GeoParams = DEFAULT_GEO):
    """Inverse branch of :func:`f1d`; ``branch`` is +1 (u > 0) or -1 (u < 0)."""
    x = np.asarray(x, dtype=float)
    if branch > 0:
        out = ((x + 1.0) / geo.c) ** (1.0 / geo.alpha)
    else:
        out = -(((1.0 - x) / geo.c) ** (1.0 / geo.alpha))
    return out[()] if out.ndim == 0 else out


def geo_F(p, geo: GeoParams = DEFAULT_GEO) -> np.ndarray:
    """Geometric return map ``F`` on the square.

    Parameters
    ----------
    p : array_like, shape (..., 2)
        Section points with ``u != 0``.

    Returns
    -------
    ndarray, shape (..., 2)
    """
    z = _as_points(p)
    u, v = z[..., 0], z[..., 1]
    _check_nonsingular(u)
    s = np.sign(u)
    au = np.maximum(np.abs(u), U_FLOOR)
    out = np.empty_like(z)
    out[..., 0] = s * (geo.c * au ** geo.alpha - 1.0)
    out[..., 1] = geo.eta * v * au ** geo.beta + geo.delta0 * s
    return out


def geo_F_jacobian(p, geo: GeoParams = DEFAULT_GEO) -> np.ndarray:
    """Jacobian ``[[G_x, G_y], [H_x, H_y]]`` of :func:`geo_F`, shape (..., 2, 2)."""
    z = _as_points(p)
    u, v = z[..., 0], z[..., 1]
    _check_nonsingular(u)
    s = np.sign(u)
    au = np.maximum(np.abs(u), U_FLOOR)
    jac = np.zeros(z.shape[:-1] + (2, 2))
    jac[..., 0, 0] = geo.c * geo.alpha * au ** (geo.alpha - 1.0)
    jac[..., 1, 0] = geo.eta * geo.beta * v * s * au ** (geo.beta - 1.0)
    jac[..., 1, 1] = geo.eta * au ** geo.beta
    return jac


def geo_F_inverse(p, branch: int, geo: GeoParams = DEFAULT_GEO) -> np.ndarray:
    """Inverse of :func:`geo_F` restricted to the half ``sign(u) = branch``."""
    z = _as_points(p)
    u = f1d_inverse(z[..., 0], branch, geo)
    au = np.maximum(np.abs(u), U_FLOOR)
    v = (z[..., 1] - geo.delta0 * branch) / (geo.eta * au ** geo.beta)
    return np.stack([u, v], axis=-1)


def geo_R(p, geo: GeoParams = DEFAULT_GEO):
    """Logarithmic roof ``r0 - log|u| / lambda1``."""
    z = _as_points(p)
    u = z[..., 0]
    _check_nonsingular(u)
    au = np.maximum(np.abs(u), U_FLOOR)
    out = geo.r0 - np.log(au) / geo.lambda1
    return out[()] if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class SuspensionState:
    """A point ``(base, height)`` of the suspension with ``0 <= height < roof(base)``."""

    base: tuple[float, float]
    height: Duration = 0

    @property
    def u(self) -> float:
        return self.base[0]

    @property
    def v(self) -> float:
        return self.base[1]


def geo_flow(state: SuspensionState, t: Duration, geo: GeoParams = DEFAULT_GEO, *,
             base_map: Callable[[np.ndarray], np.ndarray] | None = None,
             restart_height: Duration = 0) -> SuspensionState:
    """Advance a suspension state by time ``t``.

    Heights are accumulated as exact rationals.  Each time the height reaches
    the roof, the roof is subtracted, ``restart_height`` is added and the base
    point is replaced by its image under ``base_map`` (default :func:`geo_F`).
    With the defaults this is the plain suspension flow.

    Parameters
    ----------
    state : SuspensionState
    t : float or Fraction
        Non-negative duration.  Pass a :class:`~fractions.Fraction` (for
        example ``Fraction(a) + Fraction(b)``) to keep sums exact.
    base_map : callable, optional
        Map applied to the base point at each roof crossing.
    restart_height : float or Fraction
        Height at which the state re-enters after a roof crossing.

    Returns
    -------
    SuspensionState
        The height is a :class:`~fractions.Fraction`.
    """
    if t < 0:
        raise ValueError("geo_flow needs t >= 0")
    step = base_map if base_map is not None else (lambda z: geo_F(z, geo))
    base = np.array(state.base, dtype=float)
    height = Fraction(state.height) + Fraction(t)
    restart = Fraction(restart_height)
    roof = Fraction(float(geo_R(base, geo)))
    while height >= roof:
        height = height - roof + restart
        base = np.asarray(step(base), dtype=float)
        if base[0] == 0:
            raise SingularInput("base point landed on the singular line")
        roof = Fraction(float(geo_R(base, geo)))
    return SuspensionState((float(base[0]), float(base[1])), height)
