"""Poincaré machinery of the impulsive semiflow.

Points of ``Sigma' = phi(Sigma)`` lie a fixed time ``s0`` below the section.
The sliding map ``psi`` flows them back to the section, which conjugates the
impulsive return map ``F_Y = phi o F o psi`` on ``Sigma'`` to the in-section
map ``F~_Y = psi o phi o F = h_eps o F``.  The return time of ``F_Y`` is
``R_Y = R o psi + t_minus = R o psi - s0``.

Both backends also expose a vectorized section-map interface used by the
measure, entropy and condition modules:

``step(Z)``      images and return times ``R_Y`` of an ``(N, 2)`` batch
``apply(Z)``     images only
``roof(Z)``      ``R_Y`` in section coordinates
``jacobian(Z)``  ``(N, 2, 2)`` differentials
``singular(Z)``  guard-band mask ``|u| < 1e-12``
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from . import flow_core as fc
from .errors import NoReturn, NotInFlowBox, SingularInput
from .geometric import (DEFAULT_GEO, GeoParams, SuspensionState, geo_F, geo_F_inverse,
                        geo_F_jacobian, geo_R)
from .impulse import (GeometricImpulsiveSystem, ImpulseSpec, OdeImpulsiveSystem, h_eps,
                      h_eps_inverse, h_eps_jacobian)

GUARD = 1e-12


def matmul2(A, B) -> np.ndarray:
    """Batched 2x2 product, much faster than ``@`` on stacks of tiny matrices."""
    out = np.empty(np.broadcast_shapes(A.shape, B.shape))
    for i in range(2):
        for j in range(2):
            out[..., i, j] = A[..., i, 0] * B[..., 0, j] + A[..., i, 1] * B[..., 1, j]
    return out


class SectionMap:
    """Interface of a piecewise-smooth map of the square with a roof."""

    guard: float = GUARD
    name: str = "section-map"

    def singular(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        return ~(np.abs(Z[..., 0]) >= self.guard)

    def step(self, Z) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def apply(self, Z) -> np.ndarray:
        return self.step(Z)[0]

    def roof(self, Z) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, Z) -> np.ndarray:
        raise NotImplementedError

    def _require_regular(self, Z):
        if np.any(self.singular(Z)):
            raise SingularInput("point within the guard band of the singular line")


class GeometricPoincare(SectionMap):
    """Poincaré system of the geometric backend.

    Section points are ``(u, v)`` arrays; points of ``Sigma'`` are
    :class:`~impulsive_lorenz.geometric.SuspensionState` at height ``s0``.
    """

    backend = "geometric"

    def __init__(self, geo: GeoParams = DEFAULT_GEO, spec: ImpulseSpec = ImpulseSpec()):
        self.geo = geo
        self.spec = spec
        self.system = GeometricImpulsiveSystem(geo, spec)
        self.name = f"geometric[eps={spec.epsilon}]"

    # transit times and psi
    def t_minus(self, x: SuspensionState) -> float:
        h = float(x.height)
        if not (0 < h <= self.spec.t0):
            raise NotInFlowBox("state is not in the flow box below the section")
        return -h

    def t_plus(self, z) -> float:
        z = np.asarray(z, dtype=float)
        if np.any(np.abs(h_eps_inverse(z, self.spec)) > 1 + 1e-9):
            raise NotInFlowBox("point is not in psi(Sigma')")
        return self.spec.s0

    def psi(self, x: SuspensionState) -> np.ndarray:
        self.t_minus(x)
        return np.array(x.base, dtype=float)

    def psi_inv(self, z) -> SuspensionState:
        z = np.asarray(z, dtype=float)
        return SuspensionState((float(z[0]), float(z[1])), Fraction(self.t_plus(z)))

    # return maps
    def poincare_FY(self, x: SuspensionState) -> SuspensionState:
        """Impulsive return map on ``Sigma'``, evaluated by flowing the suspension."""
        z = self.psi(x)
        self._require_regular(z)
        return self.system.evaluate_Y(x, Fraction(float(geo_R(z, self.geo))) - Fraction(x.height))

    def tilde_FY(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        self._require_regular(z)
        return h_eps(geo_F(z, self.geo), self.spec)

    def roof_RY(self, x: SuspensionState) -> float:
        z = self.psi(x)
        self._require_regular(z)
        return float(geo_R(z, self.geo)) + self.t_minus(x)

    # vectorized interface
    def step(self, Z):
        Z = np.asarray(Z, dtype=float)
        self._require_regular(Z)
        return h_eps(geo_F(Z, self.geo), self.spec), geo_R(Z, self.geo) - self.spec.s0

    def roof(self, Z):
        Z = np.asarray(Z, dtype=float)
        self._require_regular(Z)
        return geo_R(Z, self.geo) - self.spec.s0

    def full_roof(self, Z):
        """Unperturbed roof ``R`` (height of the section above a base point)."""
        return geo_R(Z, self.geo)

    def unperturbed(self, Z):
        return geo_F(Z, self.geo)

    def jacobian(self, Z):
        Z = np.asarray(Z, dtype=float)
        self._require_regular(Z)
        FZ = geo_F(Z, self.geo)
        return matmul2(h_eps_jacobian(FZ, self.spec), geo_F_jacobian(Z, self.geo))

    def inverse(self, Z, branch: int):
        """Inverse branch of ``F~_Y`` onto the half ``sign(u) = branch``."""
        return geo_F_inverse(h_eps_inverse(Z, self.spec), branch, self.geo)


class OdePoincare(SectionMap):
    """Poincaré system of the Lorenz equations in the calibrated chart.

    ``t_minus`` and ``psi`` integrate backward to the section; the return map
    and return times come from genuine forward integration.
    """

    backend = "ode"

    def __init__(self, chart: fc.SectionChart | None = None, spec: ImpulseSpec = ImpulseSpec(),
                 cfg: fc.IntegratorConfig = fc.DEFAULT_CFG):
        self.chart = chart if chart is not None else fc.classical_chart()
        self.spec = spec
        self.cfg = cfg
        self.system = OdeImpulsiveSystem(self.chart, spec, cfg)
        self.name = f"ode[eps={spec.epsilon}]"

    def _back_hit(self, x) -> fc.Hit:
        try:
            return fc.first_hit(x, self.chart, self.cfg, horizon=self.spec.t0, direction=-1)
        except NoReturn as exc:
            raise NotInFlowBox("backward flow left the flow box before reaching the section") from exc

    def t_minus(self, x) -> float:
        return -self._back_hit(x).time

    def psi(self, x) -> np.ndarray:
        return self._back_hit(x).uv

    def psi_point(self, x):
        return self._back_hit(x).point

    def t_plus(self, z) -> float:
        z = np.asarray(z, dtype=float)
        if np.any(np.abs(h_eps_inverse(z, self.spec)) > 1 + 1e-9):
            raise NotInFlowBox("point is not in psi(Sigma')")
        return self.spec.s0

    def psi_inv(self, z):
        return fc.integrate(self.chart.to_point(z), self.t_plus(z), self.cfg, self.chart.params)

    def poincare_FY(self, x):
        """Flow ``x`` to the section and apply the impulse."""
        hit = fc.first_hit(x, self.chart, self.cfg)
        if abs(hit.uv[0]) < self.guard:
            raise SingularInput("return lands in the guard band")
        return self.system._impulse((hit, hit.uv))

    def roof_RY(self, x) -> float:
        """Flight time from ``x`` to the section."""
        return fc.first_hit(x, self.chart, self.cfg).time

    def return_map(self, z) -> tuple[np.ndarray, float]:
        """Unperturbed ``F(z)`` and ``R(z)``."""
        return fc.return_map(z, self.chart, self.cfg)

    def tilde_FY(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        self._require_regular(z)
        fz, _ = self.return_map(z)
        return h_eps(fz, self.spec)

    def step(self, Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        out = np.full_like(Z, np.nan)
        roofs = np.full(Z.shape[0], np.nan)
        for i, z in enumerate(Z):
            if not np.all(np.isfinite(z)) or abs(z[0]) < self.guard:
                continue
            try:
                fz, r = self.return_map(z)
                out[i] = h_eps(fz, self.spec)
                roofs[i] = r - self.spec.s0
            except NoReturn:
                continue
        return out, roofs

    def roof(self, Z):
        return self.step(Z)[1]

    def full_roof(self, Z):
        return self.roof(Z) + self.spec.s0

    def unperturbed(self, Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return np.array([self.return_map(z)[0] for z in Z])

    def jacobian(self, Z):
        """Differential of ``F~_Y`` from the variational equations."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        out = np.full((Z.shape[0], 2, 2), np.nan)
        for i, z in enumerate(Z):
            if abs(z[0]) < self.guard:
                continue
            vh = fc.variational_hit(self.chart.to_point(z), self.chart, self.cfg)
            dF = vh.section_differential(self.chart)
            out[i] = h_eps_jacobian(vh.hit.uv, self.spec) @ dF
        return out

    def jacobian_fd(self, z, step: float = 1e-6) -> np.ndarray:
        """Central-difference Jacobian of ``F~_Y`` (validator only)."""
        z = np.asarray(z, dtype=float)
        jac = np.empty((2, 2))
        for k in range(2):
            e = np.zeros(2)
            e[k] = step
            jac[:, k] = (self.tilde_FY(z + e) - self.tilde_FY(z - e)) / (2 * step)
        return jac


def make_poincare(backend: str, *, geo: GeoParams = DEFAULT_GEO, spec: ImpulseSpec = ImpulseSpec(),
                  chart: fc.SectionChart | None = None,
                  cfg: fc.IntegratorConfig = fc.DEFAULT_CFG) -> SectionMap:
    if backend == "geometric":
        return GeometricPoincare(geo, spec)
    if backend == "ode":
        return OdePoincare(chart, spec, cfg)
    raise ValueError(f"unknown backend {backend!r}")
