"""Metric entropy of the section map and of the impulsive flow.

The section maps here have a single positive Lyapunov exponent, so the
entropy equals the average log-stretch of a tangent vector aligned with the
unstable direction.  Alignment is the power method: a vector pushed forward a
few dozen times under the differential converges to the unstable direction.
The flow entropy follows from the map entropy by dividing by the mean return
time.

:func:`quotient_entropy_oracle` is an independent one-dimensional estimator
for the unperturbed geometric map; it never touches the two-dimensional
differential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConeEscape, DegenerateRoof, SingularInput
from .geometric import DEFAULT_GEO, GeoParams
from .measures import EmpiricalMeasure, OrbitStatistics
from .parallel import rng_for
from .poincare import SectionMap

DEFAULT_ALIGN = 50


def in_cone(w, half_angle_deg: float = 45.0) -> np.ndarray:
    """Whether vectors lie in the cone of the given half-angle around the u-axis."""
    w = np.asarray(w, dtype=float)
    return np.abs(w[..., 1]) <= math.tan(math.radians(half_angle_deg)) * np.abs(w[..., 0])


@dataclass
class TangentFrame:
    """Section point with a unit tangent vector and accumulated log-expansion."""

    base: np.ndarray
    vector: np.ndarray
    log_sum: float = 0.0
    steps: int = 0

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=float)
        v = np.asarray(self.vector, dtype=float)
        self.vector = v / np.hypot(v[0], v[1])

    @property
    def exponent(self) -> float:
        return self.log_sum / self.steps if self.steps else float("nan")


def tangent_step(frame: TangentFrame, smap: SectionMap, *, cone_half_angle: float | None = None
                 ) -> tuple[TangentFrame, float]:
    """Push ``frame`` one step forward.

    Returns the new frame and the stretch factor of the vector.  When
    ``cone_half_angle`` is given and the frame starts inside that cone, an
    image outside it raises :class:`ConeEscape`.
    """
    z = frame.base.reshape(1, 2)
    if smap.singular(z)[0]:
        raise SingularInput("tangent frame based in the guard band")
    J = smap.jacobian(z)[0]
    w = J @ frame.vector
    stretch = float(np.hypot(w[0], w[1]))
    if cone_half_angle is not None and in_cone(frame.vector, cone_half_angle) \
            and not in_cone(w, cone_half_angle):
        raise ConeEscape("tangent vector left the unstable cone")
    new = TangentFrame(smap.apply(z)[0], w / stretch, frame.log_sum + math.log(stretch),
                       frame.steps + 1)
    return new, stretch


def align(frame: TangentFrame, smap: SectionMap, steps: int = DEFAULT_ALIGN) -> TangentFrame:
    """Preparatory pushes; the log-expansion is reset afterwards."""
    for _ in range(steps):
        frame, _ = tangent_step(frame, smap)
    return TangentFrame(frame.base, frame.vector)


def log_stretch_orbits(smap: SectionMap, Z0, n: int, *, align_steps: int = DEFAULT_ALIGN,
                       cone_half_angle: float = 45.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-orbit sums of log-stretches over ``n`` steps after alignment.

    Returns ``(log_sums, counts, cone_escapes)``; orbits entering the guard
    band stop accumulating.
    """
    Z = np.array(Z0, dtype=float).reshape(-1, 2)
    N = Z.shape[0]
    W = np.tile([1.0, 0.0], (N, 1))
    alive = np.ones(N, dtype=bool)
    logs = np.zeros(N)
    counts = np.zeros(N, dtype=np.int64)
    esc = np.zeros(N, dtype=np.int64)
    tan = math.tan(math.radians(cone_half_angle))
    for k in range(align_steps + n):
        alive &= ~smap.singular(Z) & np.all(np.isfinite(Z), axis=1)
        Zc = np.where(alive[:, None], Z, 0.5)
        J = smap.jacobian(Zc)
        w0 = J[:, 0, 0] * W[:, 0] + J[:, 0, 1] * W[:, 1]
        w1 = J[:, 1, 0] * W[:, 0] + J[:, 1, 1] * W[:, 1]
        norm = np.hypot(w0, w1)
        W = np.stack([w0 / norm, w1 / norm], axis=1)
        if k >= align_steps:
            logs += np.where(alive, np.log(norm), 0.0)
            counts += alive
            esc += alive & (np.abs(W[:, 1]) > tan * np.abs(W[:, 0]))
        Z = smap.apply(Zc)
    return logs, counts, esc


def entropy_map(mu: EmpiricalMeasure, smap: SectionMap, n: int, *, max_orbits: int = 2000,
                align_steps: int = DEFAULT_ALIGN) -> tuple[float, float]:
    """Entropy of the section map from log-stretches along orbits started at samples of ``mu``.

    Up to ``max_orbits`` samples (evenly spaced through the sample list) start
    orbits of length ``n``.  Returns ``(h_map, stderr)`` with the standard
    error taken across orbits.
    """
    idx = np.linspace(0, mu.size - 1, min(max_orbits, mu.size)).astype(int)
    Z = mu.points[idx]
    Z = Z[~smap.singular(Z)]
    logs, counts, _ = log_stretch_orbits(smap, Z, n, align_steps=align_steps)
    ok = counts > 0
    per = logs[ok] / counts[ok]
    h = float(logs[ok].sum() / counts[ok].sum())
    se = float(per.std(ddof=1) / math.sqrt(per.size)) if per.size > 1 else float("nan")
    return h, se


@dataclass(frozen=True)
class QuotientOracle:
    """One-dimensional estimates for the unperturbed geometric map."""

    h: float
    h_stderr: float
    mean_roof: float
    mean_roof_stderr: float
    n: int


def quotient_entropy_oracle(geo: GeoParams = DEFAULT_GEO, n: int = 100_000, seed: int = 0, *,
                            orbits: int = 200, burn_in: int = 1000) -> QuotientOracle:
    """Birkhoff averages of ``log|f'|`` and of the roof along 1-D orbits.

    ``f(u) = sign(u)(c|u|^alpha - 1)`` is iterated directly with its own
    formula; the averages of ``log(c alpha) + (alpha - 1) log|u|`` give the
    entropy and ``r0 - log|u| / lambda1`` the mean roof.  Standard errors
    come from the spread across ``orbits`` independent orbits.
    """
    u = np.array([rng_for(seed, i).uniform(-1, 1) for i in range(orbits)])
    logc = math.log(geo.c * geo.alpha)
    s_log = np.zeros(orbits)
    s_roof = np.zeros(orbits)
    for k in range(burn_in + n):
        au = np.abs(u)
        au = np.where(au < 1e-300, 1e-300, au)
        if k >= burn_in:
            lu = np.log(au)
            s_log += logc + (geo.alpha - 1) * lu
            s_roof += geo.r0 - lu / geo.lambda1
        u = np.where(u >= 0, 1.0, -1.0) * (geo.c * au ** geo.alpha - 1.0)
    h_per = s_log / n
    r_per = s_roof / n
    return QuotientOracle(float(h_per.mean()), float(h_per.std(ddof=1) / math.sqrt(orbits)),
                          float(r_per.mean()), float(r_per.std(ddof=1) / math.sqrt(orbits)),
                          n * orbits)


@dataclass(frozen=True)
class EntropyReport:
    """Map entropy, mean return time and flow entropy for one parameter value."""

    epsilon: float
    h_map: float
    h_map_stderr: float
    mean_roof: float
    mean_roof_stderr: float
    h_flow: float
    h_flow_stderr: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "h_map": self.h_map, "h_map_stderr": self.h_map_stderr,
                "mean_roof": self.mean_roof, "mean_roof_stderr": self.mean_roof_stderr,
                "h_flow": self.h_flow, "h_flow_stderr": self.h_flow_stderr, **self.extra}


def entropy_flow(h_map: float, h_map_stderr: float, mean_roof: float, mean_roof_stderr: float,
                 epsilon: float = 0.0, **extra) -> EntropyReport:
    """Flow entropy ``h_map / mean_roof`` with errors combined in quadrature.

    Raises
    ------
    DegenerateRoof
        If the mean roof is not positive.
    """
    if not mean_roof > 0:
        raise DegenerateRoof(f"mean roof {mean_roof} is not positive")
    h_flow = h_map / mean_roof
    rel = math.hypot(h_map_stderr / h_map if h_map else 0.0, mean_roof_stderr / mean_roof)
    return EntropyReport(epsilon, h_map, h_map_stderr, mean_roof, mean_roof_stderr, h_flow,
                         abs(h_flow) * rel, dict(extra))


def entropy_from_statistics(st: OrbitStatistics, epsilon: float = 0.0) -> EntropyReport:
    """Entropy report from orbit statistics gathered with tangent tracking.

    Map entropy and mean roof come from the same orbits.
    """
    h, hse = st.h_map()
    r, rse = st.mean_roof()
    return entropy_flow(h, hse, r, rse, epsilon, cone_escape_rate=st.cone_escape_rate())
