"""Multi-step pipelines shared by the command line and the acceptance suite."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .entropy import EntropyReport, entropy_from_statistics
from .errors import NumericalFailure
from .measures import (MeasureVector, OrbitStatistics, cluster_basins, distance_with_stderr,
                       orbit_statistics)
from .poincare import GeometricPoincare, SectionMap

SWEEP_SCHEMA = "stability-sweep/1"


@dataclass
class SweepPoint:
    """Statistics of one parameter value of a sweep."""

    epsilon: float
    vector: MeasureVector | None = None
    section_vector: MeasureVector | None = None
    entropy: EntropyReport | None = None
    per_seed: np.ndarray | None = None
    failed_seeds: np.ndarray | None = None
    distance: float = float("nan")
    distance_stderr: float = float("nan")
    section_distance: float = float("nan")
    section_distance_stderr: float = float("nan")
    entropy_gap: float = float("nan")
    entropy_gap_stderr: float = float("nan")
    error: str | None = None

    def row(self) -> dict:
        e = self.entropy
        return {"epsilon": self.epsilon, "distance": self.distance,
                "distance_stderr": self.distance_stderr,
                "section_distance": self.section_distance,
                "section_distance_stderr": self.section_distance_stderr,
                "h_map": e.h_map if e else None, "h_map_stderr": e.h_map_stderr if e else None,
                "mean_roof": e.mean_roof if e else None,
                "mean_roof_stderr": e.mean_roof_stderr if e else None,
                "h_flow": e.h_flow if e else None, "h_flow_stderr": e.h_flow_stderr if e else None,
                "entropy_gap": self.entropy_gap, "entropy_gap_stderr": self.entropy_gap_stderr,
                "excluded_seeds": None if self.failed_seeds is None else int(self.failed_seeds.sum()),
                "error": self.error}


@dataclass
class SweepResult:
    points: list
    settings: dict = field(default_factory=dict)

    def by_epsilon(self, eps: float) -> SweepPoint:
        for p in self.points:
            if p.epsilon == eps:
                return p
        raise KeyError(eps)

    def ordered(self) -> list:
        """Points with epsilon > 0 sorted from large to small."""
        return sorted((p for p in self.points if p.epsilon > 0), key=lambda p: -p.epsilon)

    def to_dict(self) -> dict:
        return {"schema": SWEEP_SCHEMA, "settings": self.settings,
                "rows": [_clean(p.row()) for p in self.points]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        rows = [p.row() for p in self.points]
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v)
                        for k, v in r.items()})
        return buf.getvalue()


def _clean(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def stability_sweep(make_map, epsilons, *, seeds: int, burn_in: int, n: int, rng_seed: int,
                    degree: int = 4, workers: int = 1, align_steps: int = 50,
                    cone_half_angle: float = 45.0) -> SweepResult:
    """Orbit statistics, weak* distances and entropies over a list of ``epsilon``.

    ``make_map(eps)`` builds the section map for one value.  Every value uses
    the same master seed, so the starting points are shared.  Distances are
    taken to the ``epsilon = 0`` point, through the suspension family when the
    map supports it (geometric backend) and through the section family always.
    Failures at one value are recorded and the sweep continues.
    """
    eps_list = [float(e) for e in epsilons]
    if 0.0 not in eps_list:
        raise ValueError("the epsilon list must include 0")
    points = []
    for eps in eps_list:
        pt = SweepPoint(eps)
        try:
            smap = make_map(eps)
            st = orbit_statistics(smap, seeds, burn_in, n, rng_seed, degree=degree, tangent=True,
                                  align_steps=align_steps, cone_half_angle=cone_half_angle,
                                  workers=workers)
            if not st.good.any():
                raise NumericalFailure("every seed failed")
            pt.section_vector = st.section_vector()
            pt.vector = st.flow_vector() if st.flow_sum is not None else pt.section_vector
            pt.entropy = entropy_from_statistics(st, eps)
            pt.per_seed = st.per_seed_section_means()
            pt.failed_seeds = st.failed
        except (NumericalFailure, ValueError) as exc:
            pt.error = f"{type(exc).__name__}: {exc}"
        points.append(pt)
    ref = next(p for p in points if p.epsilon == 0.0)
    for p in points:
        if p.error or ref.error:
            continue
        p.distance, p.distance_stderr = distance_with_stderr(p.vector, ref.vector)
        p.section_distance, p.section_distance_stderr = distance_with_stderr(p.section_vector,
                                                                             ref.section_vector)
        p.entropy_gap = abs(p.entropy.h_flow - ref.entropy.h_flow)
        p.entropy_gap_stderr = math.hypot(p.entropy.h_flow_stderr, ref.entropy.h_flow_stderr)
    settings = {"seeds": seeds, "burn_in": burn_in, "orbit_length": n, "rng_seed": rng_seed,
                "degree": degree, "epsilons": eps_list}
    return SweepResult(points, settings)


def nonincreasing_within(values, stderrs, k: float = 2.0) -> bool:
    """``values[i+1] <= values[i] + k * hypot(se[i], se[i+1])`` for all ``i``."""
    v = np.asarray(values, dtype=float)
    s = np.asarray(stderrs, dtype=float)
    return bool(np.all(v[1:] <= v[:-1] + k * np.hypot(s[1:], s[:-1])))


def basin_counts(smap: SectionMap, n_seeds: int, burn_in: int, n: int, rng_seeds, *,
                 tol: float = 0.05, degree: int = 4, workers: int = 1) -> dict:
    """Cluster counts for several master seeds, each also with the seed count doubled.

    Returns ``{"counts": {seed: (s, s_doubled)}, "reports": {seed: BasinReport}}``.
    """
    counts, reports = {}, {}
    for rs in rng_seeds:
        st = orbit_statistics(smap, 2 * n_seeds, burn_in, n, rs, degree=degree, flow=False,
                              workers=workers)
        means = st.per_seed_section_means()
        rep = cluster_basins(means[:n_seeds], tol, st.failed[:n_seeds])
        rep2 = cluster_basins(means, tol, st.failed)
        counts[rs] = (rep.s, rep2.s)
        reports[rs] = rep
    return {"counts": counts, "reports": reports}
