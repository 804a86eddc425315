"""Birkhoff averages, empirical invariant measures and their suspension lifts.

Measures are compared through a fixed finite family of bounded Lipschitz test
functions (:class:`TestFamily`).  A measure enters the comparison only via its
vector of test-function integrals (:class:`MeasureVector`), and the distance
between two measures is the sup-norm distance of these vectors.

Orbit statistics are computed seed-parallel: every seed owns its own RNG
stream, per-seed sums are accumulated in a fixed order, and pooled estimates
reduce over seeds in index order.
"""

from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numba
import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from . import flow_core as fc
from .errors import FamilyMismatch, NoReturn, SingularInput, Unstable
from .parallel import map_ordered, rng_for, seed_blocks, uniform_starts
from .poincare import GeometricPoincare, OdePoincare, SectionMap

# --------------------------------------------------------------------------
# test families


def _trig_table(x: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    """``cos(j pi x)`` for j = 0..d and ``sin(j pi x)`` for j = 1..d (last axis)."""
    c1 = np.cos(np.pi * x)
    s1 = np.sin(np.pi * x)
    cs = [np.ones_like(x), c1]
    ss = [np.zeros_like(x), s1]
    for _ in range(2, d + 1):
        cs.append(2 * c1 * cs[-1] - cs[-2])
        ss.append(2 * c1 * ss[-1] - ss[-2])
    return np.stack(cs[:d + 1], axis=-1), np.stack(ss[1:d + 1], axis=-1)


def section_basis(Z, degree: int = 4) -> np.ndarray:
    """Section test functions at points ``Z``, shape ``(N, (d+1)^2 + d^2)``.

    Order: ``cos(j pi u) cos(k pi v)`` for ``j, k = 0..d`` (row-major), then
    ``sin(j pi u) cos(k pi v)`` for ``j, k = 1..d``.  Index 0 is the constant.
    """
    Z = np.asarray(Z, dtype=float)
    cu, su = _trig_table(Z[..., 0], degree)
    cv, _ = _trig_table(Z[..., 1], degree)
    cc = (cu[..., :, None] * cv[..., None, :]).reshape(Z.shape[:-1] + (-1,))
    sc = (su[..., :, None] * cv[..., None, 1:]).reshape(Z.shape[:-1] + (-1,))
    return np.concatenate([cc, sc], axis=-1)


def section_names(degree: int = 4) -> list[str]:
    names = [f"cos{j}u*cos{k}v" for j in range(degree + 1) for k in range(degree + 1)]
    names += [f"sin{j}u*cos{k}v" for j in range(1, degree + 1) for k in range(1, degree + 1)]
    return names


def section_lipschitz(degree: int = 4) -> np.ndarray:
    """Lipschitz constants with respect to the sup norm on the square."""
    lip = [np.pi * (j + k) for j in range(degree + 1) for k in range(degree + 1)]
    lip += [np.pi * (j + k) for j in range(1, degree + 1) for k in range(1, degree + 1)]
    return np.array(lip)


N_HEIGHT_MODES = 2

# fixed scaling of physical coordinates into [-1, 1] on the attractor
ODE_SCALE = np.array([20.0, 27.0, 25.0])
ODE_SHIFT = np.array([0.0, 0.0, 25.0])


@dataclass(frozen=True)
class TestFamily:
    """A finite family of bounded Lipschitz test functions.

    ``kind`` is ``"section"`` (functions of ``(u, v)``), ``"suspension"``
    (functions of a geometric suspension state ``(z, s)``) or ``"ode"``
    (functions of a physical point).  Every member is bounded by 1 and member
    0 is the constant function.
    """

    kind: str = "section"
    degree: int = 4

    @property
    def key(self) -> str:
        return f"{self.kind}-d{self.degree}"

    @property
    def size(self) -> int:
        base = (self.degree + 1) ** 2 + self.degree ** 2
        return base if self.kind == "section" else base + 2 * N_HEIGHT_MODES

    @property
    def names(self) -> list[str]:
        base = section_names(self.degree)
        if self.kind == "section":
            return base
        if self.kind == "suspension":
            extra = [f"{f}{m}theta" for m in range(1, N_HEIGHT_MODES + 1) for f in ("cos", "sin")]
            return [f"lift[{n}]" for n in base] + extra
        extra = [f"{f}{m}x3" for m in range(1, N_HEIGHT_MODES + 1) for f in ("cos", "sin")]
        return [n.replace("u", "x1").replace("v", "x2") for n in base] + extra

    @property
    def lipschitz(self) -> np.ndarray:
        base = section_lipschitz(self.degree)
        if self.kind == "section":
            return base
        extra = np.repeat(2 * np.pi * np.arange(1, N_HEIGHT_MODES + 1), 2)
        if self.kind == "ode":
            return np.concatenate([base / ODE_SCALE[:2].min(), extra / ODE_SCALE[2] / 2])
        # suspension functions: Lipschitz in (z, theta); theta-Lipschitz bounds used here
        return np.concatenate([base + 1.0, extra])

    # evaluation -------------------------------------------------------------
    def evaluate(self, Z) -> np.ndarray:
        """Section family at section points ``Z``."""
        if self.kind != "section":
            raise FamilyMismatch("evaluate() is for section families")
        return section_basis(Z, self.degree)

    def evaluate_states(self, Z, heights, FZ, roofs) -> np.ndarray:
        """Suspension family at states ``(Z, heights)``.

        ``FZ`` are the unperturbed images and ``roofs`` the unperturbed roofs
        of the base points.  With ``theta = s / R(z)`` the members are
        ``(1 - theta) a(z) + theta a(F z)`` for section functions ``a`` and
        ``cos/sin(2 pi m theta)``.
        """
        theta = np.asarray(heights, dtype=float) / np.asarray(roofs, dtype=float)
        a0 = section_basis(Z, self.degree)
        a1 = section_basis(FZ, self.degree)
        lift = (1 - theta)[..., None] * a0 + theta[..., None] * a1
        trig = [f(2 * np.pi * m * theta) for m in range(1, N_HEIGHT_MODES + 1) for f in (np.cos, np.sin)]
        return np.concatenate([lift, np.stack(trig, axis=-1)], axis=-1)

    def segment_integrals(self, Z, h1, h2, FZ, roofs, a0=None, a1=None) -> np.ndarray:
        """Closed-form ``int_{h1}^{h2} phi(z, s) ds`` for the suspension family."""
        R = np.asarray(roofs, dtype=float)
        h1 = np.asarray(h1, dtype=float)
        h2 = np.asarray(h2, dtype=float)
        a0 = section_basis(Z, self.degree) if a0 is None else a0
        a1 = section_basis(FZ, self.degree) if a1 is None else a1
        quad = (h2 * h2 - h1 * h1) / (2 * R)
        w0 = (h2 - h1) - quad
        out = [w0[..., None] * a0 + quad[..., None] * a1]
        cols = []
        for m in range(1, N_HEIGHT_MODES + 1):
            k = 2 * np.pi * m / R
            cols.append((np.sin(k * h2) - np.sin(k * h1)) / k)
            cols.append(-(np.cos(k * h2) - np.cos(k * h1)) / k)
        out.append(np.stack(cols, axis=-1))
        return np.concatenate(out, axis=-1)

    def evaluate_points(self, X) -> np.ndarray:
        """ODE family at physical points ``X`` of shape ``(N, 3)``."""
        xi = (np.asarray(X, dtype=float) - ODE_SHIFT) / ODE_SCALE
        base = section_basis(xi[..., :2], self.degree)
        trig = [f(np.pi * m * xi[..., 2]) for m in range(1, N_HEIGHT_MODES + 1) for f in (np.cos, np.sin)]
        return np.concatenate([base, np.stack(trig, axis=-1)], axis=-1)


SECTION_FAMILY = TestFamily("section", 4)
SUSPENSION_FAMILY = TestFamily("suspension", 4)
ODE_FAMILY = TestFamily("ode", 4)


def flow_family_for(smap: SectionMap, degree: int = 4) -> TestFamily:
    return TestFamily("ode" if isinstance(smap, OdePoincare) else "suspension", degree)


@dataclass(frozen=True)
class MeasureVector:
    """Integrals of a test family against a measure, with standard errors."""

    family: str
    values: np.ndarray
    stderr: np.ndarray | None = None
    n: int = 0

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.stderr is not None:
            object.__setattr__(self, "stderr", np.asarray(self.stderr, dtype=float))

    def to_dict(self) -> dict:
        return {"family": self.family, "values": self.values.tolist(),
                "stderr": None if self.stderr is None else self.stderr.tolist(), "n": self.n}


def weak_star_distance(m1: MeasureVector, m2: MeasureVector) -> float:
    """Sup-norm distance between two measure-evaluation vectors."""
    if m1.family != m2.family or m1.values.shape != m2.values.shape:
        raise FamilyMismatch(f"cannot compare {m1.family} with {m2.family}")
    return float(np.max(np.abs(m1.values - m2.values)))


def distance_with_stderr(m1: MeasureVector, m2: MeasureVector) -> tuple[float, float]:
    """Distance and the standard error of the maximizing component difference."""
    if m1.family != m2.family or m1.values.shape != m2.values.shape:
        raise FamilyMismatch(f"cannot compare {m1.family} with {m2.family}")
    d = np.abs(m1.values - m2.values)
    j = int(np.argmax(d))
    s1 = 0.0 if m1.stderr is None else m1.stderr[j]
    s2 = 0.0 if m2.stderr is None else m2.stderr[j]
    return float(d[j]), float(math.hypot(s1, s2))


# --------------------------------------------------------------------------
# empirical measures


@dataclass
class EmpiricalMeasure:
    """Weighted sample cloud on the section.

    ``seed_index`` records which orbit produced each sample so standard
    errors can be formed from per-orbit batches.
    """

    points: np.ndarray
    weights: np.ndarray
    seed_index: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")
        total = self.weights.sum()
        if total <= 0:
            raise ValueError("empirical measure has no mass")
        self.weights = self.weights / total

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def integrate(self, fam: TestFamily = SECTION_FAMILY) -> MeasureVector:
        vals = fam.evaluate(self.points)
        mean = self.weights @ vals
        return MeasureVector(fam.key, mean, _batch_stderr(vals, self.weights, self.seed_index),
                             self.size)

    def pushforward(self, smap: SectionMap) -> "EmpiricalMeasure":
        img = smap.apply(self.points)
        ok = np.all(np.isfinite(img), axis=1)
        return EmpiricalMeasure(img[ok], self.weights[ok], self.seed_index[ok], dict(self.metadata))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["u", "v", "weight"])
        for (u, v), wt in zip(self.points, self.weights):
            w.writerow([repr(float(u)), repr(float(v)), repr(float(wt))])
        return buf.getvalue()

    def to_bytes(self) -> bytes:
        """Little-endian float64 triples ``(u, v, weight)``."""
        arr = np.column_stack([self.points, self.weights]).astype("<f8")
        return arr.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, metadata: dict | None = None) -> "EmpiricalMeasure":
        arr = np.frombuffer(data, dtype="<f8").reshape(-1, 3)
        return cls(arr[:, :2].copy(), arr[:, 2].copy(), np.zeros(arr.shape[0], dtype=int),
                   metadata or {})


def _batch_stderr(vals: np.ndarray, weights: np.ndarray, groups: np.ndarray) -> np.ndarray:
    """Standard error of a weighted mean from per-group means."""
    uniq, inv = np.unique(groups, return_inverse=True)
    if uniq.size < 2:
        return np.full(vals.shape[1], np.nan)
    gw = np.bincount(inv, weights=weights)
    gm = np.stack([np.bincount(inv, weights=weights * vals[:, j]) for j in range(vals.shape[1])], axis=1)
    gm = gm / gw[:, None]
    return gm.std(axis=0, ddof=1) / math.sqrt(uniq.size)


# --------------------------------------------------------------------------
# seed-parallel orbit statistics


@dataclass
class OrbitStatistics:
    """Per-seed sums accumulated along orbits of a section map.

    Sums run over the ``n`` iterates following the burn-in.  ``counts`` is the
    number of completed iterates per seed (smaller than ``n`` for truncated
    orbits, which are flagged in ``failed``).
    """

    seeds: np.ndarray
    degree: int
    n: int
    burn_in: int
    counts: np.ndarray
    failed: np.ndarray
    sec_sum: np.ndarray
    roof_sum: np.ndarray
    flow_sum: np.ndarray | None = None
    log_sum: np.ndarray | None = None
    cone_escapes: np.ndarray | None = None
    samples: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def good(self) -> np.ndarray:
        return ~self.failed

    def per_seed_section_means(self) -> np.ndarray:
        return self.sec_sum / np.maximum(self.counts, 1)[:, None]

    def section_vector(self) -> MeasureVector:
        g = self.good
        means = self.per_seed_section_means()[g]
        pooled = self.sec_sum[g].sum(axis=0) / self.counts[g].sum()
        se = means.std(axis=0, ddof=1) / math.sqrt(g.sum()) if g.sum() > 1 else None
        return MeasureVector(f"section-d{self.degree}", pooled, se, int(self.counts[g].sum()))

    def flow_vector(self) -> MeasureVector:
        """Suspension lift as a ratio estimator ``sum int phi / sum R_Y``."""
        if self.flow_sum is None:
            raise ValueError("flow integrals were not accumulated")
        g = self.good
        a, b = self.flow_sum[g], self.roof_sum[g]
        return MeasureVector(f"suspension-d{self.degree}", *ratio_estimate(a, b),
                             int(self.counts[g].sum()))

    def mean_roof(self) -> tuple[float, float]:
        g = self.good
        per = self.roof_sum[g] / self.counts[g]
        return float(self.roof_sum[g].sum() / self.counts[g].sum()), _se(per)

    def h_map(self) -> tuple[float, float]:
        if self.log_sum is None:
            raise ValueError("tangent statistics were not accumulated")
        g = self.good
        per = self.log_sum[g] / self.counts[g]
        return float(self.log_sum[g].sum() / self.counts[g].sum()), _se(per)

    def cone_escape_rate(self) -> float:
        if self.cone_escapes is None:
            return float("nan")
        return float(self.cone_escapes.sum() / max(self.counts.sum(), 1))

    def measure(self) -> EmpiricalMeasure:
        if self.samples is None:
            raise ValueError("samples were not stored")
        g = self.good
        pts = self.samples[g]
        idx = np.repeat(self.seeds[g], pts.shape[1])
        pts = pts.reshape(-1, 2)
        ok = np.all(np.isfinite(pts), axis=1)
        return EmpiricalMeasure(pts[ok], np.ones(ok.sum()), idx[ok], dict(self.metadata))


def _se(per: np.ndarray) -> float:
    return float(per.std(ddof=1) / math.sqrt(per.size)) if per.size > 1 else float("nan")


def ratio_estimate(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pooled ratio ``sum a / sum b`` over groups and its standard error.

    ``a`` has shape ``(K, m)`` and ``b`` shape ``(K,)``; the usual
    linearization ``var = sum (a_i - r b_i)^2 / (K (K-1) mean(b)^2)`` is used.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    r = a.sum(axis=0) / b.sum()
    k = b.size
    if k < 2:
        return r, np.full_like(r, np.nan)
    resid = a - r[None, :] * b[:, None]
    var = (resid ** 2).sum(axis=0) / (k * (k - 1) * b.mean() ** 2)
    return r, np.sqrt(var)


def _tangent_starts(master: int, seeds) -> np.ndarray:
    ang = np.array([np.random.default_rng(np.random.SeedSequence(int(master), spawn_key=(int(i), 1)))
                    .uniform(0, 2 * np.pi) for i in seeds])
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


CHUNK = 256


@numba.njit(cache=True)
def _accumulate(zb, fz, full, ok, s0, d, do_flow, sec, flow):
    """Add section-family values (and suspension integrals) of a chunk to per-seed sums."""
    K, T = ok.shape
    cu = np.empty(d + 1)
    su = np.empty(d + 1)
    cv = np.empty(d + 1)
    gu = np.empty(d + 1)
    gs = np.empty(d + 1)
    gv = np.empty(d + 1)
    nb = (d + 1) ** 2 + d * d
    for i in range(K):
        for t in range(T):
            if not ok[i, t]:
                continue
            _trig_row(zb[i, t, 0], zb[i, t, 1], d, cu, su, cv)
            w0 = 1.0
            w1 = 0.0
            if do_flow:
                R = full[i, t]
                quad = (R * R - s0 * s0) / (2 * R)
                w0 = (R - s0) - quad
                w1 = quad
                _trig_row(fz[i, t, 0], fz[i, t, 1], d, gu, gs, gv)
            k = 0
            for j in range(d + 1):
                for l in range(d + 1):
                    a = cu[j] * cv[l]
                    sec[i, k] += a
                    if do_flow:
                        flow[i, k] += w0 * a + w1 * gu[j] * gv[l]
                    k += 1
            for j in range(1, d + 1):
                for l in range(1, d + 1):
                    a = su[j] * cv[l]
                    sec[i, k] += a
                    if do_flow:
                        flow[i, k] += w0 * a + w1 * gs[j] * gv[l]
                    k += 1
            if do_flow:
                k = nb
                for m in range(1, N_HEIGHT_MODES + 1):
                    q = 2 * np.pi * m / R
                    flow[i, k] += (np.sin(q * R) - np.sin(q * s0)) / q
                    flow[i, k + 1] += -(np.cos(q * R) - np.cos(q * s0)) / q
                    k += 2


@numba.njit(cache=True)
def _trig_row(u, v, d, cu, su, cv):
    c1 = np.cos(np.pi * u)
    e1 = np.cos(np.pi * v)
    cu[0] = 1.0
    su[0] = 0.0
    cv[0] = 1.0
    if d >= 1:
        cu[1] = c1
        su[1] = np.sin(np.pi * u)
        cv[1] = e1
    for j in range(2, d + 1):
        cu[j] = 2 * c1 * cu[j - 1] - cu[j - 2]
        su[j] = 2 * c1 * su[j - 1] - su[j - 2]
        cv[j] = 2 * e1 * cv[j - 1] - cv[j - 2]


def _orbit_block(task) -> dict:
    (smap, seeds, rng_seed, burn_in, n, degree, flow, tangent, cone_tan, thin) = task
    K = len(seeds)
    Z = uniform_starts(rng_seed, seeds)
    alive = np.ones(K, dtype=bool)
    counts = np.zeros(K, dtype=np.int64)
    m = (degree + 1) ** 2 + degree ** 2
    sec = np.zeros((K, m))
    roof = np.zeros(K)
    fam = TestFamily("suspension", degree)
    flow_sum = np.zeros((K, fam.size)) if flow else None
    log_sum = np.zeros(K) if tangent else None
    esc = np.zeros(K, dtype=np.int64) if tangent else None
    W = _tangent_starts(rng_seed, seeds) if tangent else None
    n_keep = n // thin if thin else 0
    samples = np.full((K, n_keep, 2), np.nan) if thin else None
    # post-burn-in points are buffered and the test families evaluated per chunk
    buf_z = np.empty((K, CHUNK, 2))
    buf_r = np.empty((K, CHUNK))
    buf_ok = np.zeros((K, CHUNK), dtype=bool)
    fill = 0

    def flush(fill):
        if fill == 0:
            return
        zb, ok = buf_z[:, :fill], buf_ok[:, :fill]
        roof[:] += np.where(ok, buf_r[:, :fill], 0.0).sum(axis=1)
        if flow:
            flat = zb.reshape(-1, 2)
            fz = smap.unperturbed(flat).reshape(K, fill, 2)
            full = smap.full_roof(flat).reshape(K, fill)
            _accumulate(zb, fz, full, ok, smap.spec.s0, degree, True, sec, flow_sum)
        else:
            _accumulate(zb, zb, buf_r[:, :fill], ok, 0.0, degree, False, sec, sec)

    for k in range(burn_in + n):
        alive &= ~(smap.singular(Z) | ~np.all(np.isfinite(Z), axis=1))
        Zc = np.where(alive[:, None], Z, 0.5)
        if tangent:
            J = smap.jacobian(Zc)
            w0 = J[:, 0, 0] * W[:, 0] + J[:, 0, 1] * W[:, 1]
            w1 = J[:, 1, 0] * W[:, 0] + J[:, 1, 1] * W[:, 1]
            norm = np.hypot(w0, w1)
            W = np.stack([w0 / norm, w1 / norm], axis=1)
        Znext, R = smap.step(Zc)
        if k >= burn_in:
            idx = k - burn_in
            alive &= np.isfinite(R) & np.all(np.isfinite(Znext), axis=1)
            buf_z[:, fill] = Zc
            buf_r[:, fill] = R
            buf_ok[:, fill] = alive
            fill += 1
            counts += alive
            if tangent:
                log_sum += np.where(alive, np.log(norm), 0.0)
                esc += alive & (np.abs(W[:, 1]) > cone_tan * np.abs(W[:, 0]))
            if thin and idx % thin == thin - 1 and idx // thin < n_keep:
                samples[alive, idx // thin] = Zc[alive]
            if fill == CHUNK:
                flush(fill)
                fill = 0
        Z = Znext
    flush(fill)
    return dict(counts=counts, failed=counts < n, sec=sec, roof=roof, flow=flow_sum,
                log=log_sum, esc=esc, samples=samples)


def orbit_statistics(smap: SectionMap, n_seeds: int, burn_in: int, n: int, rng_seed: int, *,
                     degree: int = 4, flow: bool | None = None, tangent: bool = False,
                     align_steps: int = 50, cone_half_angle: float = 45.0, thin: int = 0,
                     workers: int = 1, block: int = 256, seed_offset: int = 0) -> OrbitStatistics:
    """Accumulate per-seed orbit statistics of ``smap``.

    Each seed starts at a uniform random point of the square drawn from its
    own stream and is iterated ``burn_in + n`` times.  Tangent vectors (when
    ``tangent``) are pushed from the first iterate, so the burn-in must be at
    least ``align_steps`` long to count as aligned.

    Parameters
    ----------
    flow : bool, optional
        Accumulate suspension integrals of the flow family (geometric backend
        only; default on for it).
    thin : int
        Store every ``thin``-th post-burn-in iterate as a sample (0: none).
    """
    if flow is None:
        flow = isinstance(smap, GeometricPoincare)
    if tangent and burn_in < align_steps:
        raise ValueError("burn_in must cover the alignment steps")
    cone_tan = math.tan(math.radians(cone_half_angle))
    blocks = seed_blocks(seed_offset, n_seeds, block)
    tasks = [(smap, list(b), rng_seed, burn_in, n, degree, flow, tangent, cone_tan, thin)
             for b in blocks]
    parts = map_ordered(_orbit_block, tasks, workers)

    def cat(key):
        if parts[0][key] is None:
            return None
        return np.concatenate([p[key] for p in parts], axis=0)

    meta = {"map": getattr(smap, "name", "map"), "n_seeds": n_seeds, "burn_in": burn_in,
            "orbit_length": n, "rng_seed": rng_seed}
    return OrbitStatistics(np.arange(seed_offset, seed_offset + n_seeds), degree, n, burn_in,
                           cat("counts"), cat("failed"), cat("sec"), cat("roof"), cat("flow"),
                           cat("log"), cat("esc"), cat("samples"), meta)


def empirical_invariant_measure(smap: SectionMap, seeds: int, burn_in: int, n: int,
                                rng_seed: int, *, thin: int = 1, workers: int = 1) -> EmpiricalMeasure:
    """Pooled orbit samples after burn-in from uniformly random starts.

    Every ``thin``-th of the ``n`` post-burn-in iterates of each seed is kept.
    Truncated seeds are excluded.
    """
    st = orbit_statistics(smap, seeds, burn_in, n, rng_seed, thin=thin, flow=False,
                          workers=workers)
    mu = st.measure()
    mu.metadata.update({"backend": getattr(smap, "backend", "custom"),
                        "epsilon": getattr(getattr(smap, "spec", None), "epsilon", None),
                        "seeds": seeds, "orbit_length": n, "burn_in": burn_in, "thin": thin,
                        "excluded_seeds": int(st.failed.sum())})
    return mu


# --------------------------------------------------------------------------
# Birkhoff averages


@dataclass(frozen=True)
class BirkhoffResult:
    values: np.ndarray
    completed: float
    truncated: bool


def birkhoff_map_average(smap: SectionMap, x0, n: int, fam: TestFamily = SECTION_FAMILY, *,
                         burn_in: int = 0) -> BirkhoffResult:
    """Time averages of the section family along one orbit.

    A guard-band hit truncates the orbit; the result then averages the
    completed prefix and is flagged.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    z = np.asarray(x0, dtype=float).reshape(1, 2)
    if smap.singular(z)[0]:
        raise SingularInput("start point in the guard band")
    for _ in range(burn_in):
        z = smap.apply(z)
    total = np.zeros(fam.size)
    done = 0
    for _ in range(n):
        if smap.singular(z)[0] or not np.all(np.isfinite(z)):
            break
        total += fam.evaluate(z)[0]
        done += 1
        if done < n:
            z = smap.apply(z)
    if done == 0:
        return BirkhoffResult(np.full(fam.size, np.nan), 0, True)
    return BirkhoffResult(total / done, done, done < n)


def _geometric_path_integral(smap: GeometricPoincare, Z, t_a, t_b, fam: TestFamily) -> np.ndarray:
    """``int_{t_a}^{t_b} phi(Y_t x) dt`` for ``x = (z, s0)``, vectorized over ``Z``.

    Walks the impulsive segments: segment ``k`` has base ``z_k`` (with
    ``z_{k+1} = F~(z_k)``) and covers heights ``s0 .. R(z_k)``.
    """
    s0 = smap.spec.s0
    Z = np.array(Z, dtype=float)
    N = Z.shape[0]
    t_a = np.broadcast_to(np.asarray(t_a, dtype=float), (N,))
    t_b = np.broadcast_to(np.asarray(t_b, dtype=float), (N,))
    out = np.zeros((N, fam.size))
    start = np.zeros(N)
    active = np.ones(N, dtype=bool)
    while np.any(active):
        Zc = np.where(active[:, None], Z, 0.5)
        R = smap.full_roof(Zc)
        end = start + (R - s0)
        lo = np.maximum(start, t_a)
        hi = np.minimum(end, t_b)
        use = active & (hi > lo)
        if np.any(use):
            FZ = smap.unperturbed(Zc[use])
            integ = fam.segment_integrals(Zc[use], s0 + lo[use] - start[use], s0 + hi[use] - start[use],
                                          FZ, R[use])
            out[use] += integ
        active = active & (end < t_b)
        if not np.any(active):
            break
        Znext = np.where(active[:, None], smap.apply(Zc), Z)
        start = np.where(active, end, start)
        Z = Znext
    return out


def birkhoff_flow_average(smap: SectionMap, x0, T: float, fam: TestFamily | None = None,
                          *, max_node_step: float = 0.01) -> BirkhoffResult:
    """Time average of the flow family along the impulsive trajectory of ``x0``.

    ``x0`` is a section point ``z``; the trajectory starts at ``phi``-image
    ``psi^{-1}(z)`` (height ``s0`` below the section).  The geometric backend
    integrates each segment in closed form; the ODE backend uses Gauss-Legendre
    quadrature on the dense output with panels no longer than
    ``max_node_step``.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    fam = fam if fam is not None else flow_family_for(smap)
    if isinstance(smap, GeometricPoincare):
        vals = _geometric_path_integral(smap, np.asarray(x0, dtype=float).reshape(1, 2), 0.0, T, fam)[0]
        return BirkhoffResult(vals / T, T, False)
    if not isinstance(smap, OdePoincare):
        raise TypeError("flow averages need a Poincaré system")
    x = smap.psi_inv(np.asarray(x0, dtype=float))
    elapsed = 0.0
    total = np.zeros(fam.size)
    truncated = False
    while elapsed < T:
        budget = T - elapsed
        horizon = min(budget, smap.cfg.max_flight_time)
        arc = fc.dense_arc(x, horizon, smap.chart, smap.cfg)
        nodes, weights = arc.quadrature_nodes(max_node_step)
        total += weights @ fam.evaluate_points(arc(nodes))
        elapsed += arc.duration
        if arc.hit is None:
            truncated = horizon < budget
            break
        x = smap.system._impulse((arc.hit, arc.hit.uv))
    return BirkhoffResult(total / elapsed, elapsed, truncated)


# --------------------------------------------------------------------------
# suspension lift and invariance


def _ode_arc_integrals(smap: OdePoincare, z, fam: TestFamily, max_node_step: float):
    x = smap.psi_inv(z)
    arc = fc.dense_arc(x, smap.cfg.max_flight_time, smap.chart, smap.cfg)
    if arc.hit is None:
        raise NoReturn("sample did not return")
    nodes, weights = arc.quadrature_nodes(max_node_step)
    return weights @ fam.evaluate_points(arc(nodes)), arc.duration


def suspension_lift(mu: EmpiricalMeasure, smap: SectionMap, fam: TestFamily | None = None, *,
                    max_node_step: float = 0.01) -> MeasureVector:
    """Flow-invariant lift of a section measure.

    ``nu(phi) = sum_i w_i int_0^{R_Y(x_i)} phi(Y_t x_i) dt / sum_i w_i R_Y(x_i)``
    where ``x_i = psi^{-1}(z_i)``.  Samples in the guard band (or that fail
    to return) are skipped and counted in the returned ``n``.
    """
    fam = fam if fam is not None else flow_family_for(smap)
    Z = mu.points
    ok = ~smap.singular(Z)
    if isinstance(smap, GeometricPoincare):
        Zs = Z[ok]
        R = smap.full_roof(Zs)
        integ = fam.segment_integrals(Zs, np.full(Zs.shape[0], smap.spec.s0), R,
                                      smap.unperturbed(Zs), R)
        roofs = R - smap.spec.s0
    else:
        rows, roofs_l, keep = [], [], np.zeros(Z.shape[0], dtype=bool)
        for i in np.nonzero(ok)[0]:
            try:
                v, d = _ode_arc_integrals(smap, Z[i], fam, max_node_step)
            except NoReturn:
                continue
            rows.append(v)
            roofs_l.append(d)
            keep[i] = True
        ok = keep
        integ = np.array(rows).reshape(-1, fam.size)
        roofs = np.array(roofs_l)
    w = mu.weights[ok]
    groups = mu.seed_index[ok]
    a = _group_sum(integ * w[:, None], groups)
    b = _group_sum((roofs * w)[:, None], groups)[:, 0]
    vals, se = ratio_estimate(a, b)
    return MeasureVector(fam.key, vals, se, int(ok.sum()))


def _group_sum(x: np.ndarray, groups: np.ndarray) -> np.ndarray:
    uniq, inv = np.unique(groups, return_inverse=True)
    out = np.zeros((uniq.size, x.shape[1]))
    np.add.at(out, inv, x)
    return out


def flow_invariance_defect(mu: EmpiricalMeasure, smap: GeometricPoincare, s: float,
                           fam: TestFamily | None = None) -> tuple[float, np.ndarray]:
    """``max_j |nu(phi_j o Y_s) - nu(phi_j)|`` for the lifted measure.

    Both terms use the same samples: ``nu(phi o Y_s)`` integrates ``phi`` over
    ``[s, s + R_Y(x)]`` along the impulsive trajectory of each sample,
    ``nu(phi)`` over ``[0, R_Y(x)]``.  Geometric backend only.
    """
    if not (0 <= s <= 5):
        raise ValueError("s must lie in [0, 5]")
    fam = fam if fam is not None else SUSPENSION_FAMILY
    Z = mu.points[~smap.singular(mu.points)]
    w = mu.weights[~smap.singular(mu.points)]
    RY = smap.roof(Z)
    denom = float(w @ RY)
    chunk = 200_000
    base = np.zeros(fam.size)
    shifted = np.zeros(fam.size)
    for a in range(0, Z.shape[0], chunk):
        sl = slice(a, a + chunk)
        base += w[sl] @ _geometric_path_integral(smap, Z[sl], 0.0, RY[sl], fam)
        if s == 0:
            continue
        shifted += w[sl] @ _geometric_path_integral(smap, Z[sl], s, s + RY[sl], fam)
    if s == 0:
        shifted = base.copy()
    defects = np.abs(shifted - base) / denom
    return float(defects.max()), defects


# --------------------------------------------------------------------------
# basins


@dataclass
class BasinReport:
    """Result of clustering per-seed Birkhoff averages."""

    s: int
    labels: np.ndarray
    means: np.ndarray
    fractions: np.ndarray
    separation: float
    spread: float
    excluded: int
    tol: float

    @property
    def coverage(self) -> float:
        return float(self.fractions.sum())

    @property
    def accepted(self) -> bool:
        return self.s == 1 or self.separation > 3 * self.spread

    def to_dict(self) -> dict:
        return {"s": self.s, "fractions": self.fractions.tolist(), "means": self.means.tolist(),
                "separation": None if math.isinf(self.separation) else self.separation,
                "spread": self.spread, "excluded": self.excluded, "tol": self.tol,
                "coverage": self.coverage, "accepted": self.accepted}


def cluster_basins(vectors, tol: float = 0.05, failed=None, min_seeds: int = 100) -> BasinReport:
    """Single-linkage clustering of per-seed average vectors in the sup norm.

    Seeds flagged in ``failed`` are excluded from the clustering; basin
    fractions are relative to all seeds, so they sum to at most one.
    """
    V = np.asarray(vectors, dtype=float)
    total = V.shape[0]
    if total < min_seeds:
        raise ValueError(f"cluster_basins needs at least {min_seeds} seeds")
    failed = np.zeros(total, dtype=bool) if failed is None else np.asarray(failed, dtype=bool)
    good = ~failed & np.all(np.isfinite(V), axis=1)
    X = V[good]
    if X.shape[0] == 1:
        labels = np.ones(1, dtype=int)
    else:
        Zl = linkage(X, method="single", metric="chebyshev")
        labels = fcluster(Zl, t=tol, criterion="distance")
    uniq = np.unique(labels)
    means = np.array([X[labels == c].mean(axis=0) for c in uniq])
    fractions = np.array([(labels == c).sum() / total for c in uniq])
    spread = max(float(np.max(np.abs(X[labels == c] - means[i]))) for i, c in enumerate(uniq))
    separation = math.inf
    for i in range(len(uniq)):
        for j in range(i + 1, len(uniq)):
            a, b = X[labels == uniq[i]], X[labels == uniq[j]]
            d = np.max(np.abs(a[:, None, :] - b[None, :, :]), axis=2).min()
            separation = min(separation, float(d))
    full = np.zeros(total, dtype=int)
    full[good] = labels
    return BasinReport(len(uniq), full, means, fractions, separation, spread,
                       int((~good).sum()), tol)


def probe_basins(smap: SectionMap, n_seeds: int, burn_in: int, n: int, rng_seed: int, *,
                 tol: float = 0.05, degree: int = 4, workers: int = 1) -> BasinReport:
    """Cluster per-seed averages and re-check with the seed count doubled.

    Raises
    ------
    Unstable
        If doubling the seeds changes the cluster count.
    """
    st2 = orbit_statistics(smap, 2 * n_seeds, burn_in, n, rng_seed, degree=degree,
                           flow=False, workers=workers)
    means = st2.per_seed_section_means()
    rep = cluster_basins(means[:n_seeds], tol, st2.failed[:n_seeds])
    rep2 = cluster_basins(means, tol, st2.failed)
    if rep.s != rep2.s:
        raise Unstable(f"cluster count changed from {rep.s} to {rep2.s} when doubling seeds")
    return rep


class TwoAttractorMap(SectionMap):
    """Test fixture with two invariant halves.

    ``u -> sign(u) * 4|u|(1 - |u|)`` keeps each half ``u > 0`` and ``u < 0``
    invariant and is chaotic on each; ``v`` contracts.  The halves carry two
    distinct physical measures.
    """

    name = "two-attractor"
    backend = "fixture"

    def step(self, Z):
        Z = np.asarray(Z, dtype=float)
        u, v = Z[..., 0], Z[..., 1]
        au = np.abs(u)
        out = np.stack([np.sign(u) * 4 * au * (1 - au), 0.5 * v], axis=-1)
        return out, np.ones(Z.shape[:-1])

    def roof(self, Z):
        return np.ones(np.asarray(Z).shape[:-1])

    def singular(self, Z):
        Z = np.asarray(Z, dtype=float)
        return ~(np.abs(Z[..., 0]) >= self.guard) | ~(np.abs(Z[..., 0]) <= 1 - self.guard)

    def jacobian(self, Z):
        Z = np.asarray(Z, dtype=float)
        u = Z[..., 0]
        j = np.zeros(Z.shape[:-1] + (2, 2))
        j[..., 0, 0] = 4 * (1 - 2 * np.abs(u))
        j[..., 1, 1] = 0.5
        return j
