"""Numerical checks of the hyperbolicity conditions of a section map.

Every check works on the vectorized :class:`~impulsive_lorenz.poincare.SectionMap`
interface, so it applies to the geometric maps, the impulsive perturbations
``h_eps o F`` and (slowly) the ODE return map.  Norms of vectors and partial
derivatives are sup norms; the distance to the singular line is ``|u|``.

``L3``  sup-norm bounds on the partial derivatives (three inequalities)
``H1``  power-law blow-up of ``||df||`` near the singular line
``H2``  forward invariance and expansion of the unstable cone, backward
        invariance and expansion of the stable cone
``H3``  measure of points whose n-th iterate lands near the singular line
``H6``  expansion along unstable segments and backward along stable ones
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConeBroken, GridTooCoarse, NumericalFailure, PoorFit
from .geometric import GeoParams
from .impulse import ImpulseSpec
from .parallel import rng_for
from .poincare import GeometricPoincare, SectionMap

SCHEMA = "condition-report/1"
U_CONE_DEG = 45.0
S_CONE_DEG = 30.0
H1_TARGET = 0.25
H1_TOL = 0.02
LAMBDA_REQUIRED = 1.4
ESCAPE_MAX = 1e-3
R2_MIN = 0.95


def _partials(smap: SectionMap, Z: np.ndarray) -> np.ndarray:
    J = smap.jacobian(Z)
    return J[np.all(np.isfinite(J.reshape(J.shape[0], -1)), axis=1)]


def _l3_sups(smap: SectionMap, n: int, u_min: float) -> dict:
    lin = np.linspace(-1, 1, n)
    lin = lin[np.abs(lin) >= u_min]
    logs = np.geomspace(u_min, 1, n // 4)
    us = np.unique(np.concatenate([lin, logs, -logs]))
    vs = np.linspace(-1, 1, n)
    U, V = np.meshgrid(us, vs, indexing="ij")
    J = _partials(smap, np.stack([U.ravel(), V.ravel()], axis=1))
    gx, gy, hx, hy = J[:, 0, 0], J[:, 0, 1], J[:, 1, 0], J[:, 1, 1]
    return {"Hy": float(np.max(np.abs(hy))), "Gx_inv": float(np.max(1 / np.abs(gx))),
            "Gx_inv_Hx": float(np.max(np.abs(hx / gx))), "Gy": float(np.max(np.abs(gy)))}


def check_L3(smap: SectionMap, n: int = 201, *, u_min: float = 1e-8, refine: bool = True) -> dict:
    """Sup-norm partials on a grid and the three inequality slacks.

    The grid is uniform in ``u`` and ``v`` (including the boundary) plus
    log-spaced ``|u|`` down to ``u_min``.  With ``refine`` the grid is
    doubled once and any sup changing by more than 5% raises
    :class:`GridTooCoarse`.

    Returns a dict with the sups, ``slack1 = min(1 - |H_y|, 1 - |G_x^-1|)``,
    ``slack2 = 1 - |H_y||G_x^-1| - 2 sqrt(|G_x^-1||H_y||G_x^-1 H_x|)``,
    ``slack3 = (1 - |H_y|)(1 - |G_x^-1|) - |H_y||G_x^-1 H_x||G_y|`` and
    ``passed``.
    """
    s = _l3_sups(smap, n, u_min)
    if refine:
        s2 = _l3_sups(smap, 2 * n - 1, u_min)
        for key in s:
            if abs(s2[key] - s[key]) > 0.05 * max(abs(s[key]), 1e-12):
                raise GridTooCoarse(f"sup of {key} moved from {s[key]:.6g} to {s2[key]:.6g}")
        s = s2
    hy, gi, gih, gy = s["Hy"], s["Gx_inv"], s["Gx_inv_Hx"], s["Gy"]
    slack1 = min(1 - hy, 1 - gi)
    slack2 = 1 - hy * gi - 2 * math.sqrt(gi * hy * gih)
    slack3 = (1 - hy) * (1 - gi) - hy * gih * gy
    return {**s, "slack1": slack1, "slack2": slack2, "slack3": slack3,
            "passed": bool(min(slack1, slack2, slack3) > 0)}


def fit_H1(smap: SectionMap, samples: int = 2000, seed: int = 0, *, target: float = H1_TARGET,
           tol: float = H1_TOL) -> dict:
    """Log-log fit ``||df|| ~ A |u|^-alpha`` with ``|u|`` log-uniform in ``[1e-8, 1e-1]``.

    ``||df||`` is the operator norm induced by the sup norm (maximum
    absolute row sum).  The check passes when the fit reaches R^2 >= 0.95 and
    the exponent lies within ``tol`` of ``target``.

    Raises
    ------
    PoorFit
        If R^2 < 0.95; the fit is attached as ``result``.
    """
    if samples < 1000:
        raise ValueError("fit_H1 needs at least 1000 samples")
    rng = rng_for(seed, 0)
    au = 10 ** rng.uniform(-8, -1, samples)
    u = au * rng.choice([-1.0, 1.0], samples)
    v = rng.uniform(-1, 1, samples)
    J = smap.jacobian(np.stack([u, v], axis=1))
    norm = np.max(np.abs(J).sum(axis=2), axis=1)
    ok = np.isfinite(norm) & (norm > 0)
    x, y = np.log(au[ok]), np.log(norm[ok])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    alpha = -float(slope)
    out = {"A": float(math.exp(intercept)), "alpha": alpha, "r2": r2, "samples": int(ok.sum()),
           "target": target, "tol": tol}
    out["passed"] = bool(r2 >= R2_MIN and abs(alpha - target) <= tol)
    if r2 < R2_MIN:
        raise PoorFit(f"H1 fit R^2 = {r2:.4f} below {R2_MIN}", out)
    return out


def _cone_vectors(half_angle_deg: float, k: int, axis: int) -> np.ndarray:
    """Unit (sup-norm) vectors spanning the cone around coordinate ``axis``."""
    t = np.linspace(-1, 1, k) * math.tan(math.radians(half_angle_deg))
    w = np.ones((k, 2))
    w[:, 1 - axis] = t
    return w


def check_H2_cones(smap: SectionMap, u_half_angle: float = U_CONE_DEG, samples: int = 20000,
                   seed: int = 0, *, s_half_angle: float = S_CONE_DEG,
                   lambda_required: float = LAMBDA_REQUIRED, n_dirs: int = 9) -> dict:
    """Cone invariance and expansion at random points of the square.

    The unstable cone is ``|w_v| <= tan(a)|w_u|``, the stable cone
    ``|w_u| <= tan(b)|w_v|``.  At each point ``n_dirs`` cone vectors are
    pushed by ``df`` (unstable) and pulled by ``df^-1`` (stable).

    Raises
    ------
    ConeBroken
        If the fraction of points where some image leaves its cone exceeds
        1e-3; the result is attached as ``result``.
    """
    if not 0 < u_half_angle <= 45 or not 0 < s_half_angle <= 45:
        raise ValueError("cone half-angles must lie in (0, 45] degrees")
    rng = rng_for(seed, 1)
    Z = rng.uniform(-1, 1, (samples, 2))
    Z = Z[~smap.singular(Z)]
    J = smap.jacobian(Z)
    good = np.all(np.isfinite(J.reshape(J.shape[0], -1)), axis=1)
    J = J[good]
    tu = math.tan(math.radians(u_half_angle))
    ts = math.tan(math.radians(s_half_angle))
    wu = _cone_vectors(u_half_angle, n_dirs, 0)
    img = np.einsum("nij,kj->nki", J, wu)
    fwd = np.max(np.abs(img), axis=2)
    lam_u = float(fwd.min())
    esc_u = np.any(np.abs(img[..., 1]) > tu * np.abs(img[..., 0]) * (1 + 1e-12), axis=1)
    Jinv = np.linalg.inv(J)
    ws = _cone_vectors(s_half_angle, n_dirs, 1)
    pre = np.einsum("nij,kj->nki", Jinv, ws)
    bwd = np.max(np.abs(pre), axis=2)
    lam_s = float(bwd.min())
    esc_s = np.any(np.abs(pre[..., 0]) > ts * np.abs(pre[..., 1]) * (1 + 1e-12), axis=1)
    rate = float(np.mean(esc_u | esc_s))
    lam = min(lam_u, lam_s)
    out = {"lambda_unstable": lam_u, "lambda_stable": lam_s, "lambda_min": lam,
           "escape_rate": rate, "u_half_angle": u_half_angle, "s_half_angle": s_half_angle,
           "lambda_required": lambda_required, "samples": int(J.shape[0])}
    out["passed"] = bool(lam >= lambda_required and rate <= ESCAPE_MAX)
    if rate > ESCAPE_MAX:
        out["passed"] = False
        raise ConeBroken(f"cone escape rate {rate:.3g} exceeds {ESCAPE_MAX}", out)
    return out


def estimate_H3(smap: SectionMap, eps_grid=(0.1, 0.05, 0.02, 0.01, 0.005),
                n_grid=tuple(range(0, 11)), samples: int = 100_000, seed: int = 0,
                *, beta_spread: float = 0.2) -> dict:
    """Monte-Carlo measure of ``f^-n(Gamma_eps)`` and power-law fits in ``eps``.

    For each ``n`` the fraction of uniform points whose ``n``-th iterate has
    ``|u| < eps`` is fitted as ``B_n eps^beta_n``.  Cells with no hits are
    reported as the upper bound ``1 / samples`` and excluded from fits.  The
    check passes when every fit has R^2 >= 0.95 and the exponents span at
    most ``beta_spread``.
    """
    if samples < 100_000:
        raise ValueError("estimate_H3 needs at least 1e5 samples per cell")
    eps = np.asarray(eps_grid, dtype=float)
    ns = sorted(int(n) for n in n_grid)
    rng = rng_for(seed, 2)
    Z = rng.uniform(-1, 1, (samples, 2))
    alive = np.ones(samples, dtype=bool)
    table = np.zeros((len(ns), eps.size))
    upper = np.zeros((len(ns), eps.size), dtype=bool)
    k = 0
    for row, n in enumerate(ns):
        while k < n:
            sing = smap.singular(Z) | ~np.all(np.isfinite(Z), axis=1)
            alive &= ~sing
            Z = np.where(alive[:, None], smap.apply(np.where(alive[:, None], Z, 0.5)), Z)
            k += 1
        au = np.abs(Z[:, 0])
        # points lost to the guard band are within any eps of the line
        counts = np.array([np.sum((au < e) | ~alive) for e in eps])
        upper[row] = counts == 0
        table[row] = np.where(counts == 0, 1.0, counts) / samples
    fits = []
    for row, n in enumerate(ns):
        ok = ~upper[row]
        if ok.sum() < 2:
            fits.append({"n": n, "B": float("nan"), "beta": float("nan"), "r2": float("nan")})
            continue
        x, y = np.log(eps[ok]), np.log(table[row, ok])
        b, a = np.polyfit(x, y, 1)
        resid = y - (a + b * x)
        ss = float(((y - y.mean()) ** 2).sum())
        fits.append({"n": n, "B": float(math.exp(a)), "beta": float(b),
                     "r2": 1 - float((resid ** 2).sum()) / ss if ss > 0 else 1.0})
    betas = np.array([f["beta"] for f in fits])
    r2s = np.array([f["r2"] for f in fits])
    good = np.isfinite(betas)
    spread = float(betas[good].max() - betas[good].min()) if good.any() else float("nan")
    passed = bool(good.all() and np.all(r2s >= R2_MIN) and spread <= beta_spread
                  and np.all(betas > 0))
    return {"eps": eps.tolist(), "n": ns, "table": table.tolist(), "upper_bound": upper.tolist(),
            "fits": fits, "B": float(np.nanmax([f["B"] for f in fits])),
            "beta": float(np.nanmin(betas)), "beta_spread": spread, "samples": samples,
            "passed": passed}


def check_H6(smap: SectionMap, sizes=(0.05, 0.1, 0.2), samples: int = 2000, seed: int = 0,
             *, n_pairs: int = 8) -> dict:
    """Expansion of horizontal (unstable) and vertical (stable) segments of size ``r``.

    Unstable: random horizontal segments of length ``r`` inside one half of the
    square; the ratio of image distance to original distance is taken over
    ``n_pairs`` point pairs along the segment.  Stable: vertical segments of
    length ``r`` around images ``f(x)``, pulled back through the inverse
    branch (only for maps that provide ``inverse``).  ``lambda`` is the
    minimum ratio per size; the check passes when every ratio exceeds 1.
    """
    rng = rng_for(seed, 3)
    out = {"sizes": list(sizes), "lambda_u": [], "lambda_s": []}
    has_inverse = hasattr(smap, "inverse")
    for r in sizes:
        sgn = rng.choice([-1.0, 1.0], samples)
        u0 = sgn * rng.uniform(smap.guard * 10, 1 - r, samples)
        v0 = rng.uniform(-1, 1, samples)
        t = np.linspace(0, r, n_pairs + 1)
        P = np.stack([u0[:, None] + sgn[:, None] * t[None, :],
                      np.broadcast_to(v0[:, None], (samples, t.size))], axis=-1)
        img = smap.apply(P.reshape(-1, 2)).reshape(samples, t.size, 2)
        d_img = np.max(np.abs(img[:, 1:] - img[:, :1]), axis=2)
        d0 = np.max(np.abs(P[:, 1:] - P[:, :1]), axis=2)
        ratio = d_img / d0
        out["lambda_u"].append(float(np.nanmin(ratio)))
        if has_inverse:
            base = np.stack([sgn * rng.uniform(0.05, 1, samples), rng.uniform(-1, 1, samples)], axis=1)
            fx = smap.apply(base)
            lo = fx.copy()
            hi = fx.copy()
            lo[:, 1] -= r / 2
            hi[:, 1] += r / 2
            ratios = []
            for b in (-1, 1):
                m = sgn == b
                if not m.any():
                    continue
                a = smap.inverse(lo[m], b)
                c = smap.inverse(hi[m], b)
                inside = (np.abs(a[:, 1]) <= 1) & (np.abs(c[:, 1]) <= 1) \
                    & (np.abs(lo[m][:, 1]) <= 1) & (np.abs(hi[m][:, 1]) <= 1)
                if inside.any():
                    ratios.append(np.max(np.abs(a[inside] - c[inside]), axis=1) / r)
            out["lambda_s"].append(float(np.min(np.concatenate(ratios))) if ratios else float("nan"))
    lam = [x for x in out["lambda_u"] + out["lambda_s"] if np.isfinite(x)]
    out["lambda"] = float(min(lam)) if lam else float("nan")
    out["passed"] = bool(lam and min(lam) > 1)
    return out


@dataclass
class ConditionReport:
    """Results of all condition checks for one section map."""

    backend: str
    epsilon: float | None
    L3: dict = field(default_factory=dict)
    H1: dict = field(default_factory=dict)
    H2: dict = field(default_factory=dict)
    H3: dict = field(default_factory=dict)
    H6: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    @property
    def passed(self) -> dict:
        return {k: bool(getattr(self, k).get("passed", False)) for k in ("L3", "H1", "H2", "H3", "H6")}

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def failed_checks(self) -> list[str]:
        return [k for k, ok in self.passed.items() if not ok]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema"] = SCHEMA
        d["passed"] = self.passed
        return d

    def to_json(self) -> str:
        return json.dumps(_finite(self.to_dict()), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ConditionReport":
        d = json.loads(text)
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unexpected schema {d.get('schema')!r}")
        return cls(d["backend"], d["epsilon"], d["L3"], d["H1"], d["H2"], d["H3"], d["H6"],
                   d["errors"])

    def h3_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "eps", "measure", "upper_bound"])
        for i, n in enumerate(self.H3.get("n", [])):
            for j, e in enumerate(self.H3["eps"]):
                w.writerow([n, repr(e), repr(self.H3["table"][i][j]), int(self.H3["upper_bound"][i][j])])
        return buf.getvalue()


def _finite(obj):
    """Replace non-finite floats by None so the JSON is standard."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


@dataclass(frozen=True)
class CheckSettings:
    l3_grid: int = 201
    h1_samples: int = 2000
    h2_samples: int = 20000
    h3_samples: int = 100_000
    h3_eps: tuple = (0.1, 0.05, 0.02, 0.01, 0.005)
    h3_n: tuple = tuple(range(0, 11))
    h6_sizes: tuple = (0.05, 0.1, 0.2)
    u_half_angle: float = U_CONE_DEG
    s_half_angle: float = S_CONE_DEG
    lambda_required: float = LAMBDA_REQUIRED
    h1_target: float = H1_TARGET
    h1_tol: float = H1_TOL


def check_conditions(smap: SectionMap, settings: CheckSettings = CheckSettings(),
                     seed: int = 0) -> ConditionReport:
    """Run every check; failures of individual checks are recorded, not raised."""
    rep = ConditionReport(getattr(smap, "backend", "custom"),
                          getattr(getattr(smap, "spec", None), "epsilon", None))
    runs = {
        "L3": lambda: check_L3(smap, settings.l3_grid),
        "H1": lambda: fit_H1(smap, settings.h1_samples, seed, target=settings.h1_target,
                             tol=settings.h1_tol),
        "H2": lambda: check_H2_cones(smap, settings.u_half_angle, settings.h2_samples, seed,
                                     s_half_angle=settings.s_half_angle,
                                     lambda_required=settings.lambda_required),
        "H3": lambda: estimate_H3(smap, settings.h3_eps, settings.h3_n, settings.h3_samples, seed),
        "H6": lambda: check_H6(smap, settings.h6_sizes, seed=seed),
    }
    for key, run in runs.items():
        try:
            setattr(rep, key, run())
        except (ConeBroken, PoorFit) as exc:
            setattr(rep, key, {**(exc.result or {}), "passed": False})
            rep.errors[key] = str(exc)
        except NumericalFailure as exc:
            setattr(rep, key, {"passed": False})
            rep.errors[key] = f"{type(exc).__name__}: {exc}"
    return rep


# failure fixtures: each breaks exactly one check on the geometric backend
FIXTURES = {
    "L3": {"eta": 0.5},
    "H1": {"alpha": 0.9},
    "H2": {"eta": 0.1, "beta": 40.0},
}


def fixture_map(target: str, spec: ImpulseSpec = ImpulseSpec()) -> GeometricPoincare:
    """Geometric map with parameters chosen to violate only ``target``."""
    return GeometricPoincare(GeoParams.unchecked(**FIXTURES[target]), spec)
