"""Command line experiment runner.

Every subcommand reads an optional JSON config, writes its outputs to the
output directory and exits with 0 on success, 2 on configuration errors and 3
on numerical failures.  Errors are reported as one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

import numpy as np

from . import flow_core as fc
from .conditions import check_conditions
from .config import ExperimentConfig, load_config
from .entropy import entropy_from_statistics
from .errors import ConfigError, NumericalFailure
from .experiments import stability_sweep
from .impulse import trajectory_csv
from .measures import (cluster_basins, empirical_invariant_measure, orbit_statistics,
                       suspension_lift)
from .poincare import GeometricPoincare, make_poincare
from .svg import Figure

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COMMANDS = ("simulate", "section-map", "measure", "basins", "entropy", "stability-sweep",
            "check-conditions")


def _chart(cfg: ExperimentConfig) -> fc.SectionChart | None:
    if cfg.backend != "ode":
        return None
    if cfg.lorenz == fc.CLASSICAL:
        return fc.classical_chart()
    return fc.chart_for(cfg.lorenz, cfg.integrator)


def build_map(cfg: ExperimentConfig, eps: float | None = None):
    spec = cfg.impulse if eps is None else cfg.impulse.with_epsilon(eps)
    return make_poincare(cfg.backend, geo=cfg.geo, spec=spec, chart=_chart(cfg),
                         cfg=cfg.integrator)


def _write(out: str, name: str, text: str | bytes) -> str:
    path = os.path.join(out, name)
    mode = "wb" if isinstance(text, bytes) else "w"
    with open(path, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
        fh.write(text)
    return path


def _json(obj) -> str:
    return json.dumps(_finite(obj), indent=2, sort_keys=True) + "\n"


def _finite(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    if isinstance(obj, np.ndarray):
        return _finite(obj.tolist())
    return obj


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: ExperimentConfig, out: str, workers: int) -> dict:
    smap = build_map(cfg)
    system = smap.system
    x = system.entry_state(np.asarray(cfg.simulate.x0, dtype=float))
    traj = system.impulsive_trajectory(x, cfg.simulate.T)
    _write(out, "trajectory.csv", trajectory_csv(traj, system, cfg.simulate.dt))
    info = {"schema": "simulate/1", "taus": traj.taus, "n_impulses": traj.n_impulses,
            "no_return": bool(traj.no_return), "T": cfg.simulate.T}
    _write(out, "taus.json", _json(info))
    return info


def cmd_section_map(cfg: ExperimentConfig, out: str, workers: int) -> dict:
    smap = build_map(cfg)
    z = np.asarray(cfg.simulate.x0, dtype=float).reshape(1, 2)
    rows = []
    for k in range(cfg.simulate.section_steps):
        if smap.singular(z)[0] or not np.all(np.isfinite(z)):
            break
        znext, r = smap.step(z)
        rows.append((k, z[0, 0], z[0, 1], r[0]))
        z = znext
    lines = ["k,u,v,roof"] + [f"{k},{u!r},{v!r},{r!r}" for k, u, v, r in
                              ((k, float(u), float(v), float(r)) for k, u, v, r in rows)]
    _write(out, "section_orbit.csv", "\n".join(lines) + "\n")
    fig = Figure("section orbit", "u", "v")
    fig.add([r[1] for r in rows], [r[2] for r in rows], kind="scatter")
    _write(out, "section_orbit.svg", fig.render())
    return {"schema": "section-map/1", "steps": len(rows),
            "truncated": len(rows) < cfg.simulate.section_steps}


def cmd_measure(cfg: ExperimentConfig, out: str, workers: int) -> dict:
    smap = build_map(cfg)
    m = cfg.measure
    mu = empirical_invariant_measure(smap, m.seeds, m.burn_in, m.orbit_length, cfg.seed,
                                     thin=m.thin, workers=workers)
    _write(out, "measure.csv", mu.to_csv())
    _write(out, "measure.bin", mu.to_bytes())
    sec = mu.integrate()
    sub = mu
    if not isinstance(smap, GeometricPoincare) and mu.size > m.flow_samples:
        idx = np.linspace(0, mu.size - 1, m.flow_samples).astype(int)
        sub = type(mu)(mu.points[idx], mu.weights[idx], mu.seed_index[idx], dict(mu.metadata))
    lift = suspension_lift(sub, smap)
    fig = Figure("empirical invariant measure", "u", "v")
    step = max(1, mu.size // 20000)
    fig.add(mu.points[::step, 0], mu.points[::step, 1], kind="scatter")
    _write(out, "measure.svg", fig.render())
    info = {"schema": "measure/1", "metadata": mu.metadata, "samples": mu.size,
            "section": sec.to_dict(), "lift": lift.to_dict()}
    _write(out, "measure.json", _json(info))
    return {"schema": "measure/1", "samples": mu.size}


def cmd_basins(cfg: ExperimentConfig, out: str, workers: int) -> dict:
    smap = build_map(cfg)
    m = cfg.measure
    st = orbit_statistics(smap, 2 * m.seeds, m.burn_in, m.orbit_length, cfg.seed,
                          degree=m.degree, flow=False, workers=workers)
    means = st.per_seed_section_means()
    rep = cluster_basins(means[:m.seeds], m.basin_tol, st.failed[:m.seeds])
    rep2 = cluster_basins(means, m.basin_tol, st.failed)
    info = {"schema": "basins/1", "epsilon": cfg.impulse.epsilon, "report": rep.to_dict(),
            "doubled_s": rep2.s, "stable": rep.s == rep2.s}
    _write(out, "basins.json", _json(info))
    if rep.s != rep2.s:
        raise NumericalFailure(f"cluster count changed from {rep.s} to {rep2.s} when doubling seeds")
    return info


def cmd_entropy(cfg: ExperimentConfig, out: str, workers: int) -> dict:
    smap = build_map(cfg)
    m, e = cfg.measure, cfg.entropy
    burn = max(m.burn_in, e.align_steps)
    st = orbit_statistics(smap, m.seeds, burn, m.orbit_length, cfg.seed, degree=m.degree,
                          flow=False, tangent=True, align_steps=e.align_steps,
                          cone_half_angle=e.cone_half_angle, workers=workers)
    rep = entropy_from_statistics(st, cfg.impulse.epsilon)
    info = {"schema": "entropy/1", **rep.to_dict()}
    _write(out, "entropy.json", _json(info))
    return info


def cmd_stability_sweep(cfg: ExperimentConfig, out: str, workers: int) -> dict:
    m, e = cfg.measure, cfg.entropy
    res = stability_sweep(lambda eps: build_map(cfg, eps), cfg.epsilons, seeds=m.seeds,
                          burn_in=max(m.burn_in, e.align_steps), n=m.orbit_length, rng_seed=cfg.seed,
                          degree=m.degree, workers=workers, align_steps=e.align_steps,
                          cone_half_angle=e.cone_half_angle)
    d = res.to_dict()
    _write(out, "sweep.json", _json(d))
    _write(out, "sweep.csv", res.to_csv())
    pts = sorted((p for p in res.points if p.error is None), key=lambda p: p.epsilon)
    eps = [p.epsilon for p in pts]
    _write(out, "sweep_distance.svg", Figure("distance to the epsilon = 0 measure", "epsilon",
                                             "weak* proxy distance")
           .add(eps, [p.distance for p in pts], label="flow", yerr=[p.distance_stderr for p in pts])
           .render())
    _write(out, "sweep_entropy.svg", Figure("flow entropy", "epsilon", "h_flow")
           .add(eps, [p.entropy.h_flow for p in pts], label="h_flow",
                yerr=[p.entropy.h_flow_stderr for p in pts]).render())
    return {"schema": d["schema"], "failed": [p.epsilon for p in res.points if p.error]}


def cmd_check_conditions(cfg: ExperimentConfig, out: str, workers: int) -> dict:
    rep = check_conditions(build_map(cfg), cfg.conditions, cfg.seed)
    _write(out, "conditions.json", rep.to_json() + "\n")
    _write(out, "h3_table.csv", rep.h3_csv())
    return {"schema": "condition-report/1", "passed": rep.passed}


HANDLERS = {"simulate": cmd_simulate, "section-map": cmd_section_map, "measure": cmd_measure,
            "basins": cmd_basins, "entropy": cmd_entropy, "stability-sweep": cmd_stability_sweep,
            "check-conditions": cmd_check_conditions}


# --------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="impulsive-lorenz", description="Impulsive Lorenz flow experiments")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="master RNG seed (overrides the config)")
    p.add_argument("--workers", type=int, default=1, help="worker processes")
    p.add_argument("--backend", choices=("ode", "geometric"), help="backend (overrides the config)")
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    kw = {}
    if args.out is not None:
        kw["out"] = args.out
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.backend is not None:
        kw["backend"] = args.backend
    if args.workers is not None and args.workers < 1:
        raise ConfigError("--workers must be at least 1")
    return cfg.replace(**kw) if kw else cfg


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        cfg = resolve_config(args)
        os.makedirs(cfg.out, exist_ok=True)
        _write(cfg.out, "config.json", cfg.to_json() + "\n")
        info = HANDLERS[args.command](cfg, cfg.out, args.workers)
        print(json.dumps(_finite({"command": args.command, "out": cfg.out, **info}), sort_keys=True))
        return EXIT_OK
    except ConfigError as exc:
        _report("ConfigError", str(exc))
        return EXIT_CONFIG
    except NumericalFailure as exc:
        _report(type(exc).__name__, str(exc))
        return EXIT_NUMERIC
    except (ValueError, TypeError) as exc:
        _report("ConfigError", str(exc))
        return EXIT_CONFIG


def _report(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


if __name__ == "__main__":
    sys.exit(main())
