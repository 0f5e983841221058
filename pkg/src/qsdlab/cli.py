"""Experiment runner: wires models to the engine, oracles and metrics.

Usage:  qsdlab <mode> --config <file> [--jobs k] [--seed s]

Modes
-----
simulate   run the particle system, write report.json + snapshot CSVs
oracle     exact QSDs, eigen-elements and survival curves, CSV + JSON
harris     drift/minorization certificate search, JSON
sweep      grid over (gamma, N, horizon, seed), CSV rows + fitted-rate summary
demo       built-in named experiments (noncommutation, a3_failure)

Exit codes: 0 success, 2 bad config (includes unknown presets and invalid
parameters), 3 runtime failure, 4 unwritable output.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import math
import os
import pathlib
import sys

import numpy as np

from . import _kernels as _k
from .config import ConfigError, ExperimentConfig, load_config
from .fv import FVConfig, run_fv, write_report
from .harris import check_irreducibility, search_lyapunov_pair, verify_conclusion
from .metrics import (
    EmpiricalMeasure,
    estimate_theta,
    fit_exponential_rate,
    fit_power_law,
    w1_auto,
)
from .models import (
    BirthDeath,
    GrowthFrag,
    HouseOfCard,
    IntervalBrownian,
    PeriodicShift,
    TorusDiffusion,
    TwoPoint,
    analytic_qsd,
    propose,
)
from .oracle import (
    EigenTriplet,
    grid_generator,
    killed_semigroup,
    list_qsds,
    perron_triplet,
    survival_curve,
)
from .streams import substream

EXIT_OK = 0
EXIT_BAD_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_IO = 4

CSV_SCHEMA = "qsdlab-sweep-csv v1"

_EPILOG = """\
exit codes:
  0  success
  2  bad config: parse error, unknown key, unknown preset, invalid
     parameters, empty sweep lists
  3  runtime failure during simulation or analysis
  4  output directory cannot be created or written

The default output root is $QSDLAB_OUTPUT_DIR, else ./qsdlab_out.

config file layout (JSON, unknown keys rejected):
  {
    "mode": "simulate|oracle|harris|sweep",
    "model": {"name": "<preset>", "params": {...}},
    "seed": 1234,
    "output_dir": "out",            # optional
    "fv":     {"n_particles":..,"gamma":..,"n_steps":..,
               "snapshot_stride":..,"max_resurrection_iters":..,"init":..},
    "oracle": {"n_grid":..,"t0":..,"survival_steps":..,"conditional_iters":..},
    "harris": {"t0":..,"family":"geometric","q1_grid":[..],"q2_grid":[..],
               "k_fractions":[..],"n_max":..},
    "sweep":  {"gammas":[..],"n_particles":[..],"horizons":[..],
               "n_seeds":..,"burn_fraction":..,"n_grid":..,"oracle_t0":..},
    "metrics": ["w1_timeavg","w1_instant","w1_pooled","theta_hat"]
  }

presets: two_point(a,b); house_of_card(c,q); birth_death(b,d,b1,d1,
truncation); periodic_shift(); growth_frag(growth,frac,jump_rate,kill_rate);
torus_diffusion(dim,drift,kill); interval_brownian()
"""


def _json_dump(obj, path: pathlib.Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _model_hash(desc: dict) -> str:
    blob = json.dumps(desc, sort_keys=True).encode()
    return hashlib.sha1(blob).hexdigest()[:12]


def _out_dir(cfg: ExperimentConfig, cli_out=None) -> pathlib.Path:
    root = cli_out or cfg.output_dir or os.environ.get("QSDLAB_OUTPUT_DIR") \
        or "qsdlab_out"
    return pathlib.Path(root)


def _prepare_dir(path: pathlib.Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise _IOFailure(f"output directory {path} is not writable: {exc}") from exc


class _IOFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# oracle helpers
# ---------------------------------------------------------------------------

_GRID_PRESETS = (HouseOfCard, TorusDiffusion, IntervalBrownian)


def _chain_for(preset, oracle_cfg: dict):
    if isinstance(preset, (TwoPoint, BirthDeath)):
        return preset.chain()
    if isinstance(preset, _GRID_PRESETS):
        return grid_generator(preset, int(oracle_cfg.get("n_grid", 2000)))
    raise ConfigError(f"{type(preset).__name__} has no finite-chain oracle")


def _default_t0(preset, chain) -> float:
    if isinstance(preset, IntervalBrownian):
        return 0.06
    if isinstance(preset, TorusDiffusion):
        return 0.25
    if isinstance(preset, HouseOfCard):
        return 1.0
    lam = chain.uniformization_rate()
    return 10.0 / lam if lam > 0 else 1.0


def _qsd_csv(path: pathlib.Path, chain, components) -> None:
    lines = ["state,position,label," + ",".join(
        f"qsd{i}" for i in range(len(components)))]
    pos = chain.positions
    labels = chain.labels
    for s in range(chain.n_states):
        p = "" if pos is None else repr(float(pos[s]))
        lab = "" if labels is None else str(labels[s])
        vals = ",".join(repr(float(c.qsd[s])) for c in components)
        lines.append(f"{s},{p},{lab},{vals}")
    path.write_text("\n".join(lines) + "\n")


def _run_oracle(cfg: ExperimentConfig, out: pathlib.Path) -> None:
    preset = cfg.preset()
    chain = _chain_for(preset, cfg.oracle)
    t0 = float(cfg.oracle.get("t0", _default_t0(preset, chain)))
    m = killed_semigroup(chain, t0)
    comps = list_qsds(m)
    trip = perron_triplet(m)
    payload = {
        "model": {"name": cfg.model_name, "params": cfg.model_params},
        "t0": t0,
        "n_states": chain.n_states,
        "primitive": isinstance(trip, EigenTriplet),
        "qsds": [
            {"theta": c.theta,
             "class_states": [int(i) for i in c.class_states],
             "weights": [float(v) for v in c.qsd]}
            for c in comps
        ],
    }
    if isinstance(trip, EigenTriplet):
        payload["triplet"] = {
            "theta": trip.theta,
            "rho": trip.rho,
            "converged": trip.converged,
            "iterations": trip.iterations,
            "residual_left": trip.residual_left,
            "residual_right": trip.residual_right,
            "gamma_left": [float(v) for v in trip.gamma_left],
            "h": [float(v) for v in trip.h],
        }
    else:
        payload["reducibility"] = str(trip)
    closed = analytic_qsd(preset)
    if closed:
        payload["closed_forms"] = [
            {"theta": c.theta, "regime": c.regime,
             "atom": c.atom, "atom_weight": c.atom_weight}
            for c in closed
        ]
    n_surv = int(cfg.oracle.get("survival_steps", 50))
    if comps:
        surv = survival_curve(m, comps[0].qsd, n_surv)
        payload["survival_from_qsd"] = [float(v) for v in surv]
    if chain.n_states <= 256:  # grids would dump megabytes of matrix
        payload["chain"] = chain.as_dict()
    _json_dump(payload, out / "oracle.json")
    _qsd_csv(out / "qsd.csv", chain, comps)


# ---------------------------------------------------------------------------
# harris mode
# ---------------------------------------------------------------------------

def _run_harris(cfg: ExperimentConfig, out: pathlib.Path) -> None:
    preset = cfg.preset()
    chain = _chain_for(preset, cfg.oracle)
    hc = cfg.harris
    cert, m = search_lyapunov_pair(
        chain,
        family=hc.get("family", "geometric"),
        t0=hc.get("t0"),
        q1_grid=hc.get("q1_grid"),
        q2_grid=hc.get("q2_grid"),
        k_fractions=tuple(hc.get("k_fractions", (0.05, 0.1, 0.25, 0.5, 0.9))),
        n_max=int(hc.get("n_max", 50)),
    )
    payload = {"model": {"name": cfg.model_name, "params": cfg.model_params},
               "certificate": cert.as_dict()}
    eps, ok = check_irreducibility(chain, cert.K, cert.t0)
    payload["irreducibility"] = {"epsilon": eps, "pass": bool(ok),
                                 "t0": cert.t0}
    if cert.all_pass:
        rep = verify_conclusion(m, cert)
        payload["conclusion"] = {
            "theta": rep.theta,
            "eig_lower_slack": rep.eig_lower_slack,
            "eig_upper_slack": rep.eig_upper_slack,
            "bounds_hold": rep.bounds_hold,
            "gamma_of_V": rep.gamma_of_V,
            "c2": rep.c2,
            "c1_by_q": {str(k): v for k, v in rep.c1_by_q.items()},
            "omega_fit": rep.omega_fit,
            "omega_r2": rep.omega_r2,
        }
    _json_dump(payload, out / "certificate.json")


# ---------------------------------------------------------------------------
# simulate mode
# ---------------------------------------------------------------------------

def _build_model(cfg: ExperimentConfig, gamma: float):
    return cfg.preset().model(gamma)


def _run_simulate(cfg: ExperimentConfig, out: pathlib.Path) -> None:
    fvc = cfg.fv
    model = _build_model(cfg, float(fvc["gamma"]))
    config = FVConfig(n_particles=int(fvc["n_particles"]),
                      n_steps=int(fvc["n_steps"]),
                      seed=cfg.seed,
                      gamma=float(fvc["gamma"]),
                      snapshot_stride=int(fvc.get("snapshot_stride", 100)),
                      max_resurrection_iters=int(
                          fvc.get("max_resurrection_iters", 1_000_000)))
    init = fvc.get("init", "uniform")
    if isinstance(init, list) and len(init) == 2 and init[0] == "dirac":
        init = ("dirac", init[1])
    report = run_fv(model, config, init=init)
    write_report(report, out)


# ---------------------------------------------------------------------------
# sweep mode
# ---------------------------------------------------------------------------

def _oracle_measure(cfg: ExperimentConfig):
    preset = cfg.preset()
    chain = _chain_for(preset, {"n_grid": cfg.sweep.get("n_grid", 2000)})
    t0 = float(cfg.sweep.get("oracle_t0", _default_t0(preset, chain)))
    m = killed_semigroup(chain, t0)
    trip = perron_triplet(m)
    if not isinstance(trip, EigenTriplet):
        raise RuntimeError(f"sweep oracle needs a primitive chain: {trip}")
    return EmpiricalMeasure(chain.positions, trip.gamma_left,
                            geometry=chain.geometry)


def _sweep_point(cfg, gamma, n_particles, horizons, seed, oracle_m, burn_frac):
    model = _build_model(cfg, gamma)
    t_max = max(horizons)
    n_steps = int(round(t_max / gamma))
    stride = int(cfg.sweep.get("snapshot_stride",
                               max(1, n_steps // 200)))
    report = run_fv(model, FVConfig(n_particles=n_particles, n_steps=n_steps,
                                    seed=seed, snapshot_stride=stride))
    geometry = model.geometry
    wanted = cfg.metrics or ["w1_timeavg", "w1_instant", "w1_pooled",
                             "theta_hat"]
    rows = []
    snaps = report.snapshots
    for t in horizons:
        upto = int(round(t / gamma))
        burn = int(burn_frac * upto)
        window = [(s, arr) for s, arr in snaps if burn < s <= upto]
        if not window:
            continue
        if "w1_instant" in wanted:
            arr = window[-1][1]
            w = w1_auto(EmpiricalMeasure(arr[:, 0], geometry=geometry), oracle_m)
            rows.append((t, "w1_instant", w, 0.0, arr.shape[0]))
        if "w1_timeavg" in wanted:
            ws = [w1_auto(EmpiricalMeasure(arr[:, 0], geometry=geometry),
                          oracle_m) for _, arr in window]
            ws = np.asarray(ws)
            se = float(ws.std(ddof=1) / math.sqrt(len(ws))) if len(ws) > 1 else 0.0
            rows.append((t, "w1_timeavg", float(ws.mean()), se, len(ws)))
        if "w1_pooled" in wanted:
            pooled = np.concatenate([arr[:, 0] for _, arr in window])
            w = w1_auto(EmpiricalMeasure(pooled, geometry=geometry), oracle_m)
            rows.append((t, "w1_pooled", w, 0.0, pooled.size))
        if "theta_hat" in wanted:
            est = estimate_theta(_clip_report(report, upto), burn)
            rows.append((t, "theta_hat", est.value, est.stderr, est.n_steps))
    return rows


def _clip_report(report, upto):
    import copy

    clipped = copy.copy(report)
    clipped.deaths = report.deaths[:upto]
    return clipped


def _run_sweep(cfg: ExperimentConfig, out: pathlib.Path, jobs: int) -> None:
    sw = cfg.sweep
    gammas = [float(g) for g in sw["gammas"]]
    ns = [int(n) for n in sw["n_particles"]]
    horizons = [float(t) for t in sw["horizons"]]
    n_seeds = int(sw.get("n_seeds", 1))
    burn_frac = float(sw.get("burn_fraction", 0.5))
    oracle_m = _oracle_measure(cfg)
    mhash = _model_hash({"name": cfg.model_name, "params": cfg.model_params})

    points = []
    for gi, gamma in enumerate(gammas):
        for ni, n in enumerate(ns):
            for si in range(n_seeds):
                seed = _k.derive_key(cfg.seed, len(points), 0) % (2 ** 62)
                points.append((gamma, n, seed))

    def work(idx):
        gamma, n, seed = points[idx]
        return _sweep_point(cfg, gamma, n, horizons, seed, oracle_m, burn_frac)

    results = {}
    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            futs = {pool.submit(work, i): i for i in range(len(points))}
            for fut in concurrent.futures.as_completed(futs):
                results[futs[fut]] = fut.result()
    else:
        for i in range(len(points)):
            results[i] = work(i)

    lines = [f"# {CSV_SCHEMA}",
             "metric,value,stderr,n,gamma,n_particles,horizon,seed,model_hash"]
    table = {}
    for i in range(len(points)):
        gamma, n, seed = points[i]
        for t, name, value, stderr, count in results[i]:
            lines.append(f"{name},{value!r},{stderr!r},{count},{gamma!r},"
                         f"{n},{t!r},{seed},{mhash}")
            table.setdefault((name, gamma, n, t), []).append(value)
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")

    summary = {"model_hash": mhash, "n_points": len(points)}
    t_last = max(horizons)
    # fluctuation rate: time-averaged distance against N at the last horizon
    if len(ns) >= 3:
        means = [float(np.mean(table[("w1_timeavg", gammas[0], n, t_last)]))
                 for n in ns if ("w1_timeavg", gammas[0], n, t_last) in table]
        if len(means) == len(ns):
            fit = fit_power_law(ns, means)
            summary["w1_vs_n"] = {"slope": fit.slope, "r2": fit.r2,
                                  "gamma": gammas[0], "values": means,
                                  "n_particles": ns}
    # step-size bias: pooled distance against gamma at the largest N
    if len(gammas) >= 3:
        n_big = max(ns)
        vals = [float(np.mean(table[("w1_pooled", g, n_big, t_last)]))
                for g in gammas if ("w1_pooled", g, n_big, t_last) in table]
        if len(vals) == len(gammas):
            fit = fit_power_law(gammas, vals)
            summary["w1_vs_gamma"] = {"slope": fit.slope, "r2": fit.r2,
                                      "n_particles": n_big, "values": vals,
                                      "gammas": gammas}
    # relaxation: instantaneous distance against horizon at the largest point
    if len(horizons) >= 3:
        n_big, g0 = max(ns), gammas[0]
        vals = [float(np.mean(table[("w1_instant", g0, n_big, t)]))
                for t in horizons if ("w1_instant", g0, n_big, t) in table]
        if len(vals) >= 3 and all(v > 0 for v in vals):
            fit = fit_exponential_rate(horizons[: len(vals)], vals)
            summary["w1_vs_horizon"] = {"rate": fit.rate, "r2": fit.r2}
    _json_dump(summary, out / "summary.json")


# ---------------------------------------------------------------------------
# demos
# ---------------------------------------------------------------------------

def _demo_noncommutation(out: pathlib.Path, seed: int) -> None:
    """Particle mass on the transient state for several (N, steps) orders.

    For the two-state chain with the kill rate exceeding the jump rate, the
    large-N limit at fixed time keeps mass on the transient state while the
    long-time limit at fixed N is absorbed at the dying state, so the two
    limits do not commute.  Output is descriptive.
    """
    tp = TwoPoint(1.0, 2.0)
    gamma = 0.1
    model = tp.model(gamma)
    replicates = 48
    rows = []
    for n in (2, 16, 256):
        for steps in (20, 200, 2000):
            mass = 0.0
            for r in range(replicates):
                seed_r = _k.derive_key(seed, n * 100003 + steps, r) % (2 ** 62)
                rep = run_fv(model, FVConfig(n_particles=n, n_steps=steps,
                                             seed=seed_r,
                                             snapshot_stride=steps),
                             init=("dirac", TwoPoint.TRANSIENT))
                mass += float(np.mean(rep.final_states == TwoPoint.TRANSIENT))
            rows.append({"n_particles": n, "steps": steps,
                         "time": steps * gamma,
                         "mean_transient_mass": mass / replicates})
    lines = ["n_particles,steps,time,mean_transient_mass"]
    for r in rows:
        lines.append(f"{r['n_particles']},{r['steps']},{r['time']!r},"
                     f"{r['mean_transient_mass']!r}")
    (out / "noncommutation.csv").write_text("\n".join(lines) + "\n")
    _json_dump({"replicates": replicates, "gamma": gamma,
                "limit_mass_large_n": 0.5, "rows": rows},
               out / "noncommutation.json")


def _demo_a3_failure(out: pathlib.Path, seed: int) -> None:
    """Dirac initial laws stay supported on finitely many points.

    The rotation model moves a point mass deterministically, and the
    growth/fragmentation model reaches at most n+1 values after n steps, so
    neither can satisfy a minorization by a fixed measure with a density.
    """
    n_steps, n_particles = 60, 512
    shift = PeriodicShift().model(0.05)
    gf = GrowthFrag(growth=1.0, frac=0.5, jump_rate=1.0).model(0.05)
    results = {}
    for name, model, x0 in (("periodic_shift", shift, np.array([0.25])),
                            ("growth_frag", gf, np.array([1.0]))):
        states = np.tile(x0, (n_particles, 1))
        counts = []
        for step in range(1, n_steps + 1):
            for i in range(n_particles):
                rng = substream(seed, step, i)
                states[i] = propose(model, states[i], rng)
            counts.append(int(np.unique(np.round(states[:, 0], 12)).size))
        results[name] = {"distinct_support_per_step": counts,
                         "bound": [s + 1 for s in range(1, n_steps + 1)]}
    _json_dump(results, out / "a3_failure.json")


_DEMOS = {"noncommutation": _demo_noncommutation, "a3_failure": _demo_a3_failure}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="qsdlab",
        description=__doc__.split("\n\n")[0],
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="mode", required=True)
    for mode in ("simulate", "oracle", "harris", "sweep"):
        p = sub.add_parser(mode)
        p.add_argument("--config", required=True)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--output-dir", default=None)
    pd = sub.add_parser("demo")
    pd.add_argument("--name", required=True, choices=sorted(_DEMOS))
    pd.add_argument("--seed", type=int, default=2024)
    pd.add_argument("--output-dir", default=None)
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.mode == "demo":
            out = pathlib.Path(args.output_dir
                               or os.environ.get("QSDLAB_OUTPUT_DIR")
                               or "qsdlab_out")
            _prepare_dir(out)
            _DEMOS[args.name](out, args.seed)
            print(f"demo {args.name}: wrote {out}")
            return EXIT_OK
        cfg = load_config(args.config)
        if cfg.mode != args.mode:
            raise ConfigError(f"config mode {cfg.mode!r} does not match "
                              f"command {args.mode!r}")
        if args.seed is not None:
            cfg.seed = args.seed
        out = _out_dir(cfg, args.output_dir)
        _prepare_dir(out)
        if args.mode == "simulate":
            _run_simulate(cfg, out)
        elif args.mode == "oracle":
            _run_oracle(cfg, out)
        elif args.mode == "harris":
            _run_harris(cfg, out)
        elif args.mode == "sweep":
            _run_sweep(cfg, out, max(1, args.jobs))
        print(f"{args.mode}: wrote {out}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"qsdlab: bad config: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except _IOFailure as exc:
        print(f"qsdlab: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # runtime failures get a distinct code
        print(f"qsdlab: runtime error: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
