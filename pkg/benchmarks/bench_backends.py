"""Compare the numba and pure-numpy particle kernels on the same workloads.

The backend is chosen at import time from QSDLAB_NUMBA, so each timing runs
in a fresh subprocess.  Outputs particle-steps per second per model kind and
checks that both backends produce identical death counts for the same seed.

Usage: python benchmarks/bench_backends.py [--quick]
"""

import argparse
import json
import os
import subprocess
import sys

_WORKER = r"""
import json, sys, time
import numpy as np
import qsdlab as q
from qsdlab.fv import FVConfig, run_fv

spec = json.loads(sys.argv[1])
cases = {
    "torus_drift_kill": lambda g: q.TorusDiffusion(
        dim=1, drift=("sine", 0.75), kill=("cosine", 1.0, 1.0)).model(g),
    "interval_hard_kill": lambda g: q.IntervalBrownian().model(g),
    "uniform_redraw": lambda g: q.HouseOfCard(1.0, 1.0).model(g),
    "finite_two_state": lambda g: q.TwoPoint(1.0, 2.0).model(g),
}
out = {"backend": q.BACKEND, "cases": {}}
for name, build in cases.items():
    model = build(spec["gamma"])
    cfg = FVConfig(n_particles=64, n_steps=5, seed=1)
    run_fv(model, cfg)  # warm up (jit compile on the numba backend)
    cfg = FVConfig(n_particles=spec["n_particles"], n_steps=spec["n_steps"],
                   seed=7, snapshot_stride=spec["n_steps"])
    t0 = time.perf_counter()
    rep = run_fv(model, cfg)
    dt = time.perf_counter() - t0
    out["cases"][name] = {
        "seconds": dt,
        "msteps_per_s": spec["n_particles"] * spec["n_steps"] / dt / 1e6,
        "total_deaths": int(rep.deaths.sum()),
        "state_checksum": float(np.asarray(rep.final_states, dtype=float).sum()),
    }
print(json.dumps(out))
"""


def run_backend(numba_flag: str, spec: dict) -> dict:
    env = dict(os.environ)
    env["QSDLAB_NUMBA"] = numba_flag
    proc = subprocess.run([sys.executable, "-c", _WORKER, json.dumps(spec)],
                          env=env, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(proc.stderr)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--quick", action="store_true",
                    help="smaller workload for smoke runs")
    args = ap.parse_args()
    spec = ({"n_particles": 1024, "n_steps": 500, "gamma": 0.01}
            if args.quick else
            {"n_particles": 8192, "n_steps": 2000, "gamma": 0.01})
    results = {flag: run_backend(flag, spec) for flag in ("1", "0")}
    numba_res, numpy_res = results["1"], results["0"]
    print(f"workload: N={spec['n_particles']}, steps={spec['n_steps']}, "
          f"gamma={spec['gamma']}")
    print(f"{'case':<22}{'numba M/s':>12}{'numpy M/s':>12}{'speedup':>9}"
          f"{'deaths agree':>14}")
    agree_all = True
    for name in numba_res["cases"]:
        a = numba_res["cases"][name]
        b = numpy_res["cases"][name]
        agree = a["total_deaths"] == b["total_deaths"]
        agree_all &= agree
        speedup = b["seconds"] / a["seconds"]
        print(f"{name:<22}{a['msteps_per_s']:>12.1f}{b['msteps_per_s']:>12.1f}"
              f"{speedup:>9.2f}{str(agree):>14}")
    if numba_res["backend"] != "numba":
        print("note: numba unavailable, both columns ran the numpy backend")
    return 0 if agree_all else 1


if __name__ == "__main__":
    sys.exit(main())
