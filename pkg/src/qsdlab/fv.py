"""Discretized Fleming-Viot particle system.

One step advances every particle by the resampling kernel: propose a move,
accept it on survival, and on death restart from a draw of the pre-step
empirical measure (frozen for the whole step), retrying until survival.
The product form over particles makes updates independent within a step;
per-particle counter-based streams keyed by (run seed, step, particle) make
the result reproducible regardless of scheduling and exactly exchangeable
under joint permutation of labels and streams.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels as _k
from ._kernels import (
    KIND_FINITE,
    KIND_GAUSS,
    KIND_REDRAW,
    ResurrectionOverflowError,
)
from .models import KilledModel, kill_prob, propose
from .streams import Stream, substream

__all__ = [
    "FVConfig",
    "ParticleEnsemble",
    "FVReport",
    "q_mu_step",
    "fv_step",
    "fv_step_reference",
    "run_fv",
    "init_states",
    "write_report",
]

_INIT_STREAM = 0  # stream id reserved for drawing the initial ensemble


@dataclass
class FVConfig:
    """Run parameters for the particle system."""

    n_particles: int
    n_steps: int
    seed: int
    gamma: Optional[float] = None
    snapshot_stride: int = 100
    max_resurrection_iters: int = 1_000_000

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be at least 1")
        if self.n_steps < 0:
            raise ValueError("n_steps must be nonnegative")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be positive")
        if self.max_resurrection_iters < 1:
            raise ValueError("max_resurrection_iters must be at least 1")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be positive when given")

    def as_dict(self) -> dict:
        return {
            "n_particles": self.n_particles,
            "n_steps": self.n_steps,
            "seed": self.seed,
            "gamma": self.gamma,
            "snapshot_stride": self.snapshot_stride,
            "max_resurrection_iters": self.max_resurrection_iters,
        }


@dataclass
class ParticleEnsemble:
    """N particle states plus step and death accounting."""

    states: np.ndarray
    step_index: int
    seed: int
    deaths_this_step: int = 0
    cumulative_deaths: int = 0

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]


@dataclass
class FVReport:
    """Everything a run produced: death counts, snapshots, final states."""

    model: dict
    config: dict
    seed: int
    backend: str
    n_particles: int
    gamma: float
    deaths: np.ndarray
    snapshots: list
    final_states: np.ndarray
    geometry: str
    elapsed: float = 0.0

    def snapshot_steps(self):
        return [s for s, _ in self.snapshots]


# ---------------------------------------------------------------------------
# initial ensembles
# ---------------------------------------------------------------------------

def init_states(model: KilledModel, n: int, seed: int, init="uniform") -> np.ndarray:
    """Draw the initial particle array from a sampleable description.

    ``init`` is ``"uniform"`` (uniform over the live space), a pair
    ``("dirac", value)``, or an explicit array of states.
    """
    if isinstance(init, np.ndarray):
        arr = init.copy()
        if model.kind == KIND_FINITE:
            return arr.astype(np.int64).reshape(n)
        return arr.astype(float).reshape(n, model.dim)
    if isinstance(init, (tuple, list)) and len(init) == 2 and init[0] == "dirac":
        if model.kind == KIND_FINITE:
            return np.full(n, int(init[1]), dtype=np.int64)
        return np.tile(np.atleast_1d(np.asarray(init[1], dtype=float)), (n, 1))
    if init != "uniform":
        raise ValueError(f"unknown init spec: {init!r}")
    if model.kind == KIND_FINITE:
        out = np.empty(n, dtype=np.int64)
        n_states = model.chain.n_states
        for i in range(n):
            out[i] = substream(seed, _INIT_STREAM, i).pick(n_states)
        return out
    out = np.empty((n, model.dim))
    for i in range(n):
        rng = substream(seed, _INIT_STREAM, i)
        for kdim in range(model.dim):
            out[i, kdim] = rng.u01()
    return out


# ---------------------------------------------------------------------------
# the resampling kernel, one particle
# ---------------------------------------------------------------------------

def _sample_source(source, rng: Stream):
    if isinstance(source, np.ndarray):
        j = rng.pick(source.shape[0])
        return source[j]
    if hasattr(source, "sample"):
        return source.sample(rng)
    raise TypeError("source must be an array of atoms or expose .sample(rng)")


def q_mu_step(model: KilledModel, x, source, rng: Stream,
              max_iters: int = 1_000_000):
    """Propose from ``x``; on death, resurrect from ``source`` until survival.

    Returns ``(state, deaths)`` where ``deaths`` counts every kill event
    including the initial one.  Raises :class:`ResurrectionOverflowError`
    when the loop exceeds ``max_iters``, which signals a kill probability
    close to 1 on the source's support.
    """
    prop = propose(model, x, rng)
    u = rng.u01()
    deaths = 0
    while u < kill_prob(model, prop):
        deaths += 1
        if deaths > max_iters:
            raise ResurrectionOverflowError(max_iters)
        y = _sample_source(source, rng)
        prop = propose(model, y, rng)
        u = rng.u01()
    return prop, deaths


def _sorted_source(model: KilledModel, states: np.ndarray) -> np.ndarray:
    """Canonically ordered copy of the pre-step states.

    Resurrection draws index this sorted copy, so the draw depends only on
    the multiset of states; that is what makes label permutation commute
    with a step exactly.
    """
    if model.kind == KIND_FINITE:
        return np.sort(states)
    if states.shape[1] == 1:
        return np.sort(states, axis=0)
    order = np.lexsort(tuple(states[:, k] for k in range(states.shape[1] - 1, -1, -1)))
    return states[order].copy()


def fv_step_reference(model: KilledModel, states: np.ndarray, seed: int,
                      step_index: int, stream_ids=None,
                      max_iters: int = 1_000_000):
    """Pure-python one-step update, particle by particle.

    Matches the compiled kernel draw for draw; ``stream_ids`` overrides the
    per-particle stream identity (defaults to the particle's position).
    Returns ``(new_states, deaths)``.
    """
    n = states.shape[0]
    if stream_ids is None:
        stream_ids = np.arange(n)
    src = _sorted_source(model, states)
    out = np.empty_like(states)
    deaths = 0
    sid = step_index + 1
    for i in range(n):
        rng = substream(seed, sid, int(stream_ids[i]))
        xi = states[i] if model.kind != KIND_FINITE else int(states[i])
        new, dd = q_mu_step(model, xi, src, rng, max_iters=max_iters)
        out[i] = new
        deaths += dd
    return out, deaths


# ---------------------------------------------------------------------------
# kernel dispatch
# ---------------------------------------------------------------------------

def _run_chunk(model: KilledModel, states: np.ndarray, seed: int, sid0: int,
               n_steps: int, max_iters: int) -> np.ndarray:
    """Advance ``n_steps`` steps in place; returns per-step death counts."""
    deaths = np.zeros(n_steps, dtype=np.int64)
    if n_steps == 0:
        return deaths
    if model.kind == KIND_GAUSS:
        dpar = np.ascontiguousarray(model.drift_params, dtype=np.float64)
        wrap = model.geometry == "torus"
        for s in range(n_steps):
            src = _sorted_source(model, states)
            d, err = _k.step_gauss(states, src, seed, sid0 + s, model.gamma,
                                   model.drift_id, dpar, model.kill_id,
                                   model.kp0, model.kp1, wrap,
                                   model.noise_scale, max_iters)
            deaths[s] = d
            if err >= 0:
                raise ResurrectionOverflowError(max_iters, step=sid0 - 1 + s,
                                                particle=err)
    elif model.kind == KIND_REDRAW:
        for s in range(n_steps):
            src = _sorted_source(model, states)
            d, err = _k.step_redraw(states, src, seed, sid0 + s, model.gamma,
                                    model.kp0, model.kp1, max_iters)
            deaths[s] = d
            if err >= 0:
                raise ResurrectionOverflowError(max_iters, step=sid0 - 1 + s,
                                                particle=err)
    elif model.kind == KIND_FINITE:
        cum = np.ascontiguousarray(model.cum_rows, dtype=np.float64)
        pk = np.ascontiguousarray(model.p_kill_states, dtype=np.float64)
        mean = model.unif_rate * model.gamma
        for s in range(n_steps):
            src = _sorted_source(model, states)
            d, err = _k.step_finite(states, src, seed, sid0 + s, cum, pk,
                                    mean, max_iters)
            deaths[s] = d
            if err >= 0:
                raise ResurrectionOverflowError(max_iters, step=sid0 - 1 + s,
                                                particle=err)
    else:
        raise NotImplementedError(
            f"the particle engine does not support model kind {model.kind}")
    return deaths


def fv_step(model: KilledModel, ensemble: ParticleEnsemble,
            max_iters: Optional[int] = None) -> ParticleEnsemble:
    """One synchronous step of the particle system.

    Every particle advances by the resampling kernel with the frozen
    pre-step empirical measure as resurrection source; the input ensemble is
    not modified.
    """
    max_iters = 1_000_000 if max_iters is None else max_iters
    states = ensemble.states.copy()
    deaths = _run_chunk(model, states, ensemble.seed, ensemble.step_index + 1,
                        1, max_iters)
    return ParticleEnsemble(states=states, step_index=ensemble.step_index + 1,
                            seed=ensemble.seed,
                            deaths_this_step=int(deaths[0]),
                            cumulative_deaths=ensemble.cumulative_deaths + int(deaths[0]))


def run_fv(model: KilledModel, config: FVConfig, init="uniform") -> FVReport:
    """Run the particle system and collect snapshots and death counts.

    Deterministic given (seed, model, config): the same inputs reproduce the
    report bit for bit, and the snapshot stride has no effect on the
    trajectory itself.
    """
    if config.gamma is not None and abs(config.gamma - model.gamma) > 0:
        raise ValueError("config.gamma disagrees with the model's step size")
    t0 = time.perf_counter()
    states = init_states(model, config.n_particles, config.seed, init)
    deaths = np.zeros(config.n_steps, dtype=np.int64)
    snapshots = [(0, states.copy())]
    done = 0
    while done < config.n_steps:
        chunk = min(config.snapshot_stride, config.n_steps - done)
        deaths[done:done + chunk] = _run_chunk(
            model, states, config.seed, done + 1, chunk,
            config.max_resurrection_iters)
        done += chunk
        snapshots.append((done, states.copy()))
    elapsed = time.perf_counter() - t0
    return FVReport(model=model.describe(), config=config.as_dict(),
                    seed=config.seed, backend=_k.BACKEND,
                    n_particles=config.n_particles, gamma=model.gamma,
                    deaths=deaths, snapshots=snapshots,
                    final_states=states.copy(), geometry=model.geometry,
                    elapsed=elapsed)


# ---------------------------------------------------------------------------
# serialization: JSON metadata plus one CSV per snapshot
# ---------------------------------------------------------------------------

def _format_float(v: float) -> str:
    return repr(float(v))


def write_report(report: FVReport, outdir) -> dict:
    """Write report.json, run_meta.json and snapshots/step_*.csv.

    ``report.json`` and the snapshot CSVs are byte-deterministic functions
    of the run; wall-clock timing goes to the ``run_meta.json`` sidecar.
    """
    import pathlib

    out = pathlib.Path(outdir)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    payload = {
        "model": report.model,
        "config": report.config,
        "seed": report.seed,
        "backend": report.backend,
        "n_particles": report.n_particles,
        "gamma": report.gamma,
        "geometry": report.geometry,
        "deaths_per_step": [int(v) for v in report.deaths],
        "snapshot_steps": [int(s) for s, _ in report.snapshots],
    }
    (out / "report.json").write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n")
    (out / "run_meta.json").write_text(
        json.dumps({"elapsed_seconds": report.elapsed}) + "\n")
    files = {}
    for step, arr in report.snapshots:
        path = out / "snapshots" / f"step_{step:08d}.csv"
        lines = []
        if arr.ndim == 1:
            lines.append("particle,state")
            for i, v in enumerate(arr):
                lines.append(f"{i},{int(v)}")
        else:
            cols = ",".join(f"x{k}" for k in range(arr.shape[1]))
            lines.append(f"particle,{cols}")
            for i in range(arr.shape[0]):
                vals = ",".join(_format_float(v) for v in arr[i])
                lines.append(f"{i},{vals}")
        path.write_text("\n".join(lines) + "\n")
        files[step] = path
    return files
