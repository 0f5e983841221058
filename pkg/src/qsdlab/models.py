"""Killed Markov models behind a uniform propose-then-kill interface.

Every model advances in discrete time with step size ``gamma``: propose a
move, then evaluate a kill probability at the proposed point.  Soft killing
uses ``p(x) = 1 - exp(-gamma * rate(x))``; hard killing is the indicator of
leaving an open domain.  Finite chains advance their conservative jump part
by exact uniformization (Poisson number of sub-steps of ``I + Q/rate``), so
their one-step law can be compared against a matrix oracle with no
time-discretization error in the jump part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._kernels import (
    DRIFT_CONST,
    DRIFT_SINE,
    DRIFT_ZERO,
    KILL_CONST,
    KILL_COSINE,
    KILL_HARD_INTERVAL,
    KILL_NONE,
    KILL_POWER,
    KIND_FINITE,
    KIND_GAUSS,
    KIND_GROWTHFRAG,
    KIND_REDRAW,
)
from .streams import Stream

__all__ = [
    "KilledModel",
    "FiniteKilledChain",
    "ModelEvaluationError",
    "propose",
    "kill_prob",
    "analytic_qsd",
    "ClosedFormQsd",
    "TwoPoint",
    "HouseOfCard",
    "BirthDeath",
    "PeriodicShift",
    "GrowthFrag",
    "TorusDiffusion",
    "IntervalBrownian",
    "discrete_model",
    "PRESETS",
    "build_preset",
]

_TWO_PI = 2.0 * math.pi


class ModelEvaluationError(ValueError):
    """A model produced a non-finite value during evaluation."""


# ---------------------------------------------------------------------------
# finite chains
# ---------------------------------------------------------------------------

@dataclass
class FiniteKilledChain:
    """Continuous-time chain on a finite state set with per-state kill rates.

    ``jump_rates[i, j]`` is the rate of jumping i -> j (zero diagonal);
    ``kill_rates[i]`` is the rate of being sent to the cemetery from i.
    The killed generator is ``A = Q - diag(kill_rates)`` where Q is the
    conservative generator built from the jump rates.
    """

    jump_rates: np.ndarray
    kill_rates: np.ndarray
    labels: Optional[tuple] = None
    positions: Optional[np.ndarray] = None
    geometry: str = "finite"
    name: str = "chain"

    def __post_init__(self):
        self.jump_rates = np.asarray(self.jump_rates, dtype=float)
        self.kill_rates = np.asarray(self.kill_rates, dtype=float)
        n = self.jump_rates.shape[0]
        if self.jump_rates.shape != (n, n):
            raise ValueError("jump_rates must be square")
        if self.kill_rates.shape != (n,):
            raise ValueError("kill_rates must have one entry per state")
        if not np.all(np.isfinite(self.jump_rates)) or not np.all(np.isfinite(self.kill_rates)):
            raise ValueError("rates must be finite")
        if np.any(self.jump_rates < 0) or np.any(self.kill_rates < 0):
            raise ValueError("rates must be nonnegative")
        if np.any(np.diagonal(self.jump_rates) != 0.0):
            raise ValueError("jump_rates must have zero diagonal")

    @property
    def n_states(self) -> int:
        return self.jump_rates.shape[0]

    def as_dict(self) -> dict:
        """JSON-ready form; dense matrices as row-major nested lists."""
        return {
            "name": self.name,
            "geometry": self.geometry,
            "n_states": self.n_states,
            "jump_rates": [[float(v) for v in row] for row in self.jump_rates],
            "kill_rates": [float(v) for v in self.kill_rates],
            "labels": None if self.labels is None else [str(s) for s in self.labels],
            "positions": None if self.positions is None
            else [float(v) for v in self.positions],
        }

    def conservative_generator(self) -> np.ndarray:
        q = self.jump_rates.copy()
        np.fill_diagonal(q, 0.0)
        q[np.diag_indices_from(q)] = -q.sum(axis=1)
        return q

    def generator(self) -> np.ndarray:
        a = self.conservative_generator()
        a[np.diag_indices_from(a)] -= self.kill_rates
        return a

    def uniformization_rate(self) -> float:
        """Bound on total outflow (jumps plus kill) over all states."""
        return float((self.jump_rates.sum(axis=1) + self.kill_rates).max())

    def conservative_rate(self) -> float:
        return float(self.jump_rates.sum(axis=1).max())


# ---------------------------------------------------------------------------
# killed models (discrete-time, propose/kill form)
# ---------------------------------------------------------------------------

@dataclass
class KilledModel:
    """A discrete-time killed model usable by the particle engine."""

    name: str
    geometry: str                  # "torus" | "interval" | "finite" | "halfline"
    dim: int
    gamma: float
    kind: int
    drift_id: int = DRIFT_ZERO
    drift_params: np.ndarray = field(default_factory=lambda: np.zeros(1))
    kill_id: int = KILL_NONE
    kp0: float = 0.0
    kp1: float = 0.0
    noise_scale: float = 1.0
    gamma_max: Optional[float] = None
    # finite-chain payload
    chain: Optional[FiniteKilledChain] = None
    cum_rows: Optional[np.ndarray] = None
    p_kill_states: Optional[np.ndarray] = None
    unif_rate: float = 0.0
    # growth-fragmentation payload (constants)
    gf_growth: float = 0.0
    gf_frac: float = 0.5
    gf_jump_rate: float = 0.0
    gf_kill_rate: float = 0.0

    def __post_init__(self):
        if not (self.gamma > 0.0) or not math.isfinite(self.gamma):
            raise ValueError("gamma must be a positive real")
        if self.gamma_max is not None and self.gamma > self.gamma_max:
            raise ValueError(f"gamma={self.gamma} exceeds the model's gamma_max={self.gamma_max}")
        self.drift_params = np.asarray(self.drift_params, dtype=float)
        if self.kill_id == KILL_CONST and self.kp0 < 0:
            raise ValueError("constant kill rate must be nonnegative")
        if self.kill_id == KILL_COSINE and not (0.0 <= self.kp1 <= self.kp0):
            raise ValueError("cosine kill rate needs 0 <= amplitude <= level")
        if self.kill_id == KILL_POWER and (self.kp0 < 0 or self.kp1 < 0):
            raise ValueError("power kill rate needs nonnegative coefficient and exponent")

    def describe(self) -> dict:
        d = {
            "name": self.name,
            "geometry": self.geometry,
            "dim": self.dim,
            "gamma": self.gamma,
            "kind": self.kind,
            "drift_id": self.drift_id,
            "drift_params": [float(v) for v in np.atleast_1d(self.drift_params)],
            "kill_id": self.kill_id,
            "kp0": self.kp0,
            "kp1": self.kp1,
            "noise_scale": self.noise_scale,
        }
        if self.chain is not None:
            d["n_states"] = self.chain.n_states
        return d

    def kill_rate(self, x) -> float:
        """Per-unit-time kill rate at a point (soft-kill families only)."""
        if self.kind == KIND_FINITE:
            return float(self.chain.kill_rates[int(x)])
        x0 = float(np.atleast_1d(np.asarray(x, dtype=float))[0])
        if self.kill_id == KILL_CONST:
            return self.kp0
        if self.kill_id == KILL_COSINE:
            return self.kp0 + self.kp1 * math.cos(_TWO_PI * x0)
        if self.kill_id == KILL_POWER:
            return self.kp0 * x0 ** self.kp1
        if self.kill_id == KILL_NONE:
            return 0.0
        raise ValueError("hard-kill models have no finite kill rate")


def _drift_at(model: KilledModel, y: np.ndarray) -> np.ndarray:
    if model.drift_id == DRIFT_CONST:
        return model.drift_params[: model.dim]
    if model.drift_id == DRIFT_SINE:
        out = np.zeros(model.dim)
        out[0] = model.drift_params[0] * math.sin(_TWO_PI * y[0])
        return out
    return np.zeros(model.dim)


def propose(model: KilledModel, x, rng: Stream):
    """One proposal move from ``x``; does not evaluate the kill decision.

    Continuous kinds take and return a length-``dim`` float array; finite
    chains take and return a state index.  The draw accounting matches the
    particle engine exactly, so a particle step can be replayed with the
    same stream.
    """
    if model.kind == KIND_FINITE:
        return _propose_finite(model, int(x), rng)
    if model.kind == KIND_REDRAW:
        return _propose_redraw(model, np.atleast_1d(np.asarray(x, dtype=float)), rng)
    if model.kind == KIND_GROWTHFRAG:
        return _propose_growthfrag(model, np.atleast_1d(np.asarray(x, dtype=float)), rng)
    return _propose_gauss(model, np.atleast_1d(np.asarray(x, dtype=float)), rng)


def _propose_gauss(model: KilledModel, x: np.ndarray, rng: Stream) -> np.ndarray:
    d = model.dim
    sqrtg = math.sqrt(model.gamma)
    b = _drift_at(model, x)
    if not np.all(np.isfinite(b)):
        raise ModelEvaluationError(f"drift is not finite at {x!r}")
    out = np.empty(d)
    for k in range(d):
        z = rng.normal()
        out[k] = x[k] + model.gamma * b[k] + sqrtg * model.noise_scale * z
    if model.geometry == "torus":
        out -= np.floor(out)
    return out


def _propose_redraw(model: KilledModel, x: np.ndarray, rng: Stream) -> np.ndarray:
    p_move = 1.0 - math.exp(-model.gamma)
    if rng.u01() < p_move:
        return np.array([rng.u01()])
    return x.copy()


def _propose_finite(model: KilledModel, x: int, rng: Stream) -> int:
    mean = model.unif_rate * model.gamma
    njumps = rng.poisson(mean)
    n_states = model.chain.n_states
    for _ in range(njumps):
        u = rng.u01()
        x = int(np.searchsorted(model.cum_rows[x], u, side="right"))
        if x >= n_states:
            x = n_states - 1
    return x


def _propose_growthfrag(model: KilledModel, x: np.ndarray, rng: Stream) -> np.ndarray:
    y = x[0] * math.exp(model.gamma * model.gf_growth)
    if rng.u01() < 1.0 - math.exp(-model.gamma * model.gf_jump_rate):
        y = model.gf_frac * y
    return np.array([y])


def kill_prob(model: KilledModel, x_proposed) -> float:
    """Kill probability evaluated at the proposed (post-move) point."""
    if model.kind == KIND_FINITE:
        return float(model.p_kill_states[int(x_proposed)])
    x = np.atleast_1d(np.asarray(x_proposed, dtype=float))
    if model.kill_id == KILL_NONE:
        return 0.0
    if model.kill_id == KILL_HARD_INTERVAL:
        return 0.0 if (model.kp0 < x[0] < model.kp1) else 1.0
    if model.kind == KIND_GROWTHFRAG:
        return 1.0 - math.exp(-model.gamma * model.gf_kill_rate)
    return 1.0 - math.exp(-model.gamma * model.kill_rate(x))


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoPoint:
    """Two-state chain: the transient state jumps to the dying state at rate
    ``a``; the dying state is killed at rate ``b`` and never jumps."""

    a: float
    b: float

    DYING = 0
    TRANSIENT = 1

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("two_point needs a > 0 and b > 0")

    def chain(self) -> FiniteKilledChain:
        q = np.zeros((2, 2))
        q[self.TRANSIENT, self.DYING] = self.a
        return FiniteKilledChain(q, np.array([self.b, 0.0]),
                                 labels=("dying", "transient"), name="two_point")

    def model(self, gamma: float) -> KilledModel:
        return discrete_model(self.chain(), gamma, name="two_point")


@dataclass(frozen=True)
class HouseOfCard:
    """State on [0,1], redrawn uniformly at rate 1, killed at rate c*x**q."""

    c: float
    q: float

    def __post_init__(self):
        if self.c < 0 or self.q < 0:
            raise ValueError("house_of_card needs c >= 0 and q >= 0")

    def model(self, gamma: float) -> KilledModel:
        return KilledModel(name="house_of_card", geometry="interval", dim=1,
                           gamma=gamma, kind=KIND_REDRAW,
                           kill_id=KILL_POWER, kp0=self.c, kp1=self.q)

    def kill_rate(self, x):
        return self.c * np.asarray(x, dtype=float) ** self.q


@dataclass(frozen=True)
class BirthDeath:
    """Birth-death chain on {1..truncation} with reflecting cap.

    Interior states move up at rate ``b`` and down at rate ``d``; the lowest
    state moves up at rate ``b1`` and is killed at rate ``d1``.  The cap is
    reflecting: the top state simply has no up-jump.
    """

    b: float
    d: float
    b1: float
    d1: float
    truncation: int = 200

    def __post_init__(self):
        if min(self.b, self.d, self.b1, self.d1) <= 0:
            raise ValueError("birth_death rates must be positive")
        if self.truncation < 3:
            raise ValueError("truncation must be at least 3")

    def chain(self) -> FiniteKilledChain:
        n = self.truncation
        q = np.zeros((n, n))
        q[0, 1] = self.b1
        for i in range(1, n - 1):
            q[i, i + 1] = self.b
            q[i, i - 1] = self.d
        q[n - 1, n - 2] = self.d
        kill = np.zeros(n)
        kill[0] = self.d1
        return FiniteKilledChain(q, kill, positions=np.arange(1, n + 1, dtype=float),
                                 name="birth_death")

    def criterion_value(self) -> float:
        """Sign decides whether the renormalized law converges to a unique
        quasi-stationary distribution for the untruncated chain."""
        return ((math.sqrt(self.b) - math.sqrt(self.d)) ** 2
                + self.b1 * (math.sqrt(self.d / self.b) - 1.0) - self.d1)

    def model(self, gamma: float) -> KilledModel:
        return discrete_model(self.chain(), gamma, name="birth_death")


@dataclass(frozen=True)
class PeriodicShift:
    """Deterministic rotation of the 1-torus at unit speed, never killed."""

    speed: float = 1.0

    def model(self, gamma: float) -> KilledModel:
        return KilledModel(name="periodic_shift", geometry="torus", dim=1,
                           gamma=gamma, kind=KIND_GAUSS,
                           drift_id=DRIFT_CONST, drift_params=np.array([self.speed]),
                           noise_scale=0.0)


@dataclass(frozen=True)
class GrowthFrag:
    """Exponential growth with multiplicative down-jumps on the half-line.

    From a single starting point the reachable set after n steps has at most
    n + 1 values, which is the mechanism that defeats any fixed minorization
    measure with a density.
    """

    growth: float = 1.0
    frac: float = 0.5
    jump_rate: float = 1.0
    kill_rate: float = 0.0

    def __post_init__(self):
        if not (0 < self.frac < 1):
            raise ValueError("frac must lie in (0, 1)")
        if self.growth <= 0 or self.jump_rate < 0 or self.kill_rate < 0:
            raise ValueError("invalid growth_frag parameters")

    def model(self, gamma: float) -> KilledModel:
        return KilledModel(name="growth_frag", geometry="halfline", dim=1,
                           gamma=gamma, kind=KIND_GROWTHFRAG,
                           gf_growth=self.growth, gf_frac=self.frac,
                           gf_jump_rate=self.jump_rate, gf_kill_rate=self.kill_rate)


@dataclass(frozen=True)
class TorusDiffusion:
    """Diffusion on the d-torus with a named drift/kill family.

    drift: ``None`` (zero), a float (constant speed on every coordinate),
    or ``("sine", a)`` for ``b(x) = a*sin(2*pi*x)`` in one dimension.
    kill: ``None``, a float (constant rate), or ``("cosine", l0, l1)`` for
    rate ``l0 + l1*cos(2*pi*x)`` in one dimension.
    """

    dim: int = 1
    drift: object = None
    kill: object = None

    def model(self, gamma: float) -> KilledModel:
        drift_id, dpar = DRIFT_ZERO, np.zeros(max(self.dim, 1))
        if isinstance(self.drift, (int, float)) and self.drift is not None:
            drift_id, dpar = DRIFT_CONST, np.full(self.dim, float(self.drift))
        elif isinstance(self.drift, (tuple, list)) and self.drift and self.drift[0] == "sine":
            if self.dim != 1:
                raise ValueError("sine drift is one dimensional")
            drift_id, dpar = DRIFT_SINE, np.array([float(self.drift[1])])
        elif self.drift is not None:
            raise ValueError(f"unknown drift family: {self.drift!r}")
        kill_id, kp0, kp1 = KILL_NONE, 0.0, 0.0
        if isinstance(self.kill, (int, float)) and self.kill is not None:
            kill_id, kp0 = KILL_CONST, float(self.kill)
        elif isinstance(self.kill, (tuple, list)) and self.kill and self.kill[0] == "cosine":
            if self.dim != 1:
                raise ValueError("cosine kill is one dimensional")
            kill_id, kp0, kp1 = KILL_COSINE, float(self.kill[1]), float(self.kill[2])
        elif self.kill is not None:
            raise ValueError(f"unknown kill family: {self.kill!r}")
        return KilledModel(name="torus_diffusion", geometry="torus", dim=self.dim,
                           gamma=gamma, kind=KIND_GAUSS, drift_id=drift_id,
                           drift_params=dpar, kill_id=kill_id, kp0=kp0, kp1=kp1)

    def drift_values(self, x: np.ndarray) -> np.ndarray:
        if self.drift is None:
            return np.zeros_like(x)
        if isinstance(self.drift, (int, float)):
            return np.full_like(x, float(self.drift))
        return float(self.drift[1]) * np.sin(_TWO_PI * x)

    def kill_values(self, x: np.ndarray) -> np.ndarray:
        if self.kill is None:
            return np.zeros_like(x)
        if isinstance(self.kill, (int, float)):
            return np.full_like(x, float(self.kill))
        return float(self.kill[1]) + float(self.kill[2]) * np.cos(_TWO_PI * x)


@dataclass(frozen=True)
class IntervalBrownian:
    """Standard Brownian proposals on (0, 1), killed on leaving the interval."""

    def model(self, gamma: float) -> KilledModel:
        return KilledModel(name="interval_brownian", geometry="interval", dim=1,
                           gamma=gamma, kind=KIND_GAUSS,
                           kill_id=KILL_HARD_INTERVAL, kp0=0.0, kp1=1.0)


def discrete_model(chain: FiniteKilledChain, gamma: float, name: str = "finite") -> KilledModel:
    """Discrete-time killed model for a finite chain.

    The conservative jump part over one step of length ``gamma`` is sampled
    exactly by uniformization; killing is applied at the landed state with
    probability ``1 - exp(-gamma * kill_rate)``.  The matching one-step
    reference kernel is ``expm(gamma*Q) @ diag(exp(-gamma*kill))``.
    """
    rate = chain.conservative_rate()
    n = chain.n_states
    if rate > 0:
        p = chain.jump_rates / rate
        np.fill_diagonal(p, 0.0)
        p[np.diag_indices(n)] = 1.0 - p.sum(axis=1)
        cum = np.cumsum(p, axis=1)
    else:
        cum = np.cumsum(np.eye(n), axis=1)
    cum[:, -1] = 1.0
    return KilledModel(name=name, geometry="finite", dim=1, gamma=gamma,
                       kind=KIND_FINITE, chain=chain, cum_rows=cum,
                       p_kill_states=1.0 - np.exp(-gamma * chain.kill_rates),
                       unif_rate=rate)


PRESETS = {
    "two_point": TwoPoint,
    "house_of_card": HouseOfCard,
    "birth_death": BirthDeath,
    "periodic_shift": PeriodicShift,
    "growth_frag": GrowthFrag,
    "torus_diffusion": TorusDiffusion,
    "interval_brownian": IntervalBrownian,
}


def build_preset(name: str, params: dict):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    try:
        return PRESETS[name](**params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for preset {name!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# closed-form quasi-stationary distributions
# ---------------------------------------------------------------------------

@dataclass
class ClosedFormQsd:
    """A quasi-stationary distribution in closed form.

    Either finite-state ``weights``, or a ``density`` on ``(lo, hi)``,
    optionally with a point mass ``atom_weight`` at ``atom``.
    """

    theta: float
    regime: str
    weights: Optional[np.ndarray] = None
    density: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lo: float = 0.0
    hi: float = 1.0
    atom: Optional[float] = None
    atom_weight: float = 0.0

    def density_mass(self) -> float:
        if self.density is None:
            return 0.0
        from scipy.integrate import quad

        val, _ = quad(lambda x: float(self.density(np.array([x]))[0]),
                      self.lo, self.hi, epsabs=1e-10, epsrel=1e-10, limit=200)
        return float(val)


def _house_theta_root(c: float, q: float) -> float:
    from scipy.integrate import quad
    from scipy.optimize import brentq

    def g(theta: float) -> float:
        # full_output suppresses the roundoff warning near the tolerance floor
        out = quad(lambda x: 1.0 / (1.0 + c * x ** q - theta), 0.0, 1.0,
                   epsabs=1e-10, epsrel=1e-10, limit=200, full_output=1)
        return out[0] - 1.0

    return float(brentq(g, 0.0, 1.0 - 1e-12, xtol=1e-14, rtol=8.9e-16))


def analytic_qsd(preset) -> tuple:
    """Known closed-form QSDs for a preset, with regime tags.

    Returns an empty tuple when no printed closed form applies, in which
    case the spectral oracle is the reference.
    """
    if isinstance(preset, TwoPoint):
        a, b = preset.a, preset.b
        dirac = ClosedFormQsd(theta=b, regime="dirac_dying",
                              weights=np.array([1.0, 0.0]))
        if b > a:
            mix = ClosedFormQsd(theta=a, regime="mixture",
                                weights=np.array([a / b, (b - a) / b]))
            return (mix, dirac)
        return (dirac,)
    if isinstance(preset, HouseOfCard):
        c, q = preset.c, preset.q
        q_crit = 1.0 - 1.0 / c if c > 0 else -math.inf
        if q > q_crit + 1e-12:
            theta = _house_theta_root(c, q)
            dens = lambda x, _c=c, _q=q, _t=theta: 1.0 / (1.0 + _c * np.asarray(x) ** _q - _t)
            return (ClosedFormQsd(theta=theta, regime="unique_bounded", density=dens),)
        if abs(q - q_crit) <= 1e-12:
            dens = lambda x, _q=q: (1.0 - _q) * np.asarray(x) ** (-_q)
            return (
                ClosedFormQsd(theta=1.0, regime="critical_density", density=dens),
                ClosedFormQsd(theta=1.0, regime="dirac_zero", atom=0.0, atom_weight=1.0),
            )
        # degenerate regime: atom at zero plus density proportional to x**-q
        w0 = 1.0 - 1.0 / (c * (1.0 - q))
        dens = lambda x, _c=c, _q=q: np.asarray(x) ** (-_q) / _c
        return (ClosedFormQsd(theta=1.0, regime="degenerate_mixture", density=dens,
                              atom=0.0, atom_weight=w0),)
    if isinstance(preset, IntervalBrownian):
        dens = lambda x: (math.pi / 2.0) * np.sin(math.pi * np.asarray(x))
        return (ClosedFormQsd(theta=math.pi ** 2 / 2.0, regime="dirichlet_ground_state",
                              density=dens),)
    return ()
