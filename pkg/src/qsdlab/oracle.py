"""Exact reference computations on finite or grid-discretized state spaces.

The killed semigroup matrix ``M = exp(t*A)`` is computed by uniformization,
which keeps entries nonnegative exactly; for stiff generators the horizon is
halved until the uniformization mean is modest and the result is squared
back up (squaring a nonnegative substochastic matrix preserves both
properties).  Eigen-elements come from power iteration on ``M`` and its
transpose, which is the ground truth every stochastic output is tested
against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .models import (
    FiniteKilledChain,
    HouseOfCard,
    IntervalBrownian,
    TorusDiffusion,
)

__all__ = [
    "KilledSemigroupMatrix",
    "EigenTriplet",
    "ReducibilityDiagnostic",
    "QsdComponent",
    "ExtinctionUnderflowError",
    "UnsupportedModelError",
    "killed_semigroup",
    "conditional_law_step",
    "iterate_conditional",
    "perron_triplet",
    "list_qsds",
    "grid_generator",
    "survival_curve",
    "spectral_gap",
]

_POISSON_TAIL = 1e-12
_UNIF_MEAN_CAP = 64.0


class ExtinctionUnderflowError(ArithmeticError):
    """Surviving mass vanished exactly; the recursion cannot be renormalized."""


class UnsupportedModelError(ValueError):
    """The preset has no grid discretization in this module."""


@dataclass
class KilledSemigroupMatrix:
    """Sub-Markov matrix ``M = exp(t0 * A)`` together with its horizon."""

    M: np.ndarray
    t0: float
    positions: Optional[np.ndarray] = None
    geometry: str = "finite"
    labels: Optional[tuple] = None
    name: str = "chain"

    def __post_init__(self):
        self.M = np.asarray(self.M, dtype=float)
        n = self.M.shape[0]
        if self.M.shape != (n, n):
            raise ValueError("M must be square")
        if self.t0 <= 0:
            raise ValueError("horizon must be positive")
        if np.any(self.M < 0):
            raise ValueError("M must be nonnegative")
        rows = self.M.sum(axis=1)
        if np.any(rows > 1.0 + 1e-12):
            raise ValueError("M must be sub-Markov (row sums <= 1 + 1e-12)")

    @property
    def n_states(self) -> int:
        return self.M.shape[0]


@dataclass
class EigenTriplet:
    """Extinction rate, right eigenfunction and left eigenmeasure of ``M``.

    ``gamma_left`` is normalized to a probability vector and ``h`` is scaled
    so that ``gamma_left @ h == 1``.  ``theta`` is reported per unit time
    using the matrix horizon.
    """

    theta: float
    h: np.ndarray
    gamma_left: np.ndarray
    rho: float
    t0: float
    residual_left: float
    residual_right: float
    iterations: int
    converged: bool

    def validate(self, rel_tol: float = 1e-8) -> None:
        if abs(float(self.gamma_left @ self.h) - 1.0) > 1e-10:
            raise AssertionError("normalization gamma_left(h) = 1 violated")
        if self.converged and max(self.residual_left, self.residual_right) > rel_tol:
            raise AssertionError("eigen residuals exceed tolerance")


@dataclass
class ReducibilityDiagnostic:
    """Why power iteration was not run: the chain is not primitive."""

    classes: list
    period: int
    n_states: int

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def __str__(self):
        return (f"not primitive: {self.n_classes} communicating class(es), "
                f"period {self.period}; classes {[list(c) for c in self.classes]}")


@dataclass
class QsdComponent:
    """One quasi-stationary distribution of a (possibly reducible) chain."""

    theta: float
    qsd: np.ndarray
    class_states: np.ndarray
    h: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# semigroup construction
# ---------------------------------------------------------------------------

def _poisson_weights(mean: float, tail: float = _POISSON_TAIL) -> np.ndarray:
    if mean <= 0:
        return np.array([1.0])
    w = [math.exp(-mean)]
    total = w[0]
    k = 0
    while total < 1.0 - tail or k < mean:
        k += 1
        w.append(w[-1] * mean / k)
        total += w[-1]
        if k > 10_000_000:  # pragma: no cover
            raise RuntimeError("poisson weight loop failed to terminate")
    return np.array(w)


def killed_semigroup(chain: FiniteKilledChain, t: float) -> KilledSemigroupMatrix:
    """``exp(t * (Q - diag(kill_rates)))`` by uniformization.

    For stiff generators the horizon is internally halved until the
    uniformization mean is at most about 64 and the partial result is then
    squared back; nonnegativity and sub-stochasticity are preserved exactly
    at every stage (row sums are re-projected onto <= 1 after each squaring
    to absorb float rounding).
    """
    if t <= 0:
        raise ValueError("t must be positive")
    n = chain.n_states
    lam = chain.uniformization_rate()
    if lam == 0.0:
        return KilledSemigroupMatrix(np.eye(n), t, positions=chain.positions,
                                     geometry=chain.geometry, labels=chain.labels,
                                     name=chain.name)
    mean = lam * t
    n_sq = 0
    while mean > _UNIF_MEAN_CAP:
        mean *= 0.5
        n_sq += 1
    a = chain.generator()
    p_sub = np.eye(n) + a / lam
    np.clip(p_sub, 0.0, None, out=p_sub)

    weights = _poisson_weights(mean)
    s = _uniformization_sum(p_sub, weights, chain)
    for _ in range(n_sq):
        s = s @ s
        np.clip(s, 0.0, None, out=s)
        rows = s.sum(axis=1)
        bad = rows > 1.0
        if np.any(bad):
            s[bad] /= rows[bad, None]
    return KilledSemigroupMatrix(s, t, positions=chain.positions,
                                 geometry=chain.geometry, labels=chain.labels,
                                 name=chain.name)


def _uniformization_sum(p_sub: np.ndarray, weights: np.ndarray,
                        chain: FiniteKilledChain) -> np.ndarray:
    n = p_sub.shape[0]
    # redraw-type rows make P = diag + 1 u^T (off-diagonal entries constant
    # within each column), which multiplies in O(n^2)
    rank1 = False
    if n > 64:
        off = p_sub.copy()
        np.fill_diagonal(off, np.nan)
        col_lo = np.nanmin(off, axis=0)
        col_hi = np.nanmax(off, axis=0)
        rank1 = bool(np.all(col_hi - col_lo <= 1e-15 * max(col_hi.max(), 1.0)))
    sparse = (not rank1) and n > 512 and np.count_nonzero(p_sub) < 0.05 * n * n

    s = weights[0] * np.eye(n)
    if rank1:
        u = col_lo
        dvec = np.diagonal(p_sub) - u
        t = np.eye(n)
        for w in weights[1:]:
            t = t * dvec[None, :] + t.sum(axis=1)[:, None] * u[None, :]
            s += w * t
    elif sparse:
        pt = sp.csr_matrix(p_sub.T)
        tt = np.eye(n)
        st = s.T.copy()
        for w in weights[1:]:
            tt = pt @ tt
            st += w * tt
        s = st.T.copy()
    else:
        t = np.eye(n)
        for w in weights[1:]:
            t = t @ p_sub
            s += w * t
    return s


# ---------------------------------------------------------------------------
# conditional law and survival
# ---------------------------------------------------------------------------

def conditional_law_step(m: KilledSemigroupMatrix, eta: np.ndarray) -> np.ndarray:
    """Advance a conditional law one horizon: ``eta M / (eta M 1)``."""
    eta = np.asarray(eta, dtype=float)
    if np.any(eta < 0) or abs(eta.sum() - 1.0) > 1e-9:
        raise ValueError("eta must be a probability vector")
    out = eta @ m.M
    mass = out.sum()
    if mass <= 1e-300:
        raise ExtinctionUnderflowError("surviving mass is zero")
    return out / mass


def iterate_conditional(m: KilledSemigroupMatrix, eta0: np.ndarray,
                        max_iter: int = 10_000, tol: float = 0.0):
    """Iterate the conditional-law step; returns (law, tv_history)."""
    eta = np.asarray(eta0, dtype=float)
    history = []
    for _ in range(max_iter):
        nxt = conditional_law_step(m, eta)
        tv = 0.5 * np.abs(nxt - eta).sum()
        history.append(tv)
        eta = nxt
        if tol and tv < tol:
            break
    return eta, np.array(history)


def survival_curve(m: KilledSemigroupMatrix, eta0: np.ndarray, n: int) -> np.ndarray:
    """Survival probabilities ``(eta0 M^k) . 1`` for k = 1..n."""
    if n < 1:
        raise ValueError("n must be at least 1")
    eta = np.asarray(eta0, dtype=float)
    out = np.empty(n)
    for k in range(n):
        eta = eta @ m.M
        out[k] = eta.sum()
    return out


# ---------------------------------------------------------------------------
# primitivity and eigen-elements
# ---------------------------------------------------------------------------

def _support_graph(m: np.ndarray) -> sp.csr_matrix:
    return sp.csr_matrix((m > 0.0).astype(np.int8))


def _graph_period(adj: sp.csr_matrix) -> int:
    """Period of a strongly connected directed graph (gcd of cycle lengths)."""
    n = adj.shape[0]
    level = np.full(n, -1, dtype=np.int64)
    level[0] = 0
    frontier = [0]
    indptr, indices = adj.indptr, adj.indices
    while frontier:
        nxt = []
        for u in frontier:
            for v in indices[indptr[u]:indptr[u + 1]]:
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(v)
        frontier = nxt
    coo = adj.tocoo()
    diffs = level[coo.row] + 1 - level[coo.col]
    g = int(np.gcd.reduce(np.abs(diffs))) if diffs.size else 0
    return g if g > 0 else 1


def _communicating_classes(m: np.ndarray) -> list:
    n_comp, assignment = connected_components(_support_graph(m), connection="strong")
    return [np.nonzero(assignment == c)[0] for c in range(n_comp)]


def perron_triplet(m: KilledSemigroupMatrix, tol: float = 1e-12,
                   max_iter: int = 100_000):
    """Dominant eigen-elements of a primitive sub-Markov matrix.

    Runs power iteration on ``M`` (right) and its transpose (left) until the
    total-variation change between successive normalized iterates falls
    below ``tol``.  If the support graph of ``M`` is not primitive the
    communicating-class diagnostic is returned instead; near-critical chains
    that fail to converge within the iteration cap are returned with their
    achieved residual and ``converged=False``.
    """
    mat = m.M
    n = m.n_states
    classes = _communicating_classes(mat)
    if len(classes) > 1:
        return ReducibilityDiagnostic(classes=classes, period=0, n_states=n)
    period = _graph_period(_support_graph(mat))
    if period != 1:
        return ReducibilityDiagnostic(classes=classes, period=period, n_states=n)

    gamma = np.full(n, 1.0 / n)
    h = np.ones(n)
    rho = 1.0
    iterations = 0
    converged = False
    for it in range(1, max_iter + 1):
        iterations = it
        g_next = gamma @ mat
        rho = g_next.sum()
        g_next /= rho
        h_next = mat @ h
        h_next /= h_next.max()
        tv_g = 0.5 * np.abs(g_next - gamma).sum()
        tv_h = 0.5 * np.abs(h_next - h).sum() / max(h_next.sum(), 1e-300)
        gamma, h = g_next, h_next
        if max(tv_g, tv_h) < tol:
            converged = True
            break
    res_left = np.abs(gamma @ mat - rho * gamma).sum() / rho
    res_right = np.abs(mat @ h - rho * h).sum() / (rho * np.abs(h).sum())
    h = h / float(gamma @ h)
    theta = -math.log(rho) / m.t0
    return EigenTriplet(theta=theta, h=h, gamma_left=gamma, rho=rho, t0=m.t0,
                        residual_left=float(res_left), residual_right=float(res_right),
                        iterations=iterations, converged=converged)


def _nonneg_null_vectors(mat: np.ndarray, rho: float, left: bool) -> list:
    """Nonnegative (left or right) eigenvectors of ``mat`` for eigenvalue rho."""
    a = (mat.T if left else mat) - rho * np.eye(mat.shape[0])
    _, svals, vt = np.linalg.svd(a)
    cutoff = max(svals.max(), 1.0) * 1e-10
    out = []
    for i in range(len(svals) - 1, -1, -1):
        if svals[i] > cutoff:
            break
        v = vt[i]
        if abs(v.min()) > abs(v.max()):
            v = -v
        if v.min() >= -1e-8 * max(v.max(), 1e-300):
            v = np.clip(v, 0.0, None)
            if v.sum() > 0:
                out.append(v / v.sum())
    return out


def list_qsds(m: KilledSemigroupMatrix) -> list:
    """All quasi-stationary distributions of a finite chain.

    For a primitive chain this is the single dominant triplet.  For a
    reducible chain, each communicating class contributes its local Perron
    value; the class's QSD is the nonnegative left eigenvector of the full
    matrix at that value, when one exists.  Components are sorted by
    extinction rate (slowest first).
    """
    mat = m.M
    classes = _communicating_classes(mat)
    if len(classes) == 1:
        trip = perron_triplet(m)
        if isinstance(trip, EigenTriplet):
            return [QsdComponent(theta=trip.theta, qsd=trip.gamma_left,
                                 class_states=classes[0], h=trip.h)]
    comps = []
    seen = []
    for cls in classes:
        block = mat[np.ix_(cls, cls)]
        evals = np.linalg.eigvals(block)
        rho = float(np.max(evals.real))
        if rho <= 0:
            continue
        for v in _nonneg_null_vectors(mat, rho, left=True):
            if any(0.5 * np.abs(v - w).sum() < 1e-9 for w in seen):
                continue
            seen.append(v)
            theta = -math.log(rho) / m.t0
            comps.append(QsdComponent(theta=theta, qsd=v, class_states=cls))
    comps.sort(key=lambda c: c.theta)
    if comps:
        rho_dom = math.exp(-comps[0].theta * m.t0)
        for h in _nonneg_null_vectors(mat, rho_dom, left=False):
            scale = float(comps[0].qsd @ h)
            if scale > 1e-300:
                comps[0].h = h / scale
            break
    return comps


def spectral_gap(m: KilledSemigroupMatrix) -> tuple:
    """(theta1, theta2) per-unit-time rates from the two leading eigenvalues.

    Dense eigensolve; intended for small chains used as test references.
    """
    evals = np.linalg.eigvals(m.M)
    mags = np.sort(np.abs(evals))[::-1]
    theta1 = -math.log(mags[0]) / m.t0
    theta2 = -math.log(max(mags[1], 1e-300)) / m.t0
    return theta1, theta2


# ---------------------------------------------------------------------------
# grid discretizations
# ---------------------------------------------------------------------------

def grid_generator(preset, n_grid: int, zero_atom: bool = False) -> FiniteKilledChain:
    """Finite-difference / jump discretization of a continuous preset.

    Second-order central differences for the diffusion part, first-order
    upwind for the drift (keeps off-diagonal rates nonnegative), Dirichlet
    rows for hard killing, and exact uniform-redraw rows for the redraw
    model.  ``zero_atom`` additionally keeps the point {0} as its own state
    for the redraw model, which is where its degenerate quasi-stationary
    distributions put an atom.
    """
    if n_grid < 16:
        raise ValueError("n_grid must be at least 16")
    if isinstance(preset, IntervalBrownian):
        h = 1.0 / (n_grid + 1)
        x = (np.arange(n_grid) + 1) * h
        rate = 0.5 / (h * h)
        q = np.zeros((n_grid, n_grid))
        kill = np.zeros(n_grid)
        for i in range(n_grid):
            if i > 0:
                q[i, i - 1] = rate
            else:
                kill[i] += rate
            if i < n_grid - 1:
                q[i, i + 1] = rate
            else:
                kill[i] += rate
        return FiniteKilledChain(q, kill, positions=x, geometry="interval",
                                 name="interval_brownian_grid")
    if isinstance(preset, TorusDiffusion):
        if preset.dim != 1:
            raise UnsupportedModelError("grid discretization is one dimensional")
        h = 1.0 / n_grid
        x = np.arange(n_grid) * h
        rate = 0.5 / (h * h)
        b = preset.drift_values(x)
        q = np.zeros((n_grid, n_grid))
        for i in range(n_grid):
            up, dn = (i + 1) % n_grid, (i - 1) % n_grid
            q[i, up] = rate
            q[i, dn] = rate
            if b[i] > 0:
                q[i, up] += b[i] / h
            elif b[i] < 0:
                q[i, dn] += -b[i] / h
        return FiniteKilledChain(q, preset.kill_values(x), positions=x,
                                 geometry="torus", name="torus_diffusion_grid")
    if isinstance(preset, HouseOfCard):
        x = (np.arange(n_grid) + 0.5) / n_grid
        if zero_atom:
            # redraws land in the cells with probability 1/n each and hit
            # the null set {0} with probability zero
            q = np.zeros((n_grid + 1, n_grid + 1))
            q[:, 1:] = 1.0 / n_grid
            np.fill_diagonal(q, 0.0)
            kill = np.concatenate([[0.0], preset.c * x ** preset.q])
            return FiniteKilledChain(q, kill,
                                     positions=np.concatenate([[0.0], x]),
                                     geometry="interval",
                                     name="house_of_card_grid_atom")
        q = np.full((n_grid, n_grid), 1.0 / n_grid)
        np.fill_diagonal(q, 0.0)
        kill = preset.c * x ** preset.q
        return FiniteKilledChain(q, kill, positions=x, geometry="interval",
                                 name="house_of_card_grid")
    if zero_atom:
        raise UnsupportedModelError("zero_atom applies to the redraw model only")
    raise UnsupportedModelError(f"no grid discretization for {type(preset).__name__}")
