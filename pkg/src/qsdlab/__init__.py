"""qsdlab: quasi-stationary distributions of killed Markov processes.

Simulate them with a discretized Fleming-Viot particle system, compute
exact spectral references on finite or grid state spaces, and certify
Harris-type drift/minorization conditions numerically.
"""

from ._kernels import BACKEND, NUMBA_ENABLED, ResurrectionOverflowError
from .fv import FVConfig, FVReport, ParticleEnsemble, fv_step, q_mu_step, run_fv
from .metrics import (
    EmpiricalMeasure,
    estimate_theta,
    fit_exponential_rate,
    fit_power_law,
    from_particles,
    sliced_w1_torus,
    w1_circle,
    w1_line,
)
from .models import (
    BirthDeath,
    FiniteKilledChain,
    GrowthFrag,
    HouseOfCard,
    IntervalBrownian,
    KilledModel,
    PeriodicShift,
    TorusDiffusion,
    TwoPoint,
    analytic_qsd,
    build_preset,
    discrete_model,
    kill_prob,
    propose,
)
from .oracle import (
    EigenTriplet,
    KilledSemigroupMatrix,
    ReducibilityDiagnostic,
    conditional_law_step,
    grid_generator,
    killed_semigroup,
    list_qsds,
    perron_triplet,
    survival_curve,
)
from .streams import Stream, substream

__version__ = "0.1.0"
