"""Coarse graining of stochastic trajectories into Markov renewal processes.

The pipeline: label a fine trajectory by macrostate, build the decorrelated
jump process, count entry-conditioned transition matrices, fit discrete
memory kernels, extend the transition matrices with them, and invert the
renewal equation for the jump-time distribution. `oracle` provides exact
answers on finite chains for validation.
"""

from .errors import ConfigurationError, NumericalDiagnosticError
from .estimate import (
    JumpDistribution,
    TransitionSeries,
    estimate_jump_distribution,
    estimate_transitions,
    mean_holding_times,
)
from .jumpproc import DecorrelationConfig, JumpProcess, build_jump_process, consecutive_clock
from .metrics import CvmReport, cvm_error, markov_baseline, series_distance
from .mrpsim import MrpTrajectory, expand_to_grid, simulate_mrp
from .mzkernel import (
    CorrelationSystem,
    FitConfig,
    KernelSeries,
    build_correlation_system,
    fit_kernels,
    infer_transitions,
    loss_and_gradient,
)
from .renewal import SurvivalMatrix, renewal_forward, renewal_invert, survival_from_jumps
from .trajio import (
    FiniteChainSpec,
    LabeledTrajectory,
    LangevinPotential,
    MacrostateGeometry,
    Rectangle,
    label_coordinates,
    sample_finite_chain,
    sample_langevin,
)

__version__ = "0.1.0"
