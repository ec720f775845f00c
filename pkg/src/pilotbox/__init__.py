"""Pilot-wave dynamics in a uniformly expanding square box.

Modes and superpositions live in :mod:`pilotbox.wavefunction`, trajectories
in :mod:`pilotbox.dynamics`, initial ensembles in :mod:`pilotbox.ensembles`,
and the coarse-grained H-function estimators in
:mod:`pilotbox.coarse_graining`.
"""
from .coarse_graining import (
    CGGrid, CGReport, backtrack_estimate, cg_average, f_bar, forward_estimate, forward_estimates, g_bar, h_bar,
    h_tilde, sample_times,
)
from .dynamics import (
    Expansion, TrajectoryPath, divergence, flow, integrate_fixed_trajectory, integrate_trajectory, retarded_time, scale_factor,
    velocity,
)
from .ensembles import (
    InitialDistribution, ParticleSet, build_rho1, equilibrium, eval_initial_density, rho0, rho2, sample,
    transport_along, transport_density,
)
from .estimators import CoarseGrainedH, GuidanceFlow
from .exceptions import (
    ConfigError, ConfinementError, DomainError, EnvelopeError, IntegrationError, PilotBoxError, SingularityError,
)
from .wavefunction import (
    Mode, PhysParams, Superposition, appendix_superposition, eval_fixed_psi, eval_mode, eval_psi, mode_energy,
    order_modes,
)

__version__ = "0.1.0"
