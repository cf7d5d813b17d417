"""Collective decay of emitter chains coupled through optical fiber modes."""

from .fiber import FiberSpec, GuidedMode, ModeTable, solve_dispersion
from .couplings import (CouplingParams, CouplingSet, EmitterChain, alpha_from_geometry,
                        build, gamma_1d, gamma_3d, omega_1d, omega_3d)
from .states import (PreparedState, PulseSpec, fully_inverted, product_theta,
                     ramsey_longitudinal, ramsey_transverse, simulate_pulse)
from .dynamics import (EnsembleState, Trajectory, evolve, half_decay_time, independent_evolve,
                       me_evolve, mf_evolve, mpc_evolve, total_excitation)

__version__ = "0.1.0"
