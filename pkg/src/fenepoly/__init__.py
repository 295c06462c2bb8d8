"""Finite-difference/quadrature scheme for compressible polymeric flow with FENE bead-spring chains."""
from .model_core import (ChainParams, DomainError, Isentropic, LTWarning, ModelParams, NotPositiveDefinite,
                         Tait, eos_pressure, maxwellian, partition_function_exact, pressure_primitive,
                         spring_force, spring_potential)
from .regularization import (cutoff_beta, cutoff_beta_delta, entropy_F, entropy_FL, entropy_FL_delta,
                             entropy_mean)
from .discretization import (AssemblyError, ConfigGrid, DiscreteOperators, OmegaGrid, QuadratureNotConverged,
                             assemble_operators, build_config_grid, build_omega_grid, weighted_inner_product)
from .stress import StressField, extra_stress, kramers_tensor, number_density, stress_divergence_weak
from .solvers import (KroneckerSolver, LinearSystem, SlabDensity, continuity_substep, fokker_planck_solve,
                      momentum_solve, project_initial_density, project_initial_velocity, smooth_initial_psi)
from .scheme import (Controls, EnergyReport, PicardDiverged, Problem, State, conservation_report,
                     energy_ledger, initial_state, picard_step, run_simulation)
from .config import Config, ParseError, ValidationError, parse_config, serialize_config

__version__ = "0.1.0"
