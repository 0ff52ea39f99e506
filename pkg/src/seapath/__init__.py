"""Steepest-entropy-ascent relaxation in square-root probability space."""

import types

from .dynamics import (SeaSolution, TauPolicy, affinity, degree_of_disequilibrium,
                       entropy_production, gram_system, onsager_conductivity, resolve_tau,
                       sea_direction, sea_direction_cramer, solve_multipliers)
from .errors import (ConsistencyError, DegenerateConstraintsError, EquilibriumError,
                     InfeasibleTargetsError, MetricError, NumericalError, SeaError, StateError,
                     StiffnessError)
from .integrator import (IntegratorConfig, TrajectoryRecord, entropy_balance_check, integrate,
                         path_length, step)
from .maxent import (DisequilibriumReport, MaxEntResult, disequilibrium_report, kl_divergence,
                     maxent_for_state, solve_maxent)
from .metric import MetricField, MetricForm, evaluate
from .phase import (PhaseGrid, PhaseModel, canonical_density, discretize, gaussian_density,
                    relax_phase)
from .state import (ConstraintSet, SquareRootState, constraint_gradients_psi, entropy,
                    entropy_gradient_phi, from_probabilities, inner_product, mean_value)

__version__ = "0.1.0"

__all__ = [name for name, value in globals().items()
           if not name.startswith("_") and not isinstance(value, types.ModuleType)]
