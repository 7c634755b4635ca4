"""Mean-field best-response solvers for entropy-regularized min-max games."""
from .bestresponse import (BoundsCertificate, RegularizationParams,
                           best_response_mu, best_response_nu,
                           bounds_certificate, lyapunov)
from .diagnostics import (RateFit, fit_exponential_rate, fit_power_rate,
                          verify_inequalities)
from .equilibrium import (EquilibriumCache, EquilibriumResult, PicardConfig,
                          first_order_residual, ni_error, ni_log_partition,
                          picard_solve, value)
from .flow import (FlowConfig, PairState, Trajectory, fp_br_equivalence_check,
                   simulate, step_explicit_euler, step_exponential,
                   step_fictitious_play)
from .games import asym_2x2, builtin_game, gaussian_grid_64, matching_pennies
from .measure import (Density, InfiniteDivergenceError, ReferenceMeasure,
                      SpaceMismatchError, StrategySpace, gaussian_reference,
                      jeffreys, kl, normalize_reference, tv, uniform_reference)
from .objective import (BilinearObjective, CompositeObjective, ObjectiveOracle,
                        bilinear_dmu, bilinear_dnu, bilinear_value,
                        check_convex_concave, check_flat_derivative,
                        composite_objective)

__version__ = "0.1.0"
