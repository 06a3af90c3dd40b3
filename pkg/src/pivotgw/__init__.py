"""Fixed points of tree automata on Galton-Watson trees.

The package computes the automaton distribution map exactly, finds its fixed
points, builds the pivotal subtree's multitype mean matrix, classifies each
fixed point as interpretable or rogue via the spectral radius, and validates
every exact quantity by seeded Monte Carlo simulation.
"""

from .automata import (AutomatonSpec, FuncAutomaton, at_least_one,
                       at_least_two, evaluate, evaluate_switched, is_monotone,
                       many_roots, one_of_each, spec_from_json, spec_to_json,
                       sum_capped, zero_ones)
from .distmap import (PsiResult, StateDistribution, psi, psi_poisson_thinned,
                      psi_scalar, psi_scalar_curve, psi_scalar_derivative)
from .fixedpoints import (FixedPointRecord, KStateResult, critical_lambda,
                          find_fixed_points_2state, find_fixed_points_kstate)
from .offspring import (Binomial, ChildDistribution, FiniteSupport, Geometric,
                        Poisson)
from .pivot import (AugmentedType, PivotAnalysis, TargetSets, Verdict, analyze,
                    child_b_set, generation_mean, growth_rate_identity_check,
                    mean_matrix, spectral_radius, verdict)
from .simulate import (ColouredTreeSample, OracleResult, SimulationSummary,
                       TreeShape, estimate, mark_b_sets, oracle_exact,
                       replay_switch, root_distribution_recursive, sample_rst)

__version__ = "0.1.0"
