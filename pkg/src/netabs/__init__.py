"""Dissipativity-based compositional abstractions for networks of control systems."""

from .errors import *  # noqa: F401,F403
from .matgeo import (DEFAULT_TOL, Tolerance, image_subset, is_negative_semidefinite,
                     is_positive_definite, kernel_basis, pseudoinverse, schur_complement,
                     solve_factor)
from .sysmodel import (NonlinearControlSystem, SignalSpec, SlopeRestrictedFunction, Trajectory,
                       interconnect, normalize_slope, simulate, simulate_network)
from .storage import (ComparisonFunctions, StorageCertificate, VerificationReport, compute_Rtilde,
                      derive_comparison_functions, error_bound, interface, safe_set_inflation,
                      verify_dissipation_inequality)
from .synthesis import (AbstractionResult, BehaviorPreservation, PipelineOptions, check_assumption1,
                        construct_Ahat_Q, construct_Bhat_behavior, construct_C2hat_H,
                        construct_Dhat_What, construct_Ehat_L2, from_bar_lmi, solve_restricted_lmi,
                        spr_duality_check, table1_pipeline, to_bar_lmi)
from .compose import (CompositionCertificate, InterconnectionSpec, assemble_X, check_condition5,
                      check_condition6, compose_simulation_function, cosimulate_network,
                      solve_abstract_coupling, verify_composite)
from .casestudy import Scenario, build_laplacian, run_case_study, small_gain_compare

__version__ = "0.1.0"
