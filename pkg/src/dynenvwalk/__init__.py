"""Random walks in dynamical random environments: simulation and statistical
verification of the regeneration/renewal structure, the law of large numbers
and scaling limits, and the quenched variance-decay scheme."""

from .model import (LocalLaw, ModelSpec, QuenchedConstants, ValidationReport,
                    build_k, find_constants, gamma_exponent, mean_local_law,
                    q_nondegenerate, quenched_condition, validate_assumptions,
                    violated_constraints)
from .environment import (EnvironmentReplay, PowerCache, SiteRecord,
                          alpha_coin, fast_forward, sample_clearance)
from .walk import (RuntimeTables, TrajectoryLog, WalkState,
                   first_regeneration_time, residual_law, run_walk, step)
from .regeneration import (RegenTracker, RenewalBlock, blocks_to_arrays,
                           extract_blocks, tau_tail_stats)
from .estimators import (CovarianceEstimate, DriftEstimate,
                         block_iid_diagnostics, sigma_hat, slln_check,
                         velocity_hat)
from .clt import (Functional, ScaledPath, annealed_ensemble, calibrate,
                  delta_m, functional_checks, intersection_diagnostic,
                  joint_run_time, ks_statistic, quenched_variance_curve)
from .engine import run_ensemble, sample_first_regeneration

__version__ = "0.1.0"
