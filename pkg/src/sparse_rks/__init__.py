"""Joint estimation of states and sparse inputs of linear dynamical systems."""
from .bayesian import (mvb_rks, msbl_rks, sbl_estep, sbl_mstep, sbl_rks, sbl_rks_state_meas,
                       vb_free_energy, vb_rks)
from .bp import (bp_rks, bpdn_solve, build_stacked_system, epsilon_default, group_bp_rks,
                 known_input_smoother, reduce_and_whiten, wls_initial_state)
from .errors import (ConfigError, CovarianceBlowup, DimensionMismatch, EstimationError,
                     Infeasible, NonFinite, RankCollapse, SingularFeedthrough, SingularGram,
                     SingularHessian, SingularInputGram, ZeroReference)
from .model import (LdsModel, SparseTrajectory, build_random_system, generate_sparse_inputs,
                    simulate, snr_to_sigma_v)
from .regularized import (group_l1_rks, l1_rks, reweighted_l2_rks, ridge_rks, soft_threshold,
                          weight_matrix)
from .report import SolverReport
from .rks import (GaussianBelief, SmoothingResult, batch_map_oracle, compute_gains,
                  kalman_smoother, rks_smooth, rks_smooth_state_only)

__version__ = "0.1.0"
