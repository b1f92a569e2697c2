"""diffcp core: models, simulation, estimation, CUSUM tests and change-point location."""

from core.changepoint import (ChangePointEstimate, ExclusionWindow, compute_J, estimate_tau_alpha,
                              estimate_tau_beta, exclusion_window, limit_law_ks, sample_limit_argmin)
from core.cusum import (TestResult, critical_value, cusum_sup, fisher_weight, same_point_statistic,
                        t1_drift, t2_drift, t_alpha, xi_sequence, zeta_sequence)
from core.estimate import (IntervalEstimate, OptimizerConfig, alpha_contrast, beta_contrast,
                           estimate_alpha, estimate_beta, estimate_beta_pooled, expand_and_estimate)
from core.model import (DiffusionModel, ParameterBox, check_derivatives, eval_A, eval_drift,
                        get_model, hyperbolic_model, ou_model)
from core.path import Path, read_path_csv, write_path_csv
from core.pipeline import DecisionReport, PipelineConfig, run_pipeline
from core.simulate import (ParamSchedule, sample_brownian_bridge_sup, simulate_exact, simulate_ou_exact,
                           simulate_path, simulate_paths)
