"""Multi-channel retrieval fusion: quota merging, metrics and weight optimizers."""

from .bayesopt import BoConfig, BoResult, expected_improvement, gp_posterior, run_bayesopt
from .cem import CemConfig, CemState, interpolate_params, run_cem, select_elites, update_params
from .dirichlet import DirichletParams, fit_mle, log_pdf, log_pdf_grad_alpha, mean_weights, sample
from .errors import ExhaustedError, FusionError, NumericalError, ParseError, ValidationError
from .fusion import (MergedSet, PersonalizedWeights, WeightVector, baseline_weights, load_weights,
                     merge_all, merge_user, project_to_bounded_simplex, quotas_from_weights,
                     save_weights)
from .ingest import Dataset, GroundTruth, load_dataset, load_manifest, save_dataset, validate_dataset
from .metrics import (EvalReport, evaluate, evaluate_objective, item_coverage, jaccard_matrix,
                      rbo_pair)
from .policy import (AlphaGeneratorParams, PgConfig, UserState, build_user_state, forward_alpha,
                     infer_weights, policy_grad_step, train_pg)
from .synth import SyntheticSpec, generate_benchmark, preset

__all__ = [
    "BoConfig", "BoResult", "expected_improvement", "gp_posterior", "run_bayesopt", "CemConfig",
    "CemState", "interpolate_params", "run_cem", "select_elites", "update_params",
    "DirichletParams", "fit_mle", "log_pdf", "log_pdf_grad_alpha", "mean_weights", "sample",
    "ExhaustedError", "FusionError", "NumericalError", "ParseError", "ValidationError",
    "MergedSet", "PersonalizedWeights", "WeightVector", "baseline_weights", "load_weights",
    "merge_all", "merge_user", "project_to_bounded_simplex", "quotas_from_weights", "save_weights",
    "Dataset", "GroundTruth", "load_dataset", "load_manifest", "save_dataset", "validate_dataset",
    "EvalReport", "evaluate", "evaluate_objective", "item_coverage", "jaccard_matrix", "rbo_pair",
    "AlphaGeneratorParams", "PgConfig", "UserState", "build_user_state", "forward_alpha",
    "infer_weights", "policy_grad_step", "train_pg", "SyntheticSpec", "generate_benchmark",
    "preset",
]

__version__ = "0.1.0"
