from .data import Dataset, gen_random_dataset, load_pooled_images, pool_images, read_idx, write_idx
from .history import RunHistory, StepRecord, read_csv, write_csv
from .models import TASKS, HybridModel, build_model
from .stats import DEFAULT_WINDOWS, RunSummary, aggregate_runs, rolling_mean
from .training import ExperimentConfig, evals_per_step, evaluate, load_dataset, make_model, run_experiment, train

__all__ = [
    "Dataset", "gen_random_dataset", "load_pooled_images", "pool_images", "read_idx", "write_idx",
    "RunHistory", "StepRecord", "read_csv", "write_csv",
    "TASKS", "HybridModel", "build_model",
    "DEFAULT_WINDOWS", "RunSummary", "aggregate_runs", "rolling_mean",
    "ExperimentConfig", "evals_per_step", "evaluate", "load_dataset", "make_model", "run_experiment", "train",
]
