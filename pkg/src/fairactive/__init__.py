"""Fairness-regularized head training with actively selected
sensitive-attribute annotations, plus the experiment harness around it."""

from .data import (AnnotationLedger, SensitiveOracle, TabularDataset,
                   budget_from_ratio, load_tabular, make_synthetic,
                   reveal_sensitive, seed_annotations)
from .fairness import FairnessReport, GroupRates, compute_rates, predict_binary, \
    relaxed_rates, report
from .mitigation import FairClassifier, PodConfig, head_selection, pod_train, \
    pretrain, train_sensitive_head
from .orchestrator import ExperimentConfig, METHODS, RunResult, run_method, \
    run_many, sweep

__all__ = [
    "AnnotationLedger", "SensitiveOracle", "TabularDataset",
    "budget_from_ratio", "load_tabular", "make_synthetic", "reveal_sensitive",
    "seed_annotations", "FairnessReport", "GroupRates", "compute_rates",
    "predict_binary", "relaxed_rates", "report", "FairClassifier", "PodConfig",
    "head_selection", "pod_train", "pretrain", "train_sensitive_head",
    "ExperimentConfig", "METHODS", "RunResult", "run_method", "run_many", "sweep",
]

__version__ = "0.1.0"
