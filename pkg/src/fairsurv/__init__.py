"""Fairness auditing and mitigation for discrete-time survival models."""

from .bias import BiasProfile, audit
from .core import (CensoringCurve, Dataset, SurvivalCurves, TimeGrid, build_time_grid, kaplan_meier_censoring,
                   read_csv, split_by_subject, write_csv)
from .fairness import FairnessConfig, select_model, train_fair
from .harness import ExperimentConfig, ResultRecord, compare_groups, emit_report, rank_algorithms, run_experiment
from .metrics import EvalReport, IntegrationRange, auc_td, c_index_td, evaluate, ibs
from .models import TrainConfig, load_model, save_model, train
from .scm import SCMConfig, generate

__version__ = "0.1.0"
