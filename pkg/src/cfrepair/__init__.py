"""Counterfactual distribution search and optimal-transport repair for classifier disparities."""

from .data import AuditDataset, EmpiricalDistribution, ExactPopulation, Schema, SchemaError, load_dataset
from .descent import DescentConfig, distributional_descent, exact_descent, irreconcilability_check
from .disparity import MetricReport, MetricSpec, metric_exact, metric_from_samples
from .influence import estimate_constants, influence_at, steepest_direction
from .models import LinearScorer, Scorer, train_logistic
from .repair import EvalConfig, RepairedScorer, evaluate_repair
from .transport import CostSpec, InfeasibleTransportError, Preprocessor, plan_between, solve_transport

__all__ = [
    "AuditDataset",
    "CostSpec",
    "DescentConfig",
    "EmpiricalDistribution",
    "EvalConfig",
    "ExactPopulation",
    "InfeasibleTransportError",
    "LinearScorer",
    "MetricReport",
    "MetricSpec",
    "Preprocessor",
    "RepairedScorer",
    "Schema",
    "SchemaError",
    "Scorer",
    "distributional_descent",
    "estimate_constants",
    "evaluate_repair",
    "exact_descent",
    "influence_at",
    "irreconcilability_check",
    "load_dataset",
    "metric_exact",
    "metric_from_samples",
    "plan_between",
    "solve_transport",
    "steepest_direction",
    "train_logistic",
]
