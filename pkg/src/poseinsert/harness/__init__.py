"""Collection, training, evaluation and export around the simulator."""

from .collect import collect, load_dataset
from .evaluation import EvalReport, evaluate, parse_report, rollout, run_trial, write_expert_checkpoint
from .export import export_traces
from .training import load_policy, train_cmd

__all__ = [
    "EvalReport",
    "collect",
    "evaluate",
    "export_traces",
    "load_dataset",
    "load_policy",
    "parse_report",
    "rollout",
    "run_trial",
    "train_cmd",
    "write_expert_checkpoint",
]
