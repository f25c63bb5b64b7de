"""Experiment orchestration: config, checkpoints, pipelines, reports, CLI."""

from .config import ExperimentConfig, ConfigError, load_config, config_from_dict
from .checkpoint import (
    CheckpointError, save_arrays, load_arrays, save_checkpoint, load_checkpoint,
)
from .pipeline import (
    ConfigMismatchError, StageLog, RunPaths, run_all, transfer_experiment,
    stage_gen_data, stage_pretrain, stage_probe, stage_select, stage_evaluator,
    stage_eval_origin, stage_finetune_eval, stage_bench, EvalContext,
    build_domain, model_config, corpus_layout,
)
from .report import write_reports, write_transfer_report, final_epoch_stats
from .cli import cli_dispatch, main

__all__ = [
    "ExperimentConfig", "ConfigError", "load_config", "config_from_dict",
    "CheckpointError", "save_arrays", "load_arrays", "save_checkpoint",
    "load_checkpoint", "ConfigMismatchError", "StageLog", "RunPaths",
    "run_all", "transfer_experiment", "stage_gen_data", "stage_pretrain",
    "stage_probe", "stage_select", "stage_evaluator", "stage_eval_origin",
    "stage_finetune_eval", "stage_bench", "EvalContext", "build_domain",
    "model_config", "corpus_layout", "write_reports", "write_transfer_report",
    "final_epoch_stats", "cli_dispatch", "main",
]
