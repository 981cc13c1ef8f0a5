"""CLI, configuration, checkpoints and reports."""
from .checkpoint import BadMagic, CheckpointError, DimensionMismatch, TruncatedTensor, load_checkpoint, save_checkpoint
from .config import ABLATIONS, ConfigError, RunConfig, apply_ablation, load_config, with_variant
from .report import ResultRow, rank_report

__all__ = ["BadMagic", "CheckpointError", "DimensionMismatch", "TruncatedTensor", "load_checkpoint",
           "save_checkpoint", "ABLATIONS", "ConfigError", "RunConfig", "apply_ablation", "load_config",
           "with_variant", "ResultRow", "rank_report"]

