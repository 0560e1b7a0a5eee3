"""Training orchestration, end-to-end inference and checkpoints."""
from .checkpoint import (
    MAGIC,
    CheckpointError,
    dumps_checkpoint,
    inspect_checkpoint,
    load_checkpoint,
    loads_checkpoint,
    save_checkpoint,
)
from .config import ConfigError, ExperimentConfig
from .run import (
    CHECKPOINT_NAMES,
    PTD,
    Generation,
    RunResult,
    StageError,
    evaluate_models,
    generate_futures,
    infer,
    labelled_samples,
    read_generations,
    run_training,
)

__all__ = [
    "MAGIC", "CheckpointError", "dumps_checkpoint", "inspect_checkpoint", "load_checkpoint",
    "loads_checkpoint", "save_checkpoint", "ConfigError", "ExperimentConfig", "CHECKPOINT_NAMES",
    "PTD", "Generation", "RunResult", "StageError", "evaluate_models", "generate_futures", "infer",
    "labelled_samples", "read_generations", "run_training",
]
