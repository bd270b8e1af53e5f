from .metrics import UndefinedMetricError, auc, longtail_report
from .train import (
    FinetuneResult,
    PretrainResult,
    RunDir,
    TrainingDiverged,
    TrainRunSpec,
    load_training_state,
    predict_batches,
    run_finetune,
    run_pretrain,
    save_training_state,
    split_examples,
    split_users,
)

__all__ = [
    "FinetuneResult",
    "PretrainResult",
    "RunDir",
    "TrainRunSpec",
    "TrainingDiverged",
    "UndefinedMetricError",
    "auc",
    "load_training_state",
    "longtail_report",
    "predict_batches",
    "run_finetune",
    "run_pretrain",
    "save_training_state",
    "split_examples",
    "split_users",
]
