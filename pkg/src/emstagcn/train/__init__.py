from .checkpoint import checkpoint_load, checkpoint_paths, checkpoint_save
from .harness import GradCheckReport, grad_check_model, small_config
from .loop import EpochResult, evaluate_topk, fit, predict_dataset, prepare_sample, train_epoch
from .metrics import ScoreSet, ensemble_fuse, label_ranks, scoreset_accuracy, topk_accuracy
from .optim import KINETICS_RECIPE, NTU_RECIPE, TrainConfig, lr_at_epoch, sgd_nesterov_step

__all__ = [
    "checkpoint_load", "checkpoint_paths", "checkpoint_save",
    "GradCheckReport", "grad_check_model", "small_config",
    "EpochResult", "evaluate_topk", "fit", "predict_dataset", "prepare_sample", "train_epoch",
    "ScoreSet", "ensemble_fuse", "label_ranks", "scoreset_accuracy", "topk_accuracy",
    "KINETICS_RECIPE", "NTU_RECIPE", "TrainConfig", "lr_at_epoch", "sgd_nesterov_step",
]
