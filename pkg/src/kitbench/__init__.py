"""KitNET anomaly detector with gradient-based adversarial attacks."""

__version__ = "0.1.0"

from .attacks import (
    AdversarialResult,
    AttackSpec,
    CwConfig,
    EnmConfig,
    FgsmConfig,
    JsmaConfig,
    cw_l2,
    enm,
    fgsm,
    jsma,
    lp_distances,
    soft_threshold,
)
from .data import LabeledDataset, SyntheticConfig, generate_synthetic, load_feature_csv, write_report
from .evaluation import (
    roc_auc,
    run_attack_campaign,
    select_samples,
    sweep_enm_beta,
    sweep_enm_c,
    sweep_threshold,
)
from .kitnet import (
    KitNetModel,
    Label,
    ThresholdCalibration,
    TrainingConfig,
    calibrate_threshold,
    classify,
    logits,
    score,
    train_online,
)
from .persistence import load_model, save_model

__all__ = [
    "AdversarialResult",
    "AttackSpec",
    "CwConfig",
    "EnmConfig",
    "FgsmConfig",
    "JsmaConfig",
    "cw_l2",
    "enm",
    "fgsm",
    "jsma",
    "lp_distances",
    "soft_threshold",
    "LabeledDataset",
    "SyntheticConfig",
    "generate_synthetic",
    "load_feature_csv",
    "write_report",
    "roc_auc",
    "run_attack_campaign",
    "select_samples",
    "sweep_enm_beta",
    "sweep_enm_c",
    "sweep_threshold",
    "KitNetModel",
    "Label",
    "ThresholdCalibration",
    "TrainingConfig",
    "calibrate_threshold",
    "classify",
    "logits",
    "score",
    "train_online",
    "load_model",
    "save_model",
]
