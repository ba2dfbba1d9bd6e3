"""Self-supervised pretraining and segmentation fine-tuning for 3D volumes."""

from .checkpoint import Checkpoint, load_checkpoint, load_parameters, save_checkpoint
from .config import RunConfig
from .encoding import make_table, spe_position, spe_vector, vanilla_pe_vector
from .errors import (
    AsaError,
    ContractViolation,
    CorruptionError,
    FormatError,
    PlacementError,
    TrainingError,
)
from .metrics import dice_metric, hd95_metric
from .model import (
    AsaModel,
    ar_loss,
    make_eval_volumes,
    make_train_volumes,
    reconstruct_volume,
    run_pretraining,
)
from .patching import MaskPlan, PatchGrid, make_mask_plan, patchify, unpatchify
from .phantom import PhantomSpec, gen_phantom
from .segmentation import (
    SegModel,
    dice_ce_loss,
    evaluate_segmentation,
    mean_foreground_dice,
    predict_labels,
    run_finetune,
)
from .vhog import compute_gradient_field, informativeness_weights
from .volume import Volume, apply_augment, augment, center_crop, load_volume, save_volume

__version__ = "0.1.0"

__all__ = [
    "AsaError",
    "AsaModel",
    "Checkpoint",
    "ContractViolation",
    "CorruptionError",
    "FormatError",
    "MaskPlan",
    "PatchGrid",
    "PhantomSpec",
    "PlacementError",
    "RunConfig",
    "SegModel",
    "TrainingError",
    "Volume",
    "apply_augment",
    "ar_loss",
    "augment",
    "center_crop",
    "compute_gradient_field",
    "dice_ce_loss",
    "dice_metric",
    "evaluate_segmentation",
    "gen_phantom",
    "hd95_metric",
    "informativeness_weights",
    "load_checkpoint",
    "load_parameters",
    "load_volume",
    "make_eval_volumes",
    "make_mask_plan",
    "make_table",
    "make_train_volumes",
    "mean_foreground_dice",
    "patchify",
    "predict_labels",
    "reconstruct_volume",
    "run_finetune",
    "run_pretraining",
    "save_checkpoint",
    "save_volume",
    "spe_position",
    "spe_vector",
    "unpatchify",
    "vanilla_pe_vector",
]
