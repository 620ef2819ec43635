"""Spectral reconstruction (RGB to 31-band hyperspectral) with a shallow residual CNN.

Everything runs on numpy; convolution and PReLU kernels are numba-compiled
unless ``SPECRECON_DISABLE_NUMBA=1`` is set.
"""
__version__ = "0.1.0"

from .data import HyperCube, SpectralResponse, augment, cie1964, extract_patches, make_folds, synthesize_rgb
from .formats import load_cube, load_params, save_cube, save_params
from .inference import enhanced_predict, predict_image
from .metrics import compute_metrics, evaluate_dataset
from .model import ModelConfig, ModelParams, backward, forward, init_params, l2_loss, receptive_field
from .optim import AdamState, TrainConfig, adam_step, lr_at, train

__all__ = [
    "AdamState", "HyperCube", "ModelConfig", "ModelParams", "SpectralResponse", "TrainConfig",
    "adam_step", "augment", "backward", "cie1964", "compute_metrics", "enhanced_predict",
    "evaluate_dataset", "extract_patches", "forward", "init_params", "l2_loss", "load_cube",
    "load_params", "lr_at", "make_folds", "predict_image", "receptive_field", "save_cube",
    "save_params", "synthesize_rgb", "train",
]
