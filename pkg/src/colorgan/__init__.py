"""Conditional GAN image colorization on a small numpy autograd engine."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .colorspace import ColorImage, rgb_to_gray, rgb_to_yuv, yuv_to_rgb
from .data import synth_heldout, synth_isogray_dataset
from .models import Discriminator, Generator, build_discriminator, build_generator
from .studio import diversity_score, grayscale_consistency, multi_round_colorize
from .tensor import Tensor, no_grad
from .train import TrainConfig, Trainer, make_config, train

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ColorImage", "Discriminator", "Generator", "Tensor", "TrainConfig", "Trainer",
    "build_discriminator", "build_generator", "diversity_score", "grayscale_consistency", "load_checkpoint",
    "make_config", "multi_round_colorize", "no_grad", "rgb_to_gray", "rgb_to_yuv", "save_checkpoint",
    "synth_heldout", "synth_isogray_dataset", "train", "yuv_to_rgb",
]
