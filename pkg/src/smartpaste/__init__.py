"""Smart copy-paste: forged training pairs, a numpy autodiff engine and a
WGAN-GP trained generator that harmonizes a pasted region with its context."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .models import CriticConfig, GeneratorConfig, composite_output, critic_forward, generator_forward
from .sample_forge import Corpus, ForgeConfig, MaskConfig, forge_batch, forge_sample, load_corpus
from .tensor_core import ContractError, SeededRng, read_image, read_mask, write_image
from .trainer import TrainConfig, TrainState, init_state, train, train_step
from .cli import paste_images

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "load_checkpoint", "save_checkpoint",
    "CriticConfig", "GeneratorConfig", "composite_output", "critic_forward", "generator_forward",
    "Corpus", "ForgeConfig", "MaskConfig", "forge_batch", "forge_sample", "load_corpus",
    "ContractError", "SeededRng", "read_image", "read_mask", "write_image",
    "TrainConfig", "TrainState", "init_state", "train", "train_step",
    "paste_images",
]
