"""Synthetic feature-table generators: four families behind one interface."""

from .base import (
    CONFIG_CLASSES,
    CtganConfig,
    DiffusionConfig,
    MinMaxScaler,
    NoiseConfig,
    SynthesisRegime,
    TrainedGenerator,
    WganConfig,
    load_checkpoint,
    make_config,
    save_checkpoint,
    synthesize,
)
from .ctgan import CtganGenerator, fit_column_gmm, train_cond_tab_gan
from .diffusion import (
    DiffusionGenerator,
    forward_diffuse,
    invert_forward,
    make_beta_schedule,
    train_diffusion,
)
from .noise import NoiseAugmenter, fit_noise_augmenter
from .wgan import WganGenerator, train_wgan_gp

_TRAINERS = {
    "wgan": train_wgan_gp,
    "diffusion": train_diffusion,
    "ctgan": train_cond_tab_gan,
    "noise": fit_noise_augmenter,
}

_LOADERS = {
    "wgan": WganGenerator.from_arrays,
    "diffusion": DiffusionGenerator.from_arrays,
    "ctgan": CtganGenerator.from_arrays,
    "noise": NoiseAugmenter.from_arrays,
}


def train_generator(family, table, config=None):
    """Train one generator family on a labelled feature table."""
    cfg = config if config is not None and not isinstance(config, dict) else make_config(
        family, config
    )
    return _TRAINERS[family](table, cfg)


def load_generator(path) -> TrainedGenerator:
    family, config, feature_names, p_r, arrays = load_checkpoint(path)
    return _LOADERS[family](config, feature_names, p_r, arrays)
