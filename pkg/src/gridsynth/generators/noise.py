"""Gaussian noise augmentation: resample real rows and jitter each feature
with noise scaled to a fraction of its empirical standard deviation."""

from __future__ import annotations

import numpy as np

from ..errors import FitError
from ..features import FeatureTable
from ..seeding import spawn_rng
from .base import ClipRange, NoiseConfig, TrainedGenerator


class NoiseAugmenter(TrainedGenerator):
    family = "noise"

    def __init__(self, feature_names, p_r, clip, features, labels, sigmas, config):
        super().__init__(feature_names, p_r, clip)
        self.features = features
        self.labels = labels
        self.sigmas = sigmas
        self.config = config

    def sample(self, n, seed):
        rng = spawn_rng(seed, "noise-sample")
        if n == 0:
            return np.empty((0, self.features.shape[1])), np.empty(0, dtype=np.int64)
        idx = rng.integers(0, len(self.features), size=n)
        noise = rng.normal(size=(n, self.features.shape[1])) * self.sigmas
        X = self.clip.apply(self.features[idx] + noise)
        return X, self.labels[idx].copy()

    def _arrays(self):
        return {
            "features": self.features,
            "labels": self.labels.astype(np.float64),
            "sigmas": self.sigmas,
            "clip_lo": self.clip.lo,
            "clip_hi": self.clip.hi,
        }

    def _config_dict(self):
        return {"seed": self.config.seed, "fraction": self.config.fraction}

    @classmethod
    def from_arrays(cls, config, feature_names, p_r, arrays):
        clip = ClipRange(arrays["clip_lo"], arrays["clip_hi"])
        return cls(feature_names, p_r, clip, arrays["features"],
                   arrays["labels"].astype(np.int64), arrays["sigmas"],
                   NoiseConfig(**config))


def fit_noise_augmenter(table: FeatureTable, cfg: NoiseConfig) -> NoiseAugmenter:
    """Per-column sigma = fraction * empirical std; labels copy over."""
    if table.n_rows < 2:
        raise FitError("noise augmenter needs at least 2 rows")
    X = table.features
    sigmas = cfg.fraction * X.std(axis=0)
    return NoiseAugmenter(
        table.feature_names, table.labels.mean(), ClipRange.from_training(X),
        X.copy(), table.labels.copy(), sigmas, cfg,
    )
