"""Shared generator contracts: configs, the trained-generator interface,
synthesis regimes, and checkpoint IO.

All four families sample the full feature set (classifier features plus
the carried mean-consumption column) together with a binary label, and
decode into the training table's units. Decoded features are clipped to
[col_min - 3*sigma, col_max + 3*sigma] of the training columns so that
divergent tails cannot break the downstream density estimates.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import SchemaError, ValidationError
from ..features import FeatureTable

log = logging.getLogger(__name__)

_MAGIC = b"GSGEN\x00"
_VERSION = 1


@dataclass
class SynthesisRegime:
    kind: str  # "semi" | "full"
    synth_fraction: float = 1.0

    def __post_init__(self):
        if self.kind not in ("semi", "full"):
            raise ValidationError(f"unknown regime {self.kind!r}")
        if self.kind == "semi" and self.synth_fraction <= 0:
            raise ValidationError("synth_fraction must be > 0")


@dataclass
class WganConfig:
    seed: int = 0
    epochs: int = 100
    batch_size: int = 32
    latent_dim: int = 16
    hidden: int = 128
    n_critic: int = 5
    lambda_gp: float = 10.0
    lambda_bal: float = 1.0
    lambda_ent: float = 0.1
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.9


@dataclass
class DiffusionConfig:
    seed: int = 0
    epochs: int = 50
    batch_size: int = 32
    timesteps: int = 100
    hidden: int = 128
    time_embed_dim: int = 16
    lr: float = 1e-3
    ema_decay: float = 0.999
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class CtganConfig:
    seed: int = 0
    epochs: int = 300
    batch_size: int = 500
    latent_dim: int = 128
    hidden: int = 256
    gmm_modes: int = 5
    gmm_max_iter: int = 100
    gmm_tol: float = 1e-6
    n_critic: int = 5
    lambda_gp: float = 10.0
    lr: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.9


@dataclass
class NoiseConfig:
    seed: int = 0
    fraction: float = 0.1


CONFIG_CLASSES = {
    "wgan": WganConfig,
    "diffusion": DiffusionConfig,
    "ctgan": CtganConfig,
    "noise": NoiseConfig,
}


def make_config(family: str, overrides: dict | None = None):
    if family not in CONFIG_CLASSES:
        raise ValidationError(f"unknown generator family {family!r}")
    overrides = dict(overrides or {})
    cls = CONFIG_CLASSES[family]
    valid = set(cls.__dataclass_fields__)
    unknown = set(overrides) - valid
    if unknown:
        raise ValidationError(f"unknown {family} config keys: {sorted(unknown)}")
    return cls(**overrides)


@dataclass
class ClipRange:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def from_training(cls, X):
        X = np.asarray(X, dtype=np.float64)
        sigma = X.std(axis=0)
        return cls(X.min(axis=0) - 3.0 * sigma, X.max(axis=0) + 3.0 * sigma)

    def apply(self, X):
        clipped = np.clip(X, self.lo, self.hi)
        n_hit = int(np.sum(clipped != X))
        if n_hit:
            log.info("clipped %d sampled value(s) into the training range", n_hit)
        return clipped


class TrainedGenerator:
    """Base for the four synthesizer families."""

    family = "base"

    def __init__(self, feature_names, p_r, clip: ClipRange, training_log=None):
        self.feature_names = list(feature_names)
        self.p_r = float(p_r)
        self.clip = clip
        self.training_log = training_log or []

    def sample(self, n, seed):
        """Return (features, labels); deterministic in (model, seed)."""
        raise NotImplementedError

    def _arrays(self) -> dict:
        raise NotImplementedError

    def _config_dict(self) -> dict:
        raise NotImplementedError

    def save(self, path):
        save_checkpoint(path, self.family, self._config_dict(), self.feature_names,
                        self.p_r, self._arrays())


def synthesize(gen: TrainedGenerator, regime: SynthesisRegime, real: FeatureTable,
               seed: int) -> FeatureTable:
    """Materialize a synthetic or augmented table under the given regime."""
    if list(gen.feature_names) != list(real.feature_names):
        raise SchemaError("generator schema does not match the real table")
    n_real = real.n_rows
    if regime.kind == "full":
        n_syn = n_real
    else:
        n_syn = int(np.ceil(regime.synth_fraction * n_real))
    X, y = gen.sample(n_syn, seed)
    ids = [f"S{i:05d}" for i in range(n_syn)]
    if regime.kind == "full":
        return FeatureTable(ids, list(real.feature_names), X, y)
    return FeatureTable(
        list(real.household_ids) + ids,
        list(real.feature_names),
        np.vstack([real.features, X]) if n_syn else real.features.copy(),
        np.concatenate([real.labels, y]),
    )


# --- min-max helper for the adversarial families ----------------------------


@dataclass
class MinMaxScaler:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=np.float64)
        return cls(X.min(axis=0), X.max(axis=0))

    def transform(self, X):
        """Map to [-1, 1]; constant columns map to 0."""
        span = self.hi - self.lo
        safe = np.where(span == 0, 1.0, span)
        out = 2.0 * (X - self.lo) / safe - 1.0
        return np.where(span == 0, 0.0, out)

    def inverse(self, Xn):
        span = self.hi - self.lo
        return (Xn + 1.0) / 2.0 * span + self.lo


# --- checkpoint format -------------------------------------------------------
#
# magic "GSGEN\0" | uint32 version | uint64 header_len | header JSON (utf-8)
# followed by the arrays named in header["arrays"], each float64
# little-endian, C order. Shapes live in the header.


def save_checkpoint(path, family, config, feature_names, p_r, arrays: dict):
    header = {
        "family": family,
        "config": config,
        "feature_names": list(feature_names),
        "p_r": p_r,
        "arrays": [{"name": k, "shape": list(np.asarray(v).shape)} for k, v in arrays.items()],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for spec in header["arrays"]:
            arr = np.ascontiguousarray(arrays[spec["name"]], dtype=np.float64)
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (family, config, feature_names, p_r, arrays)."""
    raw = Path(path).read_bytes()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise ValidationError(f"{path}: not a generator checkpoint")
    off = len(_MAGIC)
    (version,) = struct.unpack_from("<I", raw, off)
    off += 4
    if version != _VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<Q", raw, off)
    off += 8
    header = json.loads(raw[off : off + hlen].decode("utf-8"))
    off += hlen
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape)
        arrays[spec["name"]] = arr.copy()
        off += count * 8
    return header["family"], header["config"], header["feature_names"], header["p_r"], arrays

