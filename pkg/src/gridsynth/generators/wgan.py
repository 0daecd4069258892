"""Wasserstein GAN with gradient penalty, spectrally normalized critic, and
label-balance plus entropy regularizers on the generator.

The generator maps 16-dim Gaussian noise to a feature vector (tanh heads,
trained in min-max [-1, 1] space) and a label probability (sigmoid head).
The critic scores (features, label) rows; five critic updates per
generator update. Removing the regularizers is what drives the label
distribution into collapse, which the evaluation suite exercises.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..errors import DivergenceError, FitError
from ..features import FeatureTable
from ..seeding import spawn_rng
from .base import ClipRange, MinMaxScaler, TrainedGenerator, WganConfig


# Relaxation temperature of the label head: the sigmoid logit is scaled by
# this gain so probabilities saturate enough that the thresholded sampling
# ratio tracks the regularized batch mean.
LABEL_LOGIT_GAIN = 3.0


class WganGenerator(TrainedGenerator):
    family = "wgan"

    def __init__(self, feature_names, p_r, clip, gen_mlp, critic_mlp, scaler,
                 config, training_log):
        super().__init__(feature_names, p_r, clip, training_log)
        self.gen = gen_mlp
        self.critic = critic_mlp
        self.scaler = scaler
        self.config = config

    def sample(self, n, seed):
        d = len(self.feature_names)
        if n == 0:
            return np.empty((0, d)), np.empty(0, dtype=np.int64)
        rng = spawn_rng(seed, "wgan-sample")
        z = rng.normal(size=(n, self.config.latent_dim))
        with ad.no_grad():
            feats_n, label_p = _generator_heads(self.gen, ad.Tensor(z), d)
        X = self.clip.apply(self.scaler.inverse(feats_n.data))
        labels = (label_p.data.ravel() > 0.5).astype(np.int64)
        return X, labels

    def _arrays(self):
        arrays = {"scaler_lo": self.scaler.lo, "scaler_hi": self.scaler.hi,
                  "clip_lo": self.clip.lo, "clip_hi": self.clip.hi}
        for i, arr in enumerate(self.gen.state_arrays()):
            arrays[f"gen_{i}"] = arr
        for i, arr in enumerate(self.critic.state_arrays()):
            arrays[f"critic_{i}"] = arr
        return arrays

    def _config_dict(self):
        from dataclasses import asdict

        return asdict(self.config)

    @classmethod
    def from_arrays(cls, config, feature_names, p_r, arrays):
        cfg = WganConfig(**config)
        d = len(feature_names)
        gen, critic = _build_networks(d, cfg, np.random.default_rng(0))
        gen.load_state_arrays([arrays[f"gen_{i}"] for i in range(2 * len(gen.layers))])
        critic.load_state_arrays([arrays[f"critic_{i}"] for i in range(2 * len(critic.layers))])
        scaler = MinMaxScaler(arrays["scaler_lo"], arrays["scaler_hi"])
        clip = ClipRange(arrays["clip_lo"], arrays["clip_hi"])
        return cls(feature_names, p_r, clip, gen, critic, scaler, cfg, [])


def _build_networks(d, cfg, rng):
    gen = ad.Mlp([cfg.latent_dim, cfg.hidden, cfg.hidden, d + 1],
                 activations=["relu", "relu", "identity"], rng=rng)
    critic = ad.Mlp([d + 1, cfg.hidden, cfg.hidden, 1],
                    activations=["relu", "relu", "identity"],
                    spectral_norm=True, rng=rng)
    return gen, critic


def _generator_heads(gen, z, d):
    out = gen(z)
    feats = ad.tanh(ad.slice_cols(out, 0, d))
    label_p = ad.sigmoid(ad.mul(ad.slice_cols(out, d, d + 1), LABEL_LOGIT_GAIN))
    return feats, label_p


def _hard_labels(label_p):
    """Thresholded labels with straight-through gradient to the soft probs.

    The critic must see the same hard 0/1 label format as the real rows,
    otherwise it separates real from fake by label interior-ness alone and
    its gradient destabilizes the class ratio.
    """
    hard = (label_p.data > 0.5).astype(np.float64)
    return ad.add(label_p, ad.Tensor(hard - label_p.data))


def _entropy_term(p_mean):
    p = ad.clamp(p_mean, 1e-6, 1.0 - 1e-6)
    one_minus = ad.sub(1.0, p)
    return ad.neg(ad.add(ad.mul(p, ad.log(p)), ad.mul(one_minus, ad.log(one_minus))))


def train_wgan_gp(table: FeatureTable, cfg: WganConfig) -> WganGenerator:
    """Adversarial training per the documented recipe; logs every component."""
    n, d = table.features.shape
    if n < 1:
        raise FitError("empty training table")
    batch = min(cfg.batch_size, n)
    scaler = MinMaxScaler.fit(table.features)
    Xn = scaler.transform(table.features)
    y = table.labels.astype(np.float64)
    rows = np.column_stack([Xn, y])
    p_r = float(y.mean())

    rng = spawn_rng(cfg.seed, "wgan-train")
    init_rng = spawn_rng(cfg.seed, "wgan-init")
    gen, critic = _build_networks(d, cfg, init_rng)
    opt_g = ad.Adam(gen.parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    opt_c = ad.Adam(critic.parameters(), cfg.lr, cfg.beta1, cfg.beta2)

    steps = max(1, n // batch)
    log_entries = []
    for epoch in range(cfg.epochs):
        c_losses, g_losses, gps, label_means = [], [], [], []
        for _ in range(steps):
            for _ in range(cfg.n_critic):
                real = rows[rng.integers(0, n, batch)]
                z = rng.normal(size=(batch, cfg.latent_dim))
                with ad.no_grad():
                    feats, label_p = _generator_heads(gen, ad.Tensor(z), d)
                fake = np.column_stack([feats.data,
                                        (label_p.data > 0.5).astype(np.float64)])
                critic.power_iteration_step()
                c_real = critic(ad.Tensor(real))
                c_fake = critic(ad.Tensor(fake))
                gp = ad.gradient_penalty(critic, real, fake, rng)
                loss_c = ad.add(
                    ad.sub(ad.mean(c_fake), ad.mean(c_real)), ad.mul(gp, cfg.lambda_gp)
                )
                opt_c.zero_grad()
                ad.backward(loss_c)
                opt_c.step()
                c_losses.append(loss_c.item())
                gps.append(gp.item())

            z = rng.normal(size=(batch, cfg.latent_dim))
            feats, label_p = _generator_heads(gen, ad.Tensor(z), d)
            fake_rows = ad.concat_cols([feats, _hard_labels(label_p)])
            c_fake = critic(fake_rows)
            p_mean = ad.mean(label_p)
            balance = ad.square(ad.sub(p_mean, p_r))
            entropy = _entropy_term(p_mean)
            loss_g = ad.add(
                ad.sub(ad.mul(balance, cfg.lambda_bal), ad.mean(c_fake)),
                ad.neg(ad.mul(entropy, cfg.lambda_ent)),
            )
            opt_g.zero_grad()
            ad.backward(loss_g)
            opt_g.step()
            g_losses.append(loss_g.item())
            label_means.append(p_mean.item())

        entry = {
            "epoch": epoch,
            "critic_loss": float(np.mean(c_losses)),
            "gen_loss": float(np.mean(g_losses)),
            "gradient_penalty": float(np.mean(gps)),
            "label_mean": float(np.mean(label_means)),
        }
        if not all(np.isfinite(v) for v in entry.values()):
            raise DivergenceError(epoch)
        log_entries.append(entry)

    return WganGenerator(
        table.feature_names, p_r, ClipRange.from_training(table.features),
        gen, critic, scaler, cfg, log_entries,
    )
