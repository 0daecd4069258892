"""Dual-head denoising diffusion generator for labelled feature rows.

A single MLP conditioned on a learned time embedding predicts both the
injected noise and a class logit; the composite loss is the noise MSE plus
the label BCE. Sampling runs the deterministic DDIM reverse process on EMA
weights and thresholds the class logit at the final step.
"""

from __future__ import annotations

from dataclasses import asdict

import numpy as np

from .. import autodiff as ad
from ..errors import DivergenceError, FitError
from ..features import FeatureTable
from ..seeding import spawn_rng
from .base import ClipRange, DiffusionConfig, TrainedGenerator


def make_beta_schedule(cfg: DiffusionConfig):
    betas = np.linspace(cfg.beta_start, cfg.beta_end, cfg.timesteps)
    alphas_bar = np.cumprod(1.0 - betas)
    return betas, alphas_bar


def forward_diffuse(x0, eps, t, alphas_bar):
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    a = alphas_bar[t]
    if np.ndim(a):
        a = a[:, None]
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps


def invert_forward(xt, eps, t, alphas_bar):
    """Closed-form inversion of the forward process given the true noise."""
    a = alphas_bar[t]
    if np.ndim(a):
        a = a[:, None]
    return (xt - np.sqrt(1.0 - a) * eps) / np.sqrt(a)


class _ZScaler:
    def __init__(self, X):
        self.means = X.mean(axis=0)
        stds = X.std(axis=0)
        self.stds = np.where(stds == 0.0, 1.0, stds)

    def transform(self, X):
        return (X - self.means) / self.stds

    def inverse(self, Xn):
        return Xn * self.stds + self.means


class DiffusionGenerator(TrainedGenerator):
    family = "diffusion"

    def __init__(self, feature_names, p_r, clip, model, time_table, ema_arrays,
                 scaler_means, scaler_stds, config, training_log):
        super().__init__(feature_names, p_r, clip, training_log)
        self.model = model
        self.time_table = time_table
        self.ema_arrays = ema_arrays  # EMA copies of model params + embedding
        self.scaler_means = scaler_means
        self.scaler_stds = scaler_stds
        self.config = config
        _, self.alphas_bar = make_beta_schedule(config)

    def _ema_model(self):
        d = len(self.feature_names)
        model, table = _build_model(d, self.config, np.random.default_rng(0))
        model.load_state_arrays(self.ema_arrays[:-1])
        table.data = self.ema_arrays[-1].copy()
        return model, table

    def sample(self, n, seed):
        d = len(self.feature_names)
        if n == 0:
            return np.empty((0, d)), np.empty(0, dtype=np.int64)
        rng = spawn_rng(seed, "diffusion-sample")
        model, table = self._ema_model()
        x = rng.normal(size=(n, d))
        abar = self.alphas_bar
        with ad.no_grad():
            for t in range(self.config.timesteps - 1, 0, -1):
                eps_hat, _ = _heads_numpy(model, table, x, np.full(n, t), d)
                x0_pred = invert_forward(x, eps_hat, t, abar)
                x = np.sqrt(abar[t - 1]) * x0_pred + np.sqrt(1.0 - abar[t - 1]) * eps_hat
            _, logits = _heads_numpy(model, table, x, np.zeros(n, dtype=np.int64), d)
        labels = (1.0 / (1.0 + np.exp(-logits.ravel())) > 0.5).astype(np.int64)
        X = x * self.scaler_stds + self.scaler_means
        return self.clip.apply(X), labels

    def _arrays(self):
        arrays = {"scaler_means": self.scaler_means, "scaler_stds": self.scaler_stds,
                  "clip_lo": self.clip.lo, "clip_hi": self.clip.hi,
                  "time_table": self.time_table.data}
        for i, arr in enumerate(self.model.state_arrays()):
            arrays[f"model_{i}"] = arr
        for i, arr in enumerate(self.ema_arrays):
            arrays[f"ema_{i}"] = arr
        return arrays

    def _config_dict(self):
        return asdict(self.config)

    @classmethod
    def from_arrays(cls, config, feature_names, p_r, arrays):
        cfg = DiffusionConfig(**config)
        d = len(feature_names)
        model, table = _build_model(d, cfg, np.random.default_rng(0))
        n_model = 2 * len(model.layers)
        model.load_state_arrays([arrays[f"model_{i}"] for i in range(n_model)])
        table.data = arrays["time_table"].copy()
        ema = [arrays[f"ema_{i}"].copy() for i in range(n_model + 1)]
        clip = ClipRange(arrays["clip_lo"], arrays["clip_hi"])
        return cls(feature_names, p_r, clip, model, table, ema,
                   arrays["scaler_means"], arrays["scaler_stds"], cfg, [])


def _build_model(d, cfg, rng):
    model = ad.Mlp([d + cfg.time_embed_dim, cfg.hidden, cfg.hidden, d + 1],
                   activations=["relu", "relu", "identity"], rng=rng)
    table = ad.Tensor(rng.normal(0.0, 0.1, size=(cfg.timesteps, cfg.time_embed_dim)),
                      requires_grad=True)
    return model, table


def _forward(model, table, x, t):
    emb = ad.embedding(table, np.asarray(t, dtype=np.int64))
    return model(ad.concat_cols([ad.as_tensor(x), emb]))


def _heads_numpy(model, table, x, t, d):
    out = _forward(model, table, x, t).data
    return out[:, :d], out[:, d]


def _heads_tensor(model, table, x, t, d):
    out = _forward(model, table, x, t)
    return ad.slice_cols(out, 0, d), ad.slice_cols(out, d, d + 1)


def train_diffusion(table: FeatureTable, cfg: DiffusionConfig) -> DiffusionGenerator:
    """Composite-loss training (noise MSE + label BCE) with an EMA shadow."""
    n, d = table.features.shape
    if n < 2:
        raise FitError("diffusion needs at least 2 rows")
    scaler = _ZScaler(table.features)
    X = scaler.transform(table.features)
    y = table.labels.astype(np.float64)[:, None]
    _, alphas_bar = make_beta_schedule(cfg)

    rng = spawn_rng(cfg.seed, "diffusion-train")
    model, time_table = _build_model(d, cfg, spawn_rng(cfg.seed, "diffusion-init"))
    params = model.parameters() + [time_table]
    opt = ad.Adam(params, cfg.lr)
    ema = ad.EmaTracker(params, cfg.ema_decay)

    batch = min(cfg.batch_size, n)
    log_entries = []
    for epoch in range(cfg.epochs):
        mse_losses, bce_losses = [], []
        order = rng.permutation(n)
        for lo in range(0, n, batch):
            idx = order[lo : lo + batch]
            m = len(idx)
            t = rng.integers(0, cfg.timesteps, m)
            eps = rng.normal(size=(m, d))
            x_t = forward_diffuse(X[idx], eps, t, alphas_bar)
            eps_hat, logit = _heads_tensor(model, time_table, x_t, t, d)
            loss_mse = ad.mse(eps_hat, ad.Tensor(eps))
            loss_bce = ad.bce(ad.sigmoid(logit), ad.Tensor(y[idx]))
            loss = ad.add(loss_mse, loss_bce)
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            ema.update(params)
            mse_losses.append(loss_mse.item())
            bce_losses.append(loss_bce.item())
        entry = {
            "epoch": epoch,
            "noise_mse": float(np.mean(mse_losses)),
            "label_bce": float(np.mean(bce_losses)),
        }
        if not all(np.isfinite(v) for v in entry.values()):
            raise DivergenceError(epoch)
        log_entries.append(entry)

    return DiffusionGenerator(
        table.feature_names, float(table.labels.mean()),
        ClipRange.from_training(table.features), model, time_table,
        ema.arrays(), scaler.means, scaler.stds, cfg, log_entries,
    )
