"""Conditional tabular GAN with mode-specific normalization.

Each continuous column is encoded against a per-column Gaussian mixture
(EM, 5 modes) as a (within-mode scalar, mode one-hot) pair; the binary
label is the single discrete column and doubles as the conditional
vector, sampled during training by log-frequency. Adversarial losses
follow the gradient-penalty Wasserstein recipe, plus a cross-entropy term
tying the generator's label head to the sampled condition. Generated rows
carry the condition as their label, so requested labels are honoured by
construction.
"""

from __future__ import annotations

from dataclasses import asdict

import numpy as np

from .. import autodiff as ad
from ..errors import DivergenceError, FitError
from ..features import FeatureTable
from ..seeding import spawn_rng
from .base import ClipRange, CtganConfig, TrainedGenerator


class ColumnGmm:
    """Per-column Gaussian mixture for mode-specific normalization."""

    def __init__(self, weights, means, stds):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.means = np.asarray(means, dtype=np.float64)
        self.stds = np.asarray(stds, dtype=np.float64)

    @property
    def n_modes(self):
        return len(self.weights)

    def responsibilities(self, values):
        v = np.asarray(values, dtype=np.float64)[:, None]
        log_p = (
            np.log(np.maximum(self.weights, 1e-12))[None, :]
            - np.log(self.stds)[None, :]
            - 0.5 * ((v - self.means[None, :]) / self.stds[None, :]) ** 2
        )
        log_p -= log_p.max(axis=1, keepdims=True)
        p = np.exp(log_p)
        return p / p.sum(axis=1, keepdims=True)

    def encode(self, values, rng):
        """(alpha, mode index): alpha = (v - mu_m) / (4 sigma_m), m ~ resp."""
        resp = self.responsibilities(values)
        cum = np.cumsum(resp, axis=1)
        u = rng.random(len(values))[:, None]
        modes = (u > cum).sum(axis=1)
        modes = np.minimum(modes, self.n_modes - 1)
        alpha = (np.asarray(values) - self.means[modes]) / (4.0 * self.stds[modes])
        return alpha, modes

    def decode(self, alpha, modes):
        return np.asarray(alpha) * 4.0 * self.stds[modes] + self.means[modes]


def fit_column_gmm(values, n_modes=5, max_iter=100, tol=1e-6, seed=0) -> ColumnGmm:
    """EM fit; a constant column degenerates to one mode with std 1e-6."""
    v = np.asarray(values, dtype=np.float64)
    if v.std() == 0.0:
        return ColumnGmm([1.0], [float(v.mean())], [1e-6])
    k = min(n_modes, len(np.unique(v)))
    qs = np.linspace(0, 1, k + 2)[1:-1]
    means = np.quantile(v, qs)
    stds = np.full(k, max(v.std() / k, 1e-6))
    weights = np.full(k, 1.0 / k)
    prev_ll = -np.inf
    for _ in range(max_iter):
        model = ColumnGmm(weights, means, stds)
        x = v[:, None]
        log_comp = (
            np.log(np.maximum(weights, 1e-12))[None, :]
            - np.log(stds)[None, :]
            - 0.5 * ((x - means[None, :]) / stds[None, :]) ** 2
            - 0.5 * np.log(2.0 * np.pi)
        )
        m = log_comp.max(axis=1, keepdims=True)
        ll = float((m.ravel() + np.log(np.exp(log_comp - m).sum(axis=1))).mean())
        resp = model.responsibilities(v)
        nk = resp.sum(axis=0)
        weights = np.maximum(nk / len(v), 1e-8)
        weights = weights / weights.sum()
        means = (resp * x).sum(axis=0) / np.maximum(nk, 1e-12)
        var = (resp * (x - means[None, :]) ** 2).sum(axis=0) / np.maximum(nk, 1e-12)
        stds = np.sqrt(np.maximum(var, 1e-12))
        if abs(ll - prev_ll) < tol * max(1.0, abs(prev_ll)):
            break
        prev_ll = ll
    return ColumnGmm(weights, means, stds)


class ModeSpecificEncoder:
    """Row codec: [alpha_j, onehot_j]*d continuous blocks + label one-hot."""

    def __init__(self, gmms):
        self.gmms = gmms
        self.widths = [1 + g.n_modes for g in gmms]
        self.offsets = np.concatenate([[0], np.cumsum(self.widths)])
        self.width = int(self.offsets[-1]) + 2  # + label one-hot

    def encode(self, X, labels, rng):
        n, d = X.shape
        out = np.zeros((n, self.width))
        for j, gmm in enumerate(self.gmms):
            alpha, modes = gmm.encode(X[:, j], rng)
            off = int(self.offsets[j])
            out[:, off] = alpha
            out[np.arange(n), off + 1 + modes] = 1.0
        out[np.arange(n), int(self.offsets[-1]) + labels] = 1.0
        return out

    def decode_features(self, encoded):
        n = len(encoded)
        X = np.empty((n, len(self.gmms)))
        for j, gmm in enumerate(self.gmms):
            off = int(self.offsets[j])
            alpha = encoded[:, off]
            modes = np.argmax(encoded[:, off + 1 : off + 1 + gmm.n_modes], axis=1)
            X[:, j] = gmm.decode(alpha, modes)
        return X


class CtganGenerator(TrainedGenerator):
    family = "ctgan"

    def __init__(self, feature_names, p_r, clip, gen_mlp, disc_mlp, encoder,
                 label_log_freq, config, training_log):
        super().__init__(feature_names, p_r, clip, training_log)
        self.gen = gen_mlp
        self.disc = disc_mlp
        self.encoder = encoder
        self.label_log_freq = np.asarray(label_log_freq, dtype=np.float64)
        self.config = config

    def sample(self, n, seed, condition=None):
        """Sample n rows; condition pins the label for every row."""
        d = len(self.feature_names)
        if n == 0:
            return np.empty((0, d)), np.empty(0, dtype=np.int64)
        rng = spawn_rng(seed, "ctgan-sample")
        if condition is None:
            probs = self.label_log_freq / self.label_log_freq.sum()
            labels = rng.choice(2, size=n, p=probs)
        else:
            labels = np.full(n, int(condition), dtype=np.int64)
        cond = np.zeros((n, 2))
        cond[np.arange(n), labels] = 1.0
        z = rng.normal(size=(n, self.config.latent_dim))
        with ad.no_grad():
            encoded = _generator_rows(self.gen, self.encoder,
                                      ad.Tensor(np.column_stack([z, cond])))
        X = self.clip.apply(self.encoder.decode_features(encoded.data))
        return X, labels

    def _arrays(self):
        arrays = {"clip_lo": self.clip.lo, "clip_hi": self.clip.hi,
                  "label_log_freq": self.label_log_freq}
        for j, gmm in enumerate(self.encoder.gmms):
            arrays[f"gmm_{j}_weights"] = gmm.weights
            arrays[f"gmm_{j}_means"] = gmm.means
            arrays[f"gmm_{j}_stds"] = gmm.stds
        for i, arr in enumerate(self.gen.state_arrays()):
            arrays[f"gen_{i}"] = arr
        for i, arr in enumerate(self.disc.state_arrays()):
            arrays[f"disc_{i}"] = arr
        return arrays

    def _config_dict(self):
        return asdict(self.config)

    @classmethod
    def from_arrays(cls, config, feature_names, p_r, arrays):
        cfg = CtganConfig(**config)
        d = len(feature_names)
        gmms = []
        for j in range(d):
            gmms.append(ColumnGmm(arrays[f"gmm_{j}_weights"], arrays[f"gmm_{j}_means"],
                                  arrays[f"gmm_{j}_stds"]))
        encoder = ModeSpecificEncoder(gmms)
        gen, disc = _build_networks(encoder, cfg, np.random.default_rng(0))
        gen.load_state_arrays([arrays[f"gen_{i}"] for i in range(2 * len(gen.layers))])
        disc.load_state_arrays([arrays[f"disc_{i}"] for i in range(2 * len(disc.layers))])
        clip = ClipRange(arrays["clip_lo"], arrays["clip_hi"])
        return cls(feature_names, p_r, clip, gen, disc, encoder,
                   arrays["label_log_freq"], cfg, [])


def _build_networks(encoder, cfg, rng):
    gen = ad.Mlp([cfg.latent_dim + 2, cfg.hidden, cfg.hidden, encoder.width],
                 activations=["relu", "relu", "identity"], rng=rng)
    disc = ad.Mlp([encoder.width + 2, cfg.hidden, cfg.hidden, 1],
                  activations=["relu", "relu", "identity"], rng=rng)
    return gen, disc


def _generator_rows(gen, encoder, z_cond):
    """Raw generator output activated blockwise into an encoded row."""
    raw = gen(z_cond)
    parts = []
    for j, gmm in enumerate(encoder.gmms):
        off = int(encoder.offsets[j])
        parts.append(ad.tanh(ad.slice_cols(raw, off, off + 1)))
        parts.append(ad.softmax_rows(ad.slice_cols(raw, off + 1, off + 1 + gmm.n_modes)))
    lab_off = int(encoder.offsets[-1])
    parts.append(ad.softmax_rows(ad.slice_cols(raw, lab_off, lab_off + 2)))
    return ad.concat_cols(parts)


def _label_softmax(encoded, encoder):
    lab_off = int(encoder.offsets[-1])
    return ad.slice_cols(encoded, lab_off, lab_off + 2)


def train_cond_tab_gan(table: FeatureTable, cfg: CtganConfig) -> CtganGenerator:
    """Train the conditional GAN on the mode-encoded table."""
    n, d = table.features.shape
    y = table.labels
    counts = np.bincount(y, minlength=2)
    if counts.min() < 2:
        raise FitError("need at least 2 rows per class")

    enc_rng = spawn_rng(cfg.seed, "ctgan-encode")
    gmms = [
        fit_column_gmm(table.features[:, j], cfg.gmm_modes, cfg.gmm_max_iter,
                       cfg.gmm_tol, cfg.seed)
        for j in range(d)
    ]
    encoder = ModeSpecificEncoder(gmms)
    encoded = encoder.encode(table.features, y, enc_rng)

    log_freq = np.log(1.0 + counts.astype(np.float64))
    cond_probs = log_freq / log_freq.sum()
    by_class = [np.nonzero(y == c)[0] for c in (0, 1)]

    rng = spawn_rng(cfg.seed, "ctgan-train")
    gen, disc = _build_networks(encoder, cfg, spawn_rng(cfg.seed, "ctgan-init"))
    opt_g = ad.Adam(gen.parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    opt_d = ad.Adam(disc.parameters(), cfg.lr, cfg.beta1, cfg.beta2)

    batch = min(cfg.batch_size, n)
    steps = max(1, n // batch)

    def draw_batch():
        cats = rng.choice(2, size=batch, p=cond_probs)
        rows = np.empty(batch, dtype=np.int64)
        for c in (0, 1):
            mask = cats == c
            if mask.any():
                rows[mask] = by_class[c][rng.integers(0, len(by_class[c]), int(mask.sum()))]
        cond = np.zeros((batch, 2))
        cond[np.arange(batch), cats] = 1.0
        return rows, cond, cats

    log_entries = []
    for epoch in range(cfg.epochs):
        d_losses, g_losses, ce_losses = [], [], []
        for _ in range(steps):
            for _ in range(cfg.n_critic):
                rows, cond, _ = draw_batch()
                real_in = np.column_stack([encoded[rows], cond])
                z = rng.normal(size=(batch, cfg.latent_dim))
                with ad.no_grad():
                    fake_rows = _generator_rows(gen, encoder,
                                                ad.Tensor(np.column_stack([z, cond])))
                fake_in = np.column_stack([fake_rows.data, cond])
                d_real = disc(ad.Tensor(real_in))
                d_fake = disc(ad.Tensor(fake_in))
                gp = ad.gradient_penalty(disc, real_in, fake_in, rng)
                loss_d = ad.add(ad.sub(ad.mean(d_fake), ad.mean(d_real)),
                                ad.mul(gp, cfg.lambda_gp))
                opt_d.zero_grad()
                ad.backward(loss_d)
                opt_d.step()
                d_losses.append(loss_d.item())

            rows, cond, cats = draw_batch()
            z = rng.normal(size=(batch, cfg.latent_dim))
            fake_rows = _generator_rows(gen, encoder,
                                        ad.Tensor(np.column_stack([z, cond])))
            d_fake = disc(ad.concat_cols([fake_rows, ad.Tensor(cond)]))
            label_probs = _label_softmax(fake_rows, encoder)
            ce = ad.neg(ad.mean(ad.sum_axis1(
                ad.mul(ad.Tensor(cond), ad.log(ad.clamp(label_probs, 1e-7, 1.0)))
            )))
            loss_g = ad.add(ad.neg(ad.mean(d_fake)), ce)
            opt_g.zero_grad()
            ad.backward(loss_g)
            opt_g.step()
            g_losses.append(loss_g.item())
            ce_losses.append(ce.item())

        entry = {
            "epoch": epoch,
            "disc_loss": float(np.mean(d_losses)),
            "gen_loss": float(np.mean(g_losses)),
            "condition_ce": float(np.mean(ce_losses)),
        }
        if not all(np.isfinite(v) for v in entry.values()):
            raise DivergenceError(epoch)
        log_entries.append(entry)

    return CtganGenerator(
        table.feature_names, float(y.mean()), ClipRange.from_training(table.features),
        gen, disc, encoder, log_freq, cfg, log_entries,
    )
