"""Distributional similarity between real and synthetic feature tables.

Kernel density estimates with Scott's-rule bandwidths feed Monte Carlo
estimates of the KL and JS divergences (no closed forms exist for KDE
mixtures). Moment parity compares per-feature mean/std/skewness/kurtosis,
and a 2-D principal-component projection is exported for visual checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, SchemaError
from .pca import top_eigenvectors, zscore_columns
from .seeding import spawn_rng

DENSITY_FLOOR = 1e-300
_LOG_FLOOR = np.log(DENSITY_FLOOR)
_MC_CHUNK = 4000


@dataclass
class KdeModel:
    """Product-Gaussian KDE with per-dimension bandwidths."""

    data: np.ndarray          # (m, d) reference points
    bandwidths: np.ndarray    # (d,)

    def __post_init__(self):
        self._scaled = self.data / self.bandwidths
        m, d = self.data.shape
        self._log_const = -(
            np.log(m) + np.log(self.bandwidths).sum() + 0.5 * d * np.log(2.0 * np.pi)
        )
        self._sq_norms = (self._scaled**2).sum(axis=1)

    @property
    def dim(self):
        return self.data.shape[1]

    def log_density(self, X) -> np.ndarray:
        """Log density at query points, evaluated in fixed-size chunks."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.dim:
            raise SchemaError(f"query dim {X.shape[1]} != kde dim {self.dim}")
        out = np.empty(len(X))
        for lo in range(0, len(X), _MC_CHUNK):
            q = X[lo : lo + _MC_CHUNK] / self.bandwidths
            sq = (q**2).sum(axis=1)[:, None] + self._sq_norms[None, :] - 2.0 * q @ self._scaled.T
            np.maximum(sq, 0.0, out=sq)
            z = -0.5 * sq
            zmax = z.max(axis=1)
            out[lo : lo + _MC_CHUNK] = (
                zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1)) + self._log_const
            )
        return out

    def sample(self, n, rng) -> np.ndarray:
        idx = rng.integers(0, len(self.data), size=n)
        noise = rng.normal(size=(n, self.dim))
        return self.data[idx] + noise * self.bandwidths


def fit_kde(data) -> KdeModel:
    """Gaussian KDE with Scott's rule: h_j = sigma_j * n^(-1/(d+4)).

    Constant columns get their bandwidth floored at 1e-6 of the global
    data scale so the density stays proper.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise InsufficientDataError("KDE needs an (n>=2, d) matrix")
    n, d = data.shape
    sigmas = data.std(axis=0, ddof=1)
    factor = float(n) ** (-1.0 / (d + 4))
    h = sigmas * factor
    scale = float(data.max() - data.min())
    if scale <= 0:
        scale = 1.0
    h = np.where(h <= 0, 1e-6 * scale, h)
    return KdeModel(data.copy(), h)


def scott_bandwidth_factor(n, d) -> float:
    return float(n) ** (-1.0 / (d + 4))


def kl_divergence(p: KdeModel, q: KdeModel, mc_n=20000, seed=0):
    """Monte Carlo KL(P||Q) with the Q density floored at 1e-300.

    Returns (kl, mc_standard_error).
    """
    if p.dim != q.dim:
        raise SchemaError("KDE dimension mismatch")
    rng = spawn_rng(seed, "kl")
    ratios = np.empty(mc_n)
    for lo in range(0, mc_n, _MC_CHUNK):
        take = min(_MC_CHUNK, mc_n - lo)
        x = p.sample(take, rng)
        ratios[lo : lo + take] = p.log_density(x) - np.maximum(q.log_density(x), _LOG_FLOOR)
    kl = float(ratios.mean())
    se = float(ratios.std(ddof=1) / np.sqrt(mc_n))
    return kl, se


def js_divergence(p: KdeModel, q: KdeModel, mc_n=20000, seed=0):
    """Monte Carlo JS(P, Q), clamped to [0, ln 2]; returns (js, mc_se)."""
    if p.dim != q.dim:
        raise SchemaError("KDE dimension mismatch")
    half = mc_n // 2
    terms = []
    ses = []
    for tag, (model, alt) in enumerate(((p, q), (q, p))):
        rng = spawn_rng(seed, "js", tag)
        vals = np.empty(half)
        for lo in range(0, half, _MC_CHUNK):
            take = min(_MC_CHUNK, half - lo)
            x = model.sample(take, rng)
            log_own = model.log_density(x)
            log_alt = alt.log_density(x)
            log_mix = np.logaddexp(log_own, log_alt) - np.log(2.0)
            vals[lo : lo + take] = log_own - log_mix
        terms.append(vals.mean())
        ses.append(vals.std(ddof=1) / np.sqrt(half))
    js = 0.5 * (terms[0] + terms[1])
    js = float(np.clip(js, 0.0, np.log(2.0)))
    se = float(0.5 * np.sqrt(ses[0] ** 2 + ses[1] ** 2))
    return js, se


def _column_moments(X):
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    centered = X - mean
    m2 = (centered**2).mean(axis=0)
    m3 = (centered**3).mean(axis=0)
    m4 = (centered**4).mean(axis=0)
    std = np.sqrt(m2)
    with np.errstate(divide="ignore", invalid="ignore"):
        skew = np.where(m2 > 0, m3 / np.power(m2, 1.5, where=m2 > 0), 0.0)
        kurt = np.where(m2 > 0, m4 / np.power(m2, 2.0, where=m2 > 0) - 3.0, 0.0)
    return mean, std, skew, kurt


def moment_parity(real, synth, feature_names=None):
    """Per-feature moment table with absolute real-synthetic deltas.

    Skewness and excess kurtosis use the bias-uncorrected g1/g2 forms.
    """
    real = np.asarray(real, dtype=np.float64)
    synth = np.asarray(synth, dtype=np.float64)
    if real.shape[1] != synth.shape[1]:
        raise SchemaError("moment_parity: column count mismatch")
    names = feature_names or [f"f{i}" for i in range(real.shape[1])]
    r = _column_moments(real)
    s = _column_moments(synth)
    table = []
    for j, name in enumerate(names):
        row = {"feature": name}
        for stat_idx, stat in enumerate(("mean", "std", "skewness", "kurtosis")):
            rv = float(r[stat_idx][j])
            sv = float(s[stat_idx][j])
            row[f"real_{stat}"] = rv
            row[f"synth_{stat}"] = sv
            row[f"delta_{stat}"] = abs(rv - sv)
        table.append(row)
    return table


def project_2d(real, synth):
    """Project both tables onto the top-2 PCs of the pooled z-scored data.

    Returns a list of (x, y, source) rows, source in {"real", "synthetic"}.
    """
    real = np.asarray(real, dtype=np.float64)
    synth = np.asarray(synth, dtype=np.float64)
    if real.shape[1] != synth.shape[1] or real.shape[1] < 2:
        raise SchemaError("project_2d expects matching tables with >= 2 features")
    pooled = np.vstack([real, synth])
    z, means, stds, _ = zscore_columns(pooled)
    cov = (z.T @ z) / len(z)
    vectors, _ = top_eigenvectors(cov, k=2, tol=1e-10)
    coords = z @ vectors.T
    rows = []
    for i in range(len(real)):
        rows.append((float(coords[i, 0]), float(coords[i, 1]), "real"))
    for i in range(len(real), len(pooled)):
        rows.append((float(coords[i, 0]), float(coords[i, 1]), "synthetic"))
    return rows


@dataclass
class FidelityReport:
    kl: float
    kl_se: float
    js: float
    js_se: float
    mc_sample_count: int
    moments: list = field(default_factory=list)

    def to_dict(self):
        return {
            "kl": self.kl,
            "kl_se": self.kl_se,
            "js": self.js,
            "js_se": self.js_se,
            "mc_sample_count": self.mc_sample_count,
            "moments": self.moments,
        }


def compute_fidelity(real_X, synth_X, feature_names=None, mc_n=20000, seed=0) -> FidelityReport:
    """KL(real||synth), JS(real, synth) and the moment table."""
    p = fit_kde(real_X)
    q = fit_kde(synth_X)
    kl, kl_se = kl_divergence(p, q, mc_n=mc_n, seed=seed)
    js, js_se = js_divergence(p, q, mc_n=mc_n, seed=seed)
    return FidelityReport(
        kl=kl, kl_se=kl_se, js=js, js_se=js_se, mc_sample_count=mc_n,
        moments=moment_parity(real_X, synth_X, feature_names),
    )
