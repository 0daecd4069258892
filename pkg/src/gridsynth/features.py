"""Behavioural feature extraction and responsiveness labelling.

Each household series is reduced to 24 classifier features plus the
household's mean consumption, which is carried as a separate column so it
can later act as the hidden target of the reconstruction attack (it never
enters classification or scoring). Labels come from projecting z-scored
features onto the first principal component and thresholding the resulting
score at a quantile.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass

import numpy as np

from . import tariff as tariff_mod
from .errors import FitError, InsufficientDataError, SchemaError, ValidationError
from .pca import top_eigenvectors, zscore_columns

log = logging.getLogger(__name__)

SECRET_FEATURE = "mean_consumption"

# The six score-relevant ratios, three autocorrelation summaries, and the
# generic statistics. 24 columns; mean consumption is carried separately.
CLASSIFIER_FEATURES = [
    "high_usage_ratio",
    "low_usage_ratio",
    "peak_hour_ratio",
    "weekend_shift",
    "load_entropy",
    "load_factor_low",
    "acf_mean",
    "acf_max",
    "acf_decay_rate",
    "std_consumption",
    "min_consumption",
    "max_consumption",
    "median_consumption",
    "peak_to_mean_ratio",
    "dow_mean_mon",
    "dow_mean_tue",
    "dow_mean_wed",
    "dow_mean_thu",
    "dow_mean_fri",
    "dow_mean_sat",
    "dow_mean_sun",
    "weekday_mean",
    "weekend_mean",
    "coefficient_of_variation",
]

ALL_FEATURES = CLASSIFIER_FEATURES + [SECRET_FEATURE]

DEFAULT_QUANTILE = 0.75
DEFAULT_MAX_LAG = 20
_ORIENT_FEATURE = "low_usage_ratio"  # PC1 sign anchor


@dataclass
class FeatureVector:
    names: list
    values: np.ndarray

    def __post_init__(self):
        if len(self.names) != len(self.values):
            raise SchemaError("feature names/values length mismatch")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("feature vector contains NaN/Inf")


@dataclass
class FeatureTable:
    """n x d feature matrix with labels and household ids.

    feature_names covers the classifier features plus the carried
    mean-consumption column; classifier_matrix() strips the latter.
    """

    household_ids: list
    feature_names: list
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.household_ids)
        if self.features.shape[0] != n or self.labels.shape[0] != n:
            raise SchemaError("rows, labels and household ids must have equal length")
        if self.features.shape[1] != len(self.feature_names):
            raise SchemaError("feature matrix width does not match names")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise ValidationError("labels must be binary")

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_rows(self):
        return self.features.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            idx = self.feature_names.index(name)
        except ValueError:
            raise SchemaError(f"no feature named {name!r}") from None
        return self.features[:, idx]

    def classifier_matrix(self) -> np.ndarray:
        """Features used for classification/scoring (secret excluded)."""
        keep = [i for i, n in enumerate(self.feature_names) if n != SECRET_FEATURE]
        return self.features[:, keep]

    def classifier_feature_names(self) -> list:
        return [n for n in self.feature_names if n != SECRET_FEATURE]

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["household_id"] + self.feature_names + ["label"])
        for i in range(self.n_rows):
            row = [self.household_ids[i]]
            row += [repr(float(v)) for v in self.features[i]]
            row.append(int(self.labels[i]))
            writer.writerow(row)
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "FeatureTable":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header[0] != "household_id" or header[-1] != "label":
            raise SchemaError("feature CSV must be household_id,<features...>,label")
        names = header[1:-1]
        ids, rows, labels = [], [], []
        for row in reader:
            if not row:
                continue
            ids.append(row[0])
            rows.append([float(v) for v in row[1:-1]])
            labels.append(int(row[-1]))
        return cls(ids, names, np.array(rows, dtype=np.float64), np.array(labels))


def autocorrelation(series: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased-estimator ACF at lags 1..max_lag (zero for constant input)."""
    x = np.asarray(series, dtype=np.float64)
    n = len(x)
    centered = x - x.mean()
    c0 = float(np.dot(centered, centered)) / n
    if c0 == 0.0:
        return np.zeros(max_lag)
    acf = np.empty(max_lag)
    for lag in range(1, max_lag + 1):
        if lag >= n:
            acf[lag - 1] = 0.0
        else:
            acf[lag - 1] = float(np.dot(centered[:-lag], centered[lag:])) / n / c0
    return acf


def _safe_ratio(num, den):
    return float(num / den) if den > 0 else 0.0


def extract_features(series, schedule, max_lag: int = DEFAULT_MAX_LAG) -> FeatureVector:
    """Compute the behavioural feature vector of one household."""
    n = len(series.kwh)
    if n < 48:
        raise InsufficientDataError(
            f"household {series.household_id}: {n} readings, need at least 48"
        )
    kwh = series.kwh
    z = series.z_values
    dows = np.array([ts.weekday() for ts in series.timestamps])
    slots = np.array([ts.hour * 2 + ts.minute // 30 for ts in series.timestamps])
    tiers = np.array([schedule.tier(d, s) for d, s in zip(dows, slots)])

    total = float(kwh.sum())
    high_ratio = _safe_ratio(kwh[tiers == tariff_mod.HIGH].sum(), total)
    low_mask = tiers == tariff_mod.LOW
    low_ratio = _safe_ratio(kwh[low_mask].sum(), total)
    peak_mask = (slots >= schedule.peak_window[0]) & (slots <= schedule.peak_window[1])
    peak_ratio = _safe_ratio(kwh[peak_mask].sum(), total)

    weekend = dows >= 5
    weekend_shift = _group_mean(z, weekend) - _group_mean(z, ~weekend)

    # entropy of the mean daily profile, natural log
    profile = np.zeros(48)
    for slot in range(48):
        sel = slots == slot
        if sel.any():
            profile[slot] = kwh[sel].mean()
    psum = profile.sum()
    if psum > 0:
        p = profile / psum
        nz = p[p > 0]
        load_entropy = float(-(nz * np.log(nz)).sum())
    else:
        load_entropy = 0.0

    low_kwh = kwh[low_mask]
    if low_kwh.size and low_kwh.max() > 0:
        load_factor_low = float(low_kwh.mean() / low_kwh.max())
    else:
        load_factor_low = 0.0

    acf = autocorrelation(kwh, max_lag)
    acf_mean = float(acf.mean())
    acf_max = float(acf.max())
    below = np.nonzero(acf < 1.0 / np.e)[0]
    decay_lag = int(below[0]) + 1 if below.size else max_lag + 1
    acf_decay = 1.0 / decay_lag

    mean = float(kwh.mean())
    std = float(kwh.std())
    dow_means = [(_group_mean(kwh, dows == d)) for d in range(7)]

    values = {
        "high_usage_ratio": high_ratio,
        "low_usage_ratio": low_ratio,
        "peak_hour_ratio": peak_ratio,
        "weekend_shift": float(weekend_shift),
        "load_entropy": load_entropy,
        "load_factor_low": load_factor_low,
        "acf_mean": acf_mean,
        "acf_max": acf_max,
        "acf_decay_rate": acf_decay,
        "std_consumption": std,
        "min_consumption": float(kwh.min()),
        "max_consumption": float(kwh.max()),
        "median_consumption": float(np.median(kwh)),
        "peak_to_mean_ratio": _safe_ratio(kwh.max(), mean),
        "dow_mean_mon": dow_means[0],
        "dow_mean_tue": dow_means[1],
        "dow_mean_wed": dow_means[2],
        "dow_mean_thu": dow_means[3],
        "dow_mean_fri": dow_means[4],
        "dow_mean_sat": dow_means[5],
        "dow_mean_sun": dow_means[6],
        "weekday_mean": _group_mean(kwh, ~weekend),
        "weekend_mean": _group_mean(kwh, weekend),
        "coefficient_of_variation": _safe_ratio(std, mean),
        SECRET_FEATURE: mean,
    }
    return FeatureVector(ALL_FEATURES, np.array([values[n] for n in ALL_FEATURES]))


def _group_mean(values, mask):
    return float(values[mask].mean()) if mask.any() else 0.0


def build_feature_matrix(series_list, schedule, max_lag: int = DEFAULT_MAX_LAG):
    """Feature rows for a list of household series (unlabeled)."""
    ids, rows = [], []
    for series in series_list:
        vec = extract_features(series, schedule, max_lag)
        ids.append(series.household_id)
        rows.append(vec.values)
    return ids, np.array(rows, dtype=np.float64)


@dataclass
class ScoreModel:
    """First-principal-component scoring of z-scored features.

    Loadings are unit length, oriented so the low_usage_ratio loading is
    non-negative. threshold_value is the empirical q-quantile of the
    training scores (linear interpolation).
    """

    feature_names: list
    means: np.ndarray
    stds: np.ndarray
    loadings: np.ndarray
    quantile: float
    threshold_value: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "feature_names": self.feature_names,
                "means": self.means.tolist(),
                "stds": self.stds.tolist(),
                "loadings": self.loadings.tolist(),
                "quantile": self.quantile,
                "threshold_value": self.threshold_value,
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "ScoreModel":
        payload = json.loads(text)
        return cls(
            feature_names=payload["feature_names"],
            means=np.array(payload["means"]),
            stds=np.array(payload["stds"]),
            loadings=np.array(payload["loadings"]),
            quantile=payload["quantile"],
            threshold_value=payload["threshold_value"],
        )


def fit_score_model(rows: np.ndarray, feature_names, q: float = DEFAULT_QUANTILE) -> ScoreModel:
    """Fit z-score params, PC1 loadings and the score threshold."""
    rows = np.asarray(rows, dtype=np.float64)
    n, d = rows.shape
    if n < 2:
        raise FitError("need at least 2 rows to fit a score model")
    if not 0.0 < q < 1.0:
        raise ValidationError("quantile must lie in (0, 1)")
    z, means, stds, constant = zscore_columns(rows)
    if constant.any():
        bad = [feature_names[i] for i in np.nonzero(constant)[0]]
        log.warning("constant feature column(s) %s: std forced to 1", bad)
    cov = (z.T @ z) / n
    vectors, _ = top_eigenvectors(cov, k=1, tol=1e-10)
    w = vectors[0]
    w = w / np.linalg.norm(w)
    try:
        anchor = feature_names.index(_ORIENT_FEATURE)
    except ValueError:
        anchor = 0
    if w[anchor] < 0:
        w = -w
    scores = z @ w
    threshold = float(np.quantile(scores, q))
    return ScoreModel(list(feature_names), means, stds, w, q, threshold)


def score(model: ScoreModel, x: np.ndarray) -> float:
    """Responsiveness score: loadings dotted with the z-scored features."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.loadings.shape:
        raise SchemaError(f"expected {model.loadings.shape[0]} features, got {x.shape}")
    return float(np.dot(model.loadings, (x - model.means) / model.stds))


def score_rows(model: ScoreModel, rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[1] != model.loadings.shape[0]:
        raise SchemaError("feature width mismatch")
    return ((rows - model.means) / model.stds) @ model.loadings


def assign_labels(model: ScoreModel, ids, rows: np.ndarray, feature_names) -> FeatureTable:
    """Label rows responsive (1) when score strictly exceeds the threshold.

    rows must carry the full feature set; scoring uses the classifier
    columns the model was fitted on.
    """
    rows = np.asarray(rows, dtype=np.float64)
    score_cols = [feature_names.index(name) for name in model.feature_names]
    scores = score_rows(model, rows[:, score_cols])
    labels = (scores > model.threshold_value).astype(np.int64)
    return FeatureTable(list(ids), list(feature_names), rows, labels)


def build_labeled_table(series_list, schedule, q: float = DEFAULT_QUANTILE,
                        max_lag: int = DEFAULT_MAX_LAG):
    """Full pipeline from household series to a labelled feature table."""
    ids, rows = build_feature_matrix(series_list, schedule, max_lag)
    score_cols = [ALL_FEATURES.index(n) for n in CLASSIFIER_FEATURES]
    model = fit_score_model(rows[:, score_cols], CLASSIFIER_FEATURES, q)
    table = assign_labels(model, ids, rows, ALL_FEATURES)
    return table, model
