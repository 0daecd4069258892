import numpy as np
import pytest

from gridsynth.attacks import (
    GradBoostRegressor,
    LassoRegressor,
    MiaConfig,
    MlpRegressor,
    RandomForestRegressor,
    RidgeRegressor,
    auc,
    mia_attack,
    reconstruction_attack,
    regressor_sweep_members,
)
from gridsynth.errors import ConfigError, SchemaError, ValidationError
from gridsynth.features import SECRET_FEATURE, FeatureTable


class Memorizer:
    """Posteriors peak at distance zero from any training row."""

    def __init__(self, X):
        self.X = np.asarray(X, dtype=np.float64)

    def predict_proba(self, Q):
        Q = np.asarray(Q, dtype=np.float64)
        d = np.sqrt(((Q[:, None, :] - self.X[None, :, :]) ** 2).sum(axis=2)).min(axis=1)
        p = 0.5 + 0.5 * np.exp(-d)
        return np.column_stack([1.0 - p, p])


class ConstantPosterior:
    def predict_proba(self, Q):
        return np.full((len(Q), 2), 0.5)


def test_auc_perfectly_separated():
    assert auc([1, 2, 3, 10, 11, 12], [0, 0, 0, 1, 1, 1]) == 1.0


def test_auc_all_ties_is_half():
    assert auc([5, 5, 5, 5], [0, 1, 0, 1]) == 0.5


def test_auc_random_scores_near_half():
    rng = np.random.default_rng(0)
    scores = rng.normal(size=10000)
    labels = rng.integers(0, 2, 10000)
    assert abs(auc(scores, labels) - 0.5) < 0.02


def test_auc_monotone_invariance():
    rng = np.random.default_rng(1)
    scores = rng.normal(size=500)
    labels = (scores + rng.normal(0, 1, 500) > 0).astype(int)
    base = auc(scores, labels)
    assert auc(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)
    assert auc(3 * scores - 7, labels) == pytest.approx(base, abs=1e-12)


def test_auc_single_class_raises():
    with pytest.raises(ValidationError):
        auc([1, 2], [1, 1])


def test_mia_memorizing_target_leaks(rng):
    mem_X = rng.normal(size=(50, 5))
    mem_y = (rng.random(50) > 0.7).astype(int)
    pool_X = rng.normal(1.5, 1.0, size=(200, 5))
    pool_y = (rng.random(200) > 0.7).astype(int)
    res = mia_attack(mem_X, mem_y, pool_X, pool_y, Memorizer(mem_X), MiaConfig(),
                     master_seed=3)
    assert res.mean_auc >= 0.9
    assert 0.0 <= res.ci_low <= res.mean_auc <= res.ci_high <= 1.0


def test_mia_constant_posterior_is_random(rng):
    mem_X = rng.normal(size=(50, 5))
    mem_y = (rng.random(50) > 0.7).astype(int)
    pool_X = rng.normal(size=(200, 5))
    pool_y = (rng.random(200) > 0.7).astype(int)
    res = mia_attack(mem_X, mem_y, pool_X, pool_y, ConstantPosterior(), MiaConfig(),
                     master_seed=3)
    assert 0.45 <= res.mean_auc <= 0.55


def test_mia_deterministic(rng):
    mem_X = rng.normal(size=(40, 4))
    mem_y = (rng.random(40) > 0.6).astype(int)
    pool_X = rng.normal(size=(160, 4))
    pool_y = (rng.random(160) > 0.6).astype(int)
    cfg = MiaConfig(n_seeds=2)
    a = mia_attack(mem_X, mem_y, pool_X, pool_y, Memorizer(mem_X), cfg, master_seed=5)
    b = mia_attack(mem_X, mem_y, pool_X, pool_y, Memorizer(mem_X), cfg, master_seed=5)
    assert a.per_seed_auc == b.per_seed_auc
    assert a.winning_attack == b.winning_attack


def test_mia_pool_too_small_raises():
    X = np.zeros((30, 3))
    y = np.array([0, 1] * 15)
    with pytest.raises(ConfigError):
        mia_attack(X, y, X[:10], y[:10], ConstantPosterior(), MiaConfig(), 0)


def test_mia_interval_is_t_interval(rng):
    mem_X = rng.normal(size=(40, 4))
    mem_y = (rng.random(40) > 0.6).astype(int)
    pool_X = rng.normal(0.5, 1.0, size=(160, 4))
    pool_y = (rng.random(160) > 0.6).astype(int)
    res = mia_attack(mem_X, mem_y, pool_X, pool_y, Memorizer(mem_X), MiaConfig(),
                     master_seed=7)
    arr = np.array(res.per_seed_auc)
    half = 2.7764451 * arr.std(ddof=1) / np.sqrt(5)
    assert res.ci_low == pytest.approx(max(0.0, arr.mean() - half), abs=1e-9)
    assert res.ci_high == pytest.approx(min(1.0, arr.mean() + half), abs=1e-9)


# --- regressors ----------------------------------------------------------------


def test_ridge_interpolates_linear_data():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(60, 4))
    w = np.array([2.0, -1.0, 0.5, 3.0])
    y = X @ w + 1.5
    model = RidgeRegressor(lam=1e-10).fit(X, y)
    assert np.abs(model.coef_ - w).max() < 1e-6
    assert abs(model.intercept_ - 1.5) < 1e-6


def test_ridge_matches_gradient_descent_oracle():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 3))
    y = X @ np.array([1.0, -2.0, 0.3]) + rng.normal(0, 0.1, 50)
    model = RidgeRegressor(lam=1.0).fit(X, y)
    # oracle: gradient descent on ||Xs w - yc||^2 + lam ||w||^2 in scaled space
    Xs = model.scaler.transform(X)
    yc = y - y.mean()
    w = np.zeros(3)
    lr = 0.45 / (np.linalg.norm(Xs, 2) ** 2 + 1.0)  # safely below 2/L
    for _ in range(20000):
        grad = 2 * Xs.T @ (Xs @ w - yc) + 2 * 1.0 * w
        w -= lr * grad
    oracle_coef = w / model.scaler.stds
    assert np.abs(model.coef_ - oracle_coef).max() < 1e-4


def test_lasso_huge_lambda_zeroes_out():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(40, 5))
    y = X @ np.array([1, 2, 3, 4, 5.0])
    model = LassoRegressor(lam=1e9).fit(X, y)
    assert np.allclose(model.coef_, 0.0)
    assert model.predict(X) == pytest.approx(np.full(40, y.mean()))


def test_lasso_default_lambda_fits_signal():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(100, 6))
    y = 3.0 * X[:, 2] - 1.0 * X[:, 4] + rng.normal(0, 0.05, 100)
    model = LassoRegressor().fit(X, y)
    pred = model.predict(X)
    assert 1 - np.mean((pred - y) ** 2) / y.var() > 0.95


def test_tree_regressors_fit_smooth_signal():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(300, 5))
    y = 2 * X[:, 0] + np.sin(2 * X[:, 1])
    for model in (RandomForestRegressor(seed=1), GradBoostRegressor(seed=1),
                  MlpRegressor(seed=1)):
        model.fit(X[:200], y[:200])
        r2 = 1 - np.mean((model.predict(X[200:]) - y[200:]) ** 2) / y[200:].var()
        assert r2 > 0.6, type(model).__name__


def test_sweep_has_five_members():
    assert list(regressor_sweep_members(0)) == [
        "random_forest", "grad_boost", "ridge", "lasso", "mlp",
    ]


# --- reconstruction -------------------------------------------------------------


def _permuted_secret(table, seed=9):
    feats = table.features.copy()
    si = table.feature_names.index(SECRET_FEATURE)
    rng = np.random.default_rng(seed)
    feats[:, si] = feats[rng.permutation(table.n_rows), si]
    return FeatureTable(list(table.household_ids), list(table.feature_names),
                        feats, table.labels.copy())


def test_reconstruction_exact_copy_leaks_fully(small_table):
    table, _ = small_table
    res = reconstruction_attack(table, table, seed=5)
    assert res.prs == 1.0
    assert res.mse_noise >= res.mse_real


def test_reconstruction_permuted_secret_protects(small_table):
    table, _ = small_table
    res = reconstruction_attack(_permuted_secret(table), table, seed=5)
    assert res.prs <= 0.1


def test_reconstruction_deterministic(small_table):
    table, _ = small_table
    a = reconstruction_attack(table, table, seed=6, n_permutations=3)
    b = reconstruction_attack(table, table, seed=6, n_permutations=3)
    assert a.to_dict() == b.to_dict()


def test_reconstruction_missing_secret(small_table):
    table, _ = small_table
    broken = FeatureTable(list(table.household_ids),
                          [n + "_x" for n in table.feature_names],
                          table.features, table.labels)
    with pytest.raises(SchemaError):
        reconstruction_attack(broken, broken, seed=0)
