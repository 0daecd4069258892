"""Membership-inference and reconstruction attacks.

The MIA follows the shadow-model protocol: per seed, five shadows fitted on
disjoint member/non-member splits of the evaluation pool produce labelled
max-posterior features, two attackers (forest and small MLP) train on the
aggregate, and the stronger one is scored against the target model's
posteriors on its true members versus held-out non-members.

The reconstruction attack sweeps five regressors over the synthetic table
to recover a hidden column of the real table; the privacy gap compares the
best sweep error against an uninformed baseline built by retraining the
reference forest on secret-permuted data (20 permutations).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .classifiers import StandardScaler, fit_classifier
from .errors import ConfigError, SchemaError, ValidationError
from .features import SECRET_FEATURE, FeatureTable
from .seeding import spawn_rng, spawn_seed
from .stats import student_t_quantile
from .trees import BinnedDataset, grow_tree


def auc(scores, labels) -> float:
    """Rank-based (Mann-Whitney) AUC with midranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n1 = int((labels == 1).sum())
    n0 = len(labels) - n1
    if n1 == 0 or n0 == 0:
        raise ValidationError("auc needs both classes present")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    r1 = ranks[labels == 1].sum()
    return float((r1 - n1 * (n1 + 1) / 2.0) / (n1 * n0))


# --- small MLP models on the autodiff stack ----------------------------------


class MlpClassifier:
    """Binary MLP with sigmoid output and optional early stopping."""

    def __init__(self, hidden=(32, 32), lr=1e-3, epochs=200, holdout=0.0,
                 patience=None, seed=0):
        self.hidden = tuple(hidden)
        self.lr = lr
        self.epochs = epochs
        self.holdout = holdout
        self.patience = patience
        self.seed = seed

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.scaler = StandardScaler().fit(X)
        Xs = self.scaler.transform(X)
        rng = spawn_rng(self.seed, "mlp-clf")
        n = len(y)
        if self.holdout > 0 and n >= 20:
            perm = rng.permutation(n)
            n_hold = max(1, int(round(self.holdout * n)))
            hold, train = perm[:n_hold], perm[n_hold:]
        else:
            hold, train = np.empty(0, dtype=np.int64), np.arange(n)
        dims = [X.shape[1], *self.hidden, 1]
        self.net = ad.Mlp(dims, rng=rng)
        opt = ad.Adam(self.net.parameters(), self.lr)
        yt = ad.Tensor(y[train][:, None])
        xt = ad.Tensor(Xs[train])
        best_loss, best_state, stall = np.inf, None, 0
        for _ in range(self.epochs):
            p = ad.sigmoid(self.net(xt))
            loss = ad.bce(p, yt)
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            if len(hold):
                with ad.no_grad():
                    ph = ad.sigmoid(self.net(ad.Tensor(Xs[hold])))
                    hold_loss = ad.bce(ph, ad.Tensor(y[hold][:, None])).item()
                if hold_loss < best_loss - 1e-9:
                    best_loss, best_state, stall = hold_loss, self.net.state_arrays(), 0
                else:
                    stall += 1
                    if self.patience is not None and stall >= self.patience:
                        break
        if best_state is not None:
            self.net.load_state_arrays(best_state)
        return self

    def predict_proba(self, X):
        with ad.no_grad():
            p1 = ad.sigmoid(self.net(ad.Tensor(self.scaler.transform(X)))).data.ravel()
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


class MlpRegressor:
    """ReLU MLP regressor with early stopping on a validation split."""

    def __init__(self, hidden=(64, 64), lr=1e-3, epochs=200, val_fraction=0.1,
                 patience=20, seed=0):
        self.hidden = tuple(hidden)
        self.lr = lr
        self.epochs = epochs
        self.val_fraction = val_fraction
        self.patience = patience
        self.seed = seed

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.scaler = StandardScaler().fit(X)
        Xs = self.scaler.transform(X)
        self.y_mean = float(y.mean())
        self.y_scale = float(y.std()) or 1.0
        yn = (y - self.y_mean) / self.y_scale
        rng = spawn_rng(self.seed, "mlp-reg")
        n = len(y)
        n_val = max(1, int(round(self.val_fraction * n))) if n >= 20 else 0
        perm = rng.permutation(n)
        val, train = perm[:n_val], perm[n_val:]
        self.net = ad.Mlp([X.shape[1], *self.hidden, 1], rng=rng)
        opt = ad.Adam(self.net.parameters(), self.lr)
        xt, yt = ad.Tensor(Xs[train]), ad.Tensor(yn[train][:, None])
        best_loss, best_state, stall = np.inf, None, 0
        for _ in range(self.epochs):
            loss = ad.mse(self.net(xt), yt)
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            if n_val:
                with ad.no_grad():
                    val_loss = ad.mse(self.net(ad.Tensor(Xs[val])),
                                      ad.Tensor(yn[val][:, None])).item()
                if val_loss < best_loss - 1e-12:
                    best_loss, best_state, stall = val_loss, self.net.state_arrays(), 0
                else:
                    stall += 1
                    if stall >= self.patience:
                        break
        if best_state is not None:
            self.net.load_state_arrays(best_state)
        return self

    def predict(self, X):
        with ad.no_grad():
            out = self.net(ad.Tensor(self.scaler.transform(X))).data.ravel()
        return out * self.y_scale + self.y_mean


# --- regressor sweep ----------------------------------------------------------


class RandomForestRegressor:
    """Bagged regression trees with d/3 features per node (regression default)."""

    def __init__(self, n_estimators=100, seed=0):
        self.n_estimators = n_estimators
        self.seed = seed

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        rng = spawn_rng(self.seed, "rf-reg")
        binned = BinnedDataset(X, max_bins=64)
        n, d = X.shape
        mf = max(1, d // 3)
        self.trees = []
        for _ in range(self.n_estimators):
            boot = rng.integers(0, n, n)
            self.trees.append(grow_tree(binned, y, rows=boot, task="regression",
                                        max_features=mf, rng=rng))
        return self

    def predict(self, X):
        out = np.zeros(len(X))
        for tree in self.trees:
            out += tree.predict(X)
        return out / len(self.trees)


class GradBoostRegressor:
    def __init__(self, n_estimators=100, max_depth=3, learning_rate=0.1, seed=0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        binned = BinnedDataset(X, max_bins=32)
        self.f0 = float(y.mean())
        pred = np.full(len(y), self.f0)
        rng = spawn_rng(self.seed, "gb-reg")
        self.trees = []
        for _ in range(self.n_estimators):
            tree = grow_tree(binned, y - pred, task="regression",
                             max_depth=self.max_depth, rng=rng)
            pred += self.learning_rate * tree.predict(X)
            self.trees.append(tree)
        return self

    def predict(self, X):
        out = np.full(len(X), self.f0)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out


class RidgeRegressor:
    """Closed-form ridge on scaled features; lam guarantees a solvable system."""

    def __init__(self, lam=1.0):
        self.lam = lam

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.scaler = StandardScaler().fit(X)
        Xs = self.scaler.transform(X)
        self.y_mean = float(y.mean())
        yc = y - self.y_mean
        d = Xs.shape[1]
        w = np.linalg.solve(Xs.T @ Xs + self.lam * np.eye(d), Xs.T @ yc)
        self.coef_ = w / self.scaler.stds
        self.intercept_ = self.y_mean - float(self.coef_ @ self.scaler.means)
        return self

    def predict(self, X):
        return np.asarray(X, dtype=np.float64) @ self.coef_ + self.intercept_


class LassoRegressor:
    """Coordinate-descent lasso; default lam = 0.01 * max|X^T y| / n."""

    def __init__(self, lam=None, tol=1e-6, max_sweeps=2000):
        self.lam = lam
        self.tol = tol
        self.max_sweeps = max_sweeps

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.scaler = StandardScaler().fit(X)
        Xs = self.scaler.transform(X)
        self.y_mean = float(y.mean())
        yc = y - self.y_mean
        n, d = Xs.shape
        c = Xs.T @ yc / n
        lam = self.lam
        if lam is None:
            lam = 0.01 * float(np.max(np.abs(c)))
        # covariance-form coordinate descent: each update is O(d)
        G = Xs.T @ Xs / n
        col_sq = np.diag(G).copy()
        w = np.zeros(d)
        gw = np.zeros(d)  # G @ w, maintained incrementally
        for _ in range(self.max_sweeps):
            max_delta = 0.0
            for j in range(d):
                if col_sq[j] == 0.0:
                    continue
                rho = c[j] - gw[j] + col_sq[j] * w[j]
                new_w = np.sign(rho) * max(abs(rho) - lam, 0.0) / col_sq[j]
                delta = new_w - w[j]
                if delta != 0.0:
                    gw += delta * G[:, j]
                    w[j] = new_w
                    max_delta = max(max_delta, abs(delta))
            if max_delta < self.tol:
                break
        self.coef_ = w / self.scaler.stds
        self.intercept_ = self.y_mean - float(self.coef_ @ self.scaler.means)
        return self

    def predict(self, X):
        return np.asarray(X, dtype=np.float64) @ self.coef_ + self.intercept_


def regressor_sweep_members(seed=0):
    """The five reconstruction regressors, in reporting order."""
    return {
        "random_forest": RandomForestRegressor(seed=spawn_seed(seed, "sweep-rf")),
        "grad_boost": GradBoostRegressor(seed=spawn_seed(seed, "sweep-gb")),
        "ridge": RidgeRegressor(),
        "lasso": LassoRegressor(),
        "mlp": MlpRegressor(seed=spawn_seed(seed, "sweep-mlp")),
    }


# --- membership inference ------------------------------------------------------


@dataclass
class MiaConfig:
    n_shadow: int = 5
    shadow_kinds: tuple = ("random_forest", "mlp")
    attack_rf_trees: int = 200
    attack_mlp_hidden: tuple = (32, 32)
    holdout_fraction: float = 0.10
    patience: int = 10
    n_seeds: int = 5


@dataclass
class MiaResult:
    mean_auc: float
    ci_low: float
    ci_high: float
    per_seed_auc: list
    winning_attack: str
    per_seed_winner: list = field(default_factory=list)

    def to_dict(self):
        return {
            "mean_auc": self.mean_auc,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "per_seed_auc": self.per_seed_auc,
            "winning_attack": self.winning_attack,
            "per_seed_winner": self.per_seed_winner,
        }


def _max_prob(model, X):
    return model.predict_proba(X).max(axis=1)


def _fit_shadow(kind, X, y, seed):
    if kind == "random_forest":
        return fit_classifier("random_forest",
                              {"n_estimators": 100, "max_depth": None,
                               "min_samples_split": 2}, X, y, seed)
    return MlpClassifier(hidden=(32, 32), epochs=200, seed=seed).fit(X, y)


def _stratified_halves(y, m, rng):
    """Two disjoint stratified index sets of ~m rows each.

    Every class with at least two pool members appears in both halves, so
    shadow models always see both labels when the pool does.
    """
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    quotas = {}
    for cls, cnt in zip(classes, counts):
        q = max(1, int(round(m * cnt / len(y))))
        quotas[cls] = min(q, int(cnt) // 2)
    total = sum(quotas.values())
    by_count = sorted(zip(classes, counts), key=lambda t: -t[1])
    guard = 0
    while total != m and guard < 10 * len(classes) + 100:
        for cls, cnt in by_count:
            if total < m and quotas[cls] < int(cnt) // 2:
                quotas[cls] += 1
                total += 1
            elif total > m and quotas[cls] > 1:
                quotas[cls] -= 1
                total -= 1
            if total == m:
                break
        guard += 1
    members, non_members = [], []
    for cls in classes:
        q = quotas[cls]
        if q == 0:
            continue
        cls_idx = np.nonzero(y == cls)[0]
        sel = cls_idx[rng.permutation(len(cls_idx))[: 2 * q]]
        members.append(sel[:q])
        non_members.append(sel[q:])
    mem = np.concatenate(members)
    non = np.concatenate(non_members)
    rng.shuffle(mem)
    rng.shuffle(non)
    return mem, non


def mia_attack(member_X, member_y, eval_X, eval_y, target, cfg: MiaConfig,
               master_seed=0) -> MiaResult:
    """Shadow-model membership inference against a fitted target.

    member_* are the target's training records; eval_* is a disjoint pool
    from the same distribution used both to train shadows and as
    non-members at evaluation time.
    """
    member_X = np.asarray(member_X, dtype=np.float64)
    eval_X = np.asarray(eval_X, dtype=np.float64)
    m = min(len(member_X), len(eval_X) // 2)
    if m < 10:
        raise ConfigError(
            f"evaluation pool too small for shadow splits (m={m}; need >= 10)"
        )

    per_seed_auc, per_seed_winner = [], []
    for s in range(cfg.n_seeds):
        rng = spawn_rng(master_seed, "mia", s)
        feats, labels = [], []
        for shadow_i in range(cfg.n_shadow):
            kind = cfg.shadow_kinds[shadow_i % len(cfg.shadow_kinds)]
            members, non_members = _stratified_halves(eval_y, m, rng)
            shadow = _fit_shadow(kind, eval_X[members], eval_y[members],
                                 spawn_seed(master_seed, "mia-shadow", s, shadow_i))
            feats.append(_max_prob(shadow, eval_X[members]))
            labels.append(np.ones(len(members)))
            feats.append(_max_prob(shadow, eval_X[non_members]))
            labels.append(np.zeros(len(non_members)))
        attack_X = np.concatenate(feats)[:, None]
        attack_y = np.concatenate(labels).astype(np.int64)

        hold_n = max(1, int(round(cfg.holdout_fraction * len(attack_y))))
        perm = rng.permutation(len(attack_y))
        train_idx = perm[hold_n:]

        attack_rf = fit_classifier(
            "random_forest",
            {"n_estimators": cfg.attack_rf_trees, "max_depth": None,
             "min_samples_split": 2},
            attack_X[train_idx], attack_y[train_idx],
            spawn_seed(master_seed, "mia-attack-rf", s),
        )
        attack_mlp = MlpClassifier(
            hidden=cfg.attack_mlp_hidden, epochs=200,
            holdout=cfg.holdout_fraction, patience=cfg.patience,
            seed=spawn_seed(master_seed, "mia-attack-mlp", s),
        ).fit(attack_X, attack_y)

        query_feats = np.concatenate([
            _max_prob(target, member_X), _max_prob(target, eval_X)
        ])[:, None]
        truth = np.concatenate([np.ones(len(member_X)), np.zeros(len(eval_X))])
        best_auc, best_kind = -1.0, ""
        for kind, attacker in (("random_forest", attack_rf), ("mlp", attack_mlp)):
            score = attacker.predict_proba(query_feats)[:, 1]
            a = auc(score, truth)
            if a > best_auc:
                best_auc, best_kind = a, kind
        per_seed_auc.append(float(best_auc))
        per_seed_winner.append(best_kind)

    arr = np.array(per_seed_auc)
    mean = float(arr.mean())
    if len(arr) > 1:
        t_crit = student_t_quantile(0.975, len(arr) - 1)
        half = t_crit * float(arr.std(ddof=1)) / np.sqrt(len(arr))
    else:
        half = 0.0
    winner = max(set(per_seed_winner), key=per_seed_winner.count)
    return MiaResult(
        mean_auc=mean,
        ci_low=max(0.0, mean - half),
        ci_high=min(1.0, mean + half),
        per_seed_auc=[float(a) for a in per_seed_auc],
        winning_attack=winner,
        per_seed_winner=per_seed_winner,
    )


# --- reconstruction -------------------------------------------------------------


@dataclass
class ReconResult:
    best_model: str
    mse: float
    pearson_rho: float
    r_squared: float
    privacy_gap: float
    prs: float
    mse_noise: float
    mse_real: float
    per_model_mse: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "best_model": self.best_model,
            "mse": self.mse,
            "pearson_rho": self.pearson_rho,
            "r_squared": self.r_squared,
            "privacy_gap": self.privacy_gap,
            "prs": self.prs,
            "mse_noise": self.mse_noise,
            "mse_real": self.mse_real,
            "per_model_mse": self.per_model_mse,
        }


def _pearson(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    sa, sb = a.std(), b.std()
    if sa == 0.0 or sb == 0.0:
        return 0.0
    return float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb))


def _attack_design(table: FeatureTable, secret: str):
    """Published attributes: every feature except the secret, plus the label."""
    if secret not in table.feature_names:
        raise SchemaError(f"secret column {secret!r} not present")
    keep = [i for i, n in enumerate(table.feature_names) if n != secret]
    X = np.column_stack([table.features[:, keep], table.labels.astype(np.float64)])
    y = table.column(secret)
    return X, y


def _best_of_sweep(X_fit, y_fit, X_test, y_test, seed):
    """Lowest test MSE over the five-regressor sweep."""
    per_model = {}
    best_name, best_mse, best_pred = None, np.inf, None
    for name, model in regressor_sweep_members(seed).items():
        model.fit(X_fit, y_fit)
        pred = model.predict(X_test)
        mse = float(np.mean((pred - y_test) ** 2))
        per_model[name] = mse
        if mse < best_mse:
            best_name, best_mse, best_pred = name, mse, pred
    return best_name, best_mse, best_pred, per_model


def reconstruction_attack(synth_table: FeatureTable, real_table: FeatureTable,
                          secret: str = SECRET_FEATURE, seed=0,
                          test_fraction=0.30, n_permutations=20) -> ReconResult:
    """Best-of-sweep reconstruction of the secret column of real records.

    The uninformed baseline runs the identical sweep on the attacker's
    table with its secret column permuted (20 permutations averaged), so
    the best-of-five selection bias cancels out of the privacy gap.
    """
    X_synth, y_synth = _attack_design(synth_table, secret)
    X_real, y_real = _attack_design(real_table, secret)

    rng = spawn_rng(seed, "recon-split")
    n = len(y_real)
    perm = rng.permutation(n)
    n_test = max(1, int(round(test_fraction * n)))
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    X_test, y_test = X_real[test_idx], y_real[test_idx]
    X_train, y_train = X_real[train_idx], y_real[train_idx]

    best_name, best_mse, best_pred, per_model = _best_of_sweep(
        X_synth, y_synth, X_test, y_test, seed
    )

    ref = RandomForestRegressor(seed=spawn_seed(seed, "recon-real"))
    ref.fit(X_train, y_train)
    mse_real = float(np.mean((ref.predict(X_test) - y_test) ** 2))

    noise_rng = spawn_rng(seed, "recon-noise")
    noise_mses = []
    for p in range(n_permutations):
        y_perm = y_synth[noise_rng.permutation(len(y_synth))]
        _, noise_mse, _, _ = _best_of_sweep(
            X_synth, y_perm, X_test, y_test, spawn_seed(seed, "recon-noise", p)
        )
        noise_mses.append(noise_mse)
    mse_noise = float(np.mean(noise_mses))

    gap = mse_noise - best_mse
    denom = mse_noise - mse_real
    prs = float(np.clip(gap / denom, 0.0, 1.0)) if denom > 0 else (1.0 if gap > 0 else 0.0)
    sst = float(np.sum((y_test - y_test.mean()) ** 2))
    r2 = 1.0 - float(np.sum((best_pred - y_test) ** 2)) / sst if sst > 0 else 0.0
    return ReconResult(
        best_model=best_name,
        mse=best_mse,
        pearson_rho=_pearson(best_pred, y_test),
        r_squared=r2,
        privacy_gap=float(gap),
        prs=prs,
        mse_noise=mse_noise,
        mse_real=mse_real,
        per_model_mse=per_model,
    )
