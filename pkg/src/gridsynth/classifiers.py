"""Five tabular classifiers with scaling, randomized search and nested CV.

Every estimator is wrapped in a standard scaler fitted on its own training
split only. Hyperparameter grids are fixed; randomized search draws
without replacement. Probability outputs are pinned per model: forests
report vote fractions, k-NN neighbour-weight fractions, boosting a
sigmoid score, and the SVM a Platt sigmoid fitted on an internal 20%
split.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import FitError, InsufficientDataError, ValidationError
from .seeding import spawn_rng, spawn_seed
from .trees import BinnedDataset, grow_tree

CLASSIFIER_KINDS = ["decision_tree", "random_forest", "knn", "svm_rbf", "grad_boost"]

KIND_LABELS = {
    "decision_tree": "DT",
    "random_forest": "RF",
    "knn": "KNN",
    "svm_rbf": "SVM",
    "grad_boost": "XGB",
}

_GRIDS = {
    "random_forest": {
        "n_estimators": [100, 300, 500],
        "max_depth": [None, 10, 20],
        "min_samples_split": [2, 5],
    },
    "knn": {
        "n_neighbors": [3, 5, 7, 9, 11, 13, 15],
        "weights": ["uniform", "distance"],
    },
    "svm_rbf": {
        "C": [1, 10],
        "kernel": ["rbf"],
        "gamma": ["scale"],
    },
    "grad_boost": {
        "n_estimators": [100, 300, 500],
        "max_depth": [3, 6, 10],
        "learning_rate": [0.01, 0.1, 0.3],
        "subsample": [0.8, 1.0],
    },
    "decision_tree": {
        "max_depth": [None, 10, 20, 30],
        "criterion": ["gini", "entropy"],
    },
}


def classifier_grid(kind):
    """Enumerated hyperparameter grid in a fixed, documented order."""
    grid = _GRIDS[kind]
    keys = list(grid.keys())
    return [dict(zip(keys, combo)) for combo in itertools.product(*grid.values())]


def macro_f1(y_true, y_pred) -> float:
    """Unweighted mean of the per-class F1 scores over classes {0, 1}.

    A class absent from both truth and prediction contributes F1 = 0.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        raise ValidationError("macro_f1: empty input")
    if y_true.shape != y_pred.shape:
        raise ValidationError("macro_f1: length mismatch")
    f1s = []
    for cls in (0, 1):
        tp = float(np.sum((y_pred == cls) & (y_true == cls)))
        fp = float(np.sum((y_pred == cls) & (y_true != cls)))
        fn = float(np.sum((y_pred != cls) & (y_true == cls)))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(f1s))


class StandardScaler:
    def fit(self, X):
        X = np.asarray(X, dtype=np.float64)
        self.means = X.mean(axis=0)
        stds = X.std(axis=0)
        self.stds = np.where(stds == 0.0, 1.0, stds)
        return self

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.means) / self.stds


# --- individual models (operate on scaled inputs) ---------------------------


class _DecisionTree:
    def __init__(self, max_depth=None, criterion="gini"):
        self.max_depth = max_depth
        self.criterion = criterion

    def fit(self, X, y, rng):
        binned = BinnedDataset(X)
        self.tree = grow_tree(binned, y, criterion=self.criterion,
                              max_depth=self.max_depth, rng=rng)
        return self

    def predict_proba(self, X):
        p1 = self.tree.predict(X)
        return np.column_stack([1.0 - p1, p1])


class _RandomForest:
    """Bagged CART with sqrt(d) features per node; proba = vote fractions."""

    def __init__(self, n_estimators=100, max_depth=None, min_samples_split=2):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split

    def fit(self, X, y, rng):
        n, d = X.shape
        binned = BinnedDataset(X, max_bins=64)
        mf = max(1, int(np.ceil(np.sqrt(d))))
        self.trees = []
        for _ in range(self.n_estimators):
            boot = rng.integers(0, n, n)
            self.trees.append(
                grow_tree(binned, y, rows=boot, max_depth=self.max_depth,
                          min_samples_split=self.min_samples_split,
                          max_features=mf, rng=rng)
            )
        return self

    def predict_proba(self, X):
        votes = np.zeros(len(X))
        for tree in self.trees:
            votes += tree.predict(X) > 0.5
        frac = votes / len(self.trees)
        return np.column_stack([1.0 - frac, frac])


class _Knn:
    def __init__(self, n_neighbors=5, weights="uniform"):
        self.k = n_neighbors
        self.weights = weights

    def fit(self, X, y, rng):
        self.X = np.asarray(X, dtype=np.float64)
        self.y = np.asarray(y)
        return self

    def predict_proba(self, X):
        X = np.asarray(X, dtype=np.float64)
        k = min(self.k, len(self.X))
        d2 = ((X[:, None, :] - self.X[None, :, :]) ** 2).sum(axis=2)
        nn = np.argpartition(d2, k - 1, axis=1)[:, :k]
        proba = np.empty((len(X), 2))
        for i in range(len(X)):
            labels = self.y[nn[i]]
            if self.weights == "uniform":
                w = np.ones(k)
            else:
                dist = np.sqrt(d2[i, nn[i]])
                zero = dist == 0.0
                if zero.any():  # exact matches dominate entirely
                    w = zero.astype(np.float64)
                else:
                    w = 1.0 / dist
            total = w.sum()
            p1 = float(w[labels == 1].sum() / total)
            proba[i] = (1.0 - p1, p1)
        return proba


class _SvmRbf:
    """Soft-margin RBF SVM trained by sequential minimal optimization.

    Posterior probabilities come from a Platt sigmoid fitted on a held-out
    20% internal split; the margin model itself trains on the other 80%.
    """

    def __init__(self, C=1.0, kernel="rbf", gamma="scale",
                 tol=1e-3, max_passes=10_000):
        self.C = float(C)
        self.gamma_mode = gamma
        self.tol = tol
        self.max_passes = max_passes

    def _kernel(self, A, B):
        a2 = (A**2).sum(axis=1)[:, None]
        b2 = (B**2).sum(axis=1)[None, :]
        d2 = np.maximum(a2 + b2 - 2.0 * A @ B.T, 0.0)
        return np.exp(-self.gamma * d2)

    def fit(self, X, y, rng):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        n, d = X.shape
        var = X.var()
        self.gamma = 1.0 / (d * var) if var > 0 else 1.0 / d

        fit_idx, platt_idx = _stratified_holdout(y, 0.2, rng)
        if len(np.unique(y[platt_idx])) < 2 or len(np.unique(y[fit_idx])) < 2:
            fit_idx = np.arange(n)
            platt_idx = np.arange(n)  # degenerate split; calibrate in-sample
        Xf, yf = X[fit_idx], y[fit_idx]
        y_pm = np.where(yf == 1, 1.0, -1.0)
        K = self._kernel(Xf, Xf)
        alpha, b = _smo(K, y_pm, self.C, self.tol, self.max_passes, rng)
        sv = alpha > 1e-12
        self.sv_X = Xf[sv]
        self.sv_coef = (alpha * y_pm)[sv]
        self.b = b
        platt_scores = self.decision_function(X[platt_idx])
        self.platt_a, self.platt_b = _platt_fit(platt_scores, y[platt_idx])
        return self

    def decision_function(self, X):
        if len(self.sv_X) == 0:
            return np.full(len(X), self.b)
        return self._kernel(np.asarray(X, dtype=np.float64), self.sv_X) @ self.sv_coef + self.b

    def predict_proba(self, X):
        f = self.decision_function(X)
        p1 = 1.0 / (1.0 + np.exp(np.clip(self.platt_a * f + self.platt_b, -500, 500)))
        return np.column_stack([1.0 - p1, p1])


class _GradBoost:
    """Gradient boosting on the logistic loss with Newton leaf values."""

    def __init__(self, n_estimators=100, max_depth=3, learning_rate=0.1, subsample=1.0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.subsample = subsample

    def fit(self, X, y, rng):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n = len(y)
        p0 = np.clip(y.mean(), 1e-6, 1.0 - 1e-6)
        self.f0 = float(np.log(p0 / (1.0 - p0)))
        binned = BinnedDataset(X, max_bins=32)
        score = np.full(n, self.f0)
        self.trees = []
        m_sub = max(2, int(round(self.subsample * n)))
        for _ in range(self.n_estimators):
            p = 1.0 / (1.0 + np.exp(-score))
            resid = y - p
            hess = p * (1.0 - p)
            rows = rng.choice(n, size=m_sub, replace=False) if m_sub < n else np.arange(n)
            tree = grow_tree(binned, resid, rows=rows, task="regression",
                             max_depth=self.max_depth, rng=rng)
            leaf = tree.apply(X)
            leaf_sub = leaf[rows]
            num = np.bincount(leaf_sub, weights=resid[rows], minlength=tree.n_nodes)
            den = np.bincount(leaf_sub, weights=hess[rows], minlength=tree.n_nodes)
            tree.value = np.divide(num, den + 1e-12)
            score += self.learning_rate * tree.value[leaf]
            self.trees.append(tree)
        return self

    def _score(self, X):
        score = np.full(len(X), self.f0)
        for tree in self.trees:
            score += self.learning_rate * tree.predict(X)
        return score

    def predict_proba(self, X):
        p1 = 1.0 / (1.0 + np.exp(-self._score(X)))
        return np.column_stack([1.0 - p1, p1])


_MODEL_CLASSES = {
    "decision_tree": _DecisionTree,
    "random_forest": _RandomForest,
    "knn": _Knn,
    "svm_rbf": _SvmRbf,
    "grad_boost": _GradBoost,
}


@dataclass
class TrainedClassifier:
    kind: str
    hyperparams: dict
    scaler: StandardScaler
    model: object

    def predict_proba(self, X):
        return self.model.predict_proba(self.scaler.transform(X))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


def fit_classifier(kind, hyperparams, X, y, seed) -> TrainedClassifier:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if not np.all(np.isfinite(X)):
        raise FitError("X contains non-finite values")
    if len(np.unique(y)) < 2:
        raise FitError("single-class training data")
    if len(y) < 10:
        raise FitError("need at least 10 training rows")
    scaler = StandardScaler().fit(X)
    rng = spawn_rng(seed, "fit", kind)
    model = _MODEL_CLASSES[kind](**hyperparams).fit(scaler.transform(X), y, rng)
    return TrainedClassifier(kind, dict(hyperparams), scaler, model)


# --- SMO + Platt ------------------------------------------------------------


def _smo(K, y_pm, C, tol, max_passes, rng):
    """Simplified sequential minimal optimization on a precomputed kernel."""
    n = len(y_pm)
    alpha = np.zeros(n)
    b = 0.0
    f = np.zeros(n)  # current decision values, updated incrementally
    for _ in range(max_passes):
        changed = 0
        for i in range(n):
            Ei = f[i] + b - y_pm[i]
            if not ((y_pm[i] * Ei < -tol and alpha[i] < C)
                    or (y_pm[i] * Ei > tol and alpha[i] > 0)):
                continue
            j = int(rng.integers(0, n - 1))
            if j >= i:
                j += 1
            Ej = f[j] + b - y_pm[j]
            ai_old, aj_old = alpha[i], alpha[j]
            if y_pm[i] != y_pm[j]:
                L, H = max(0.0, aj_old - ai_old), min(C, C + aj_old - ai_old)
            else:
                L, H = max(0.0, ai_old + aj_old - C), min(C, ai_old + aj_old)
            if L >= H:
                continue
            eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
            if eta >= 0:
                continue
            aj = aj_old - y_pm[j] * (Ei - Ej) / eta
            aj = min(H, max(L, aj))
            if abs(aj - aj_old) < 1e-5:
                continue
            ai = ai_old + y_pm[i] * y_pm[j] * (aj_old - aj)
            b1 = b - Ei - y_pm[i] * (ai - ai_old) * K[i, i] - y_pm[j] * (aj - aj_old) * K[i, j]
            b2 = b - Ej - y_pm[i] * (ai - ai_old) * K[i, j] - y_pm[j] * (aj - aj_old) * K[j, j]
            if 0 < ai < C:
                b_new = b1
            elif 0 < aj < C:
                b_new = b2
            else:
                b_new = (b1 + b2) / 2.0
            f += (ai - ai_old) * y_pm[i] * K[:, i] + (aj - aj_old) * y_pm[j] * K[:, j]
            alpha[i], alpha[j] = ai, aj
            b = b_new
            changed += 1
        if changed == 0:
            break
    return alpha, b


def _platt_fit(scores, targets, max_iter=100, min_step=1e-10, sigma=1e-12):
    """Sigmoid calibration of decision values (Newton with backtracking)."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    n1 = float((targets == 1).sum())
    n0 = float(len(targets) - n1)
    hi = (n1 + 1.0) / (n1 + 2.0)
    lo = 1.0 / (n0 + 2.0)
    t = np.where(targets == 1, hi, lo)
    a, b = 0.0, np.log((n0 + 1.0) / (n1 + 1.0))

    def objective(a_, b_):
        z = a_ * scores + b_
        # stable -sum(t*log(p) + (1-t)*log(1-p)) with p = 1/(1+exp(z))
        return float(np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-z)),
                                     (t - 1.0) * z + np.log1p(np.exp(z)))))

    fval = objective(a, b)
    for _ in range(max_iter):
        z = a * scores + b
        p = 1.0 / (1.0 + np.exp(np.clip(z, -500, 500)))
        d1 = t - p  # note: dF/dz = t - p with this parameterization
        g1 = float(np.sum(d1 * scores))
        g2 = float(np.sum(d1))
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        w = p * (1.0 - p)
        h11 = float(np.sum(w * scores * scores)) + sigma
        h22 = float(np.sum(w)) + sigma
        h12 = float(np.sum(w * scores))
        det = h11 * h22 - h12 * h12
        da = -(h22 * g1 - h12 * g2) / det
        db = -(h11 * g2 - h12 * g1) / det
        step = 1.0
        while step >= min_step:
            a_new, b_new = a + step * da, b + step * db
            f_new = objective(a_new, b_new)
            if f_new < fval + 1e-4 * step * (g1 * da + g2 * db):
                a, b, fval = a_new, b_new, f_new
                break
            step /= 2.0
        else:
            break
    return a, b


def _stratified_holdout(y, frac, rng):
    """(train_idx, holdout_idx) with per-class proportional holdout."""
    holdout = []
    for cls in np.unique(y):
        idx = np.nonzero(y == cls)[0]
        idx = idx[rng.permutation(len(idx))]
        take = max(1, int(round(frac * len(idx))))
        holdout.extend(idx[:take])
    holdout = np.sort(np.array(holdout, dtype=np.int64))
    train = np.setdiff1d(np.arange(len(y)), holdout)
    return train, holdout


# --- nested cross-validation -------------------------------------------------


def stratified_fold_ids(y, n_folds, rng):
    y = np.asarray(y)
    folds = np.empty(len(y), dtype=np.int64)
    for cls in np.unique(y):
        idx = np.nonzero(y == cls)[0]
        if len(idx) < n_folds:
            raise InsufficientDataError(
                f"class {cls} has {len(idx)} member(s), need >= {n_folds}"
            )
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = np.arange(len(idx)) % n_folds
    return folds


def _row_fingerprints(X, y):
    fps = []
    for row, label in zip(np.ascontiguousarray(X, dtype=np.float64), y):
        h = hashlib.sha1(row.tobytes() + bytes([int(label)])).hexdigest()
        fps.append(h)
    return np.array(fps)


@dataclass
class ClassifierCvResult:
    kind: str
    fold_scores: list
    mean: float
    std: float
    ci_low: float
    ci_high: float
    chosen_params: list


@dataclass
class CvReport:
    per_classifier: dict
    audit: list = field(default_factory=list)  # [(outer_test_fps, inner_train_fps)]

    def best_kind(self) -> str:
        return max(self.per_classifier, key=lambda k: self.per_classifier[k].mean)

    def to_dict(self):
        return {
            kind: {
                "fold_scores": [float(s) for s in res.fold_scores],
                "mean": res.mean,
                "std": res.std,
                "ci_low": res.ci_low,
                "ci_high": res.ci_high,
                "chosen_params": res.chosen_params,
            }
            for kind, res in self.per_classifier.items()
        }


def nested_cv(X, y, kinds=None, n_iter=10, outer_folds=5, inner_folds=3,
              seed=0, audit=False) -> CvReport:
    """Nested stratified cross-validation with randomized search.

    Outer folds estimate generalization; per outer fold, n_iter grid points
    (all, if the grid is smaller) are scored by inner-fold mean macro-F1,
    the winner is refitted on the outer-train split and scored once on the
    outer-test split. Scalers are fitted inside each training split.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    kinds = list(kinds) if kinds is not None else list(CLASSIFIER_KINDS)
    fold_rng = spawn_rng(seed, "cv-folds")
    outer_ids = stratified_fold_ids(y, outer_folds, fold_rng)

    audit_rows = []
    if audit:
        fps = _row_fingerprints(X, y)

    per_classifier = {}
    for kind in kinds:
        grid = classifier_grid(kind)
        scores, chosen = [], []
        for fold in range(outer_folds):
            test_mask = outer_ids == fold
            train_idx = np.nonzero(~test_mask)[0]
            test_idx = np.nonzero(test_mask)[0]
            Xtr, ytr = X[train_idx], y[train_idx]

            cand_rng = spawn_rng(seed, "cv-cands", kind, fold)
            n_cand = min(n_iter, len(grid))
            cand_ids = cand_rng.permutation(len(grid))[:n_cand]

            inner_rng = spawn_rng(seed, "cv-inner", kind, fold)
            inner_ids = stratified_fold_ids(ytr, inner_folds, inner_rng)

            best_score, best_params = -np.inf, None
            for cand_pos, cand in enumerate(cand_ids):
                params = grid[cand]
                inner_scores = []
                for k_fold in range(inner_folds):
                    itr = inner_ids != k_fold
                    ite = ~itr
                    clf = fit_classifier(
                        kind, params, Xtr[itr], ytr[itr],
                        spawn_seed(seed, "cv-fit", kind, fold, cand_pos, k_fold),
                    )
                    inner_scores.append(macro_f1(ytr[ite], clf.predict(Xtr[ite])))
                mean_inner = float(np.mean(inner_scores))
                if mean_inner > best_score:
                    best_score, best_params = mean_inner, params
            final = fit_classifier(
                kind, best_params, Xtr, ytr, spawn_seed(seed, "cv-refit", kind, fold)
            )
            scores.append(macro_f1(y[test_idx], final.predict(X[test_idx])))
            chosen.append(best_params)

            if audit and kind == kinds[0]:
                inner_train_fps = set()
                for k_fold in range(inner_folds):
                    inner_train_fps.update(fps[train_idx[inner_ids != k_fold]])
                audit_rows.append((set(fps[test_idx]), inner_train_fps))

        arr = np.array(scores)
        mean = float(arr.mean())
        std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        half = 1.96 * std / np.sqrt(len(arr))
        per_classifier[kind] = ClassifierCvResult(
            kind, [float(s) for s in scores], mean, std, mean - half, mean + half, chosen
        )
    return CvReport(per_classifier, audit_rows)


def modal_params(chosen: list) -> dict:
    """Most frequently selected hyperparameters (ties by first appearance)."""
    counts = {}
    for params in chosen:
        key = tuple(sorted(params.items(), key=lambda kv: kv[0]))
        counts[key] = counts.get(key, 0) + 1
    best = max(counts.items(), key=lambda kv: kv[1])[0]
    return dict(best)


def tune_and_fit(X, y, kind, n_iter=10, inner_folds=3, seed=0) -> TrainedClassifier:
    """Randomized search on inner CV over (X, y), then refit on all of it."""
    grid = classifier_grid(kind)
    cand_rng = spawn_rng(seed, "tune-cands", kind)
    n_cand = min(n_iter, len(grid))
    cand_ids = cand_rng.permutation(len(grid))[:n_cand]
    inner_ids = stratified_fold_ids(y, inner_folds, spawn_rng(seed, "tune-inner", kind))
    best_score, best_params = -np.inf, None
    for cand_pos, cand in enumerate(cand_ids):
        params = grid[cand]
        inner_scores = []
        for k_fold in range(inner_folds):
            itr = inner_ids != k_fold
            clf = fit_classifier(kind, params, X[itr], y[itr],
                                 spawn_seed(seed, "tune-fit", kind, cand_pos, k_fold))
            inner_scores.append(macro_f1(y[~itr], clf.predict(X[~itr])))
        mean_inner = float(np.mean(inner_scores))
        if mean_inner > best_score:
            best_score, best_params = mean_inner, params
    return fit_classifier(kind, best_params, X, y, spawn_seed(seed, "tune-refit", kind))


def train_on_synth_test_on_real(synth_X, synth_y, real_X, real_y, kinds=None,
                                n_iter=10, inner_folds=3, eval_folds=5, seed=0):
    """Transfer protocol: tune and fit on synthetic, score on real folds."""
    kinds = list(kinds) if kinds is not None else list(CLASSIFIER_KINDS)
    fold_ids = stratified_fold_ids(real_y, eval_folds, spawn_rng(seed, "transfer-folds"))
    out = {}
    for kind in kinds:
        clf = tune_and_fit(synth_X, synth_y, kind, n_iter, inner_folds,
                           spawn_seed(seed, "transfer", kind))
        scores = []
        for fold in range(eval_folds):
            mask = fold_ids == fold
            scores.append(macro_f1(real_y[mask], clf.predict(real_X[mask])))
        arr = np.array(scores)
        std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        half = 1.96 * std / np.sqrt(len(arr))
        out[kind] = ClassifierCvResult(
            kind, [float(s) for s in scores], float(arr.mean()), std,
            float(arr.mean() - half), float(arr.mean() + half), [clf.hyperparams]
        )
    return CvReport(out)
