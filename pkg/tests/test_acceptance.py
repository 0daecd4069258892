"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. The final criterion
executes the complete pipeline (four generator families, two regimes) on
the bundled 200-household sample, so the module takes tens of minutes.
"""

import math
import time

import numpy as np
import pytest

from gridsynth import autodiff as ad
from gridsynth.attacks import MiaConfig, mia_attack, reconstruction_attack
from gridsynth.classifiers import nested_cv
from gridsynth.features import CLASSIFIER_FEATURES, SECRET_FEATURE, FeatureTable, assign_labels, fit_score_model
from gridsynth.fidelity import fit_kde, js_divergence, kl_divergence, scott_bandwidth_factor
from gridsynth.generators import make_beta_schedule, train_generator
from gridsynth.generators.diffusion import forward_diffuse, invert_forward
from gridsynth.generators.base import DiffusionConfig
from gridsynth.orchestrator import run
from gridsynth.stats import holm_bonferroni, paired_t_test, wilcoxon_signed_rank


def report(number, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] criterion {number}: {detail}")
    assert ok, f"criterion {number}: {detail}"


# --- criterion 1: autodiff correctness ---------------------------------------


def _fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        f1 = f()
        x[idx] = orig - h
        f2 = f()
        x[idx] = orig
        g[idx] = (f1 - f2) / (2 * h)
    return g


_UNARY_POOL = [
    lambda t: ad.sigmoid(t),
    lambda t: ad.tanh(t),
    lambda t: ad.relu(t),
    lambda t: ad.square(t),
    lambda t: ad.exp(ad.mul(t, 0.4)),
    lambda t: ad.log(ad.add(ad.square(t), 0.3)),
    lambda t: ad.sqrt(ad.add(ad.square(t), 0.3)),
    lambda t: ad.reciprocal(ad.add(ad.square(t), 0.5)),
    lambda t: ad.softmax_rows(t),
    lambda t: ad.concat_cols([ad.slice_cols(t, 2, 4), ad.slice_cols(t, 0, 2)]),
    lambda t: ad.add(t, ad.Tensor(np.linspace(-0.4, 0.4, 4))),  # bias add
    lambda t: ad.matmul(t, ad.Tensor(_MIX)),
]

_MIX = np.array([
    [0.6, -0.2, 0.1, 0.3],
    [0.1, 0.7, -0.3, 0.2],
    [-0.2, 0.1, 0.8, 0.1],
    [0.3, 0.2, 0.1, -0.5],
])

_REDUCERS = [
    lambda t: ad.mean(t),
    lambda t: ad.mean(ad.square(t)),
    lambda t: ad.mean(ad.l2_norm_rows(t)),
    lambda t: ad.mse(t, ad.Tensor(_TARGET)),
    lambda t: ad.bce(ad.sigmoid(t), ad.Tensor(_BINARY)),
]

_TARGET = np.linspace(-0.5, 0.5, 12).reshape(3, 4)
_BINARY = (np.arange(12).reshape(3, 4) % 2).astype(np.float64)


def _build_composition(rng):
    depth = int(rng.integers(1, 6))
    ops = [int(rng.integers(0, len(_UNARY_POOL))) for _ in range(depth)]
    reducer = int(rng.integers(0, len(_REDUCERS)))
    x0 = rng.uniform(-1.2, 1.2, size=(3, 4))
    y0 = rng.uniform(-1.2, 1.2, size=(3, 4))
    mix_second = bool(rng.integers(0, 2))

    def forward(x_data, y_data):
        t = ad.Tensor(x_data) if not isinstance(x_data, ad.Tensor) else x_data
        u = ad.Tensor(y_data) if not isinstance(y_data, ad.Tensor) else y_data
        if mix_second:
            t = ad.add(ad.mul(t, 0.7), ad.mul(u, 0.5))
        for op_idx in ops:
            t = _UNARY_POOL[op_idx](t)
        return _REDUCERS[reducer](t)

    return forward, x0, y0


def test_criterion_1_autodiff_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    checked = 0
    for _ in range(50):
        forward, x0, y0 = _build_composition(rng)
        x = ad.Tensor(x0.copy(), requires_grad=True)
        y = ad.Tensor(y0.copy(), requires_grad=True)
        loss = forward(x, y)
        ad.backward(loss)
        for leaf, arr in ((x, x0), (y, y0)):
            if leaf.grad is None:
                continue
            fd = _fd_grad(lambda: forward(arr, y0).item() if leaf is x
                          else forward(x0, arr).item(), arr)
            denom = np.maximum(np.maximum(np.abs(fd), np.abs(leaf.grad.data)), 1e-4)
            worst = max(worst, float((np.abs(leaf.grad.data - fd) / denom).max()))
            checked += 1

    # double backprop of the gradient penalty vs parameter finite differences
    critic = ad.Mlp([3, 6, 1], activations=["tanh", "identity"],
                    rng=np.random.default_rng(5))
    data_rng = np.random.default_rng(6)
    real = data_rng.normal(size=(4, 3))
    fake = data_rng.normal(size=(4, 3))

    def gp_value():
        return ad.gradient_penalty(critic, real, fake, np.random.default_rng(11)).item()

    gp = ad.gradient_penalty(critic, real, fake, np.random.default_rng(11))
    ad.zero_grads(critic.parameters())
    ad.backward(gp)
    worst_gp = 0.0
    for p in critic.parameters():
        analytic = p.grad.data if p.grad is not None else np.zeros_like(p.data)
        fd = _fd_grad(gp_value, p.data, h=1e-5)
        denom = np.maximum(np.maximum(np.abs(fd), np.abs(analytic)), 1e-6)
        worst_gp = max(worst_gp, float((np.abs(analytic - fd) / denom).max()))

    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and worst_gp < 1e-3 and elapsed < 30
    report(1, ok, f"50 compositions worst rel err {worst:.2e} ({checked} grads), "
                  f"GP double-backprop worst {worst_gp:.2e}, {elapsed:.1f}s")


# --- criterion 2: Scott's rule -------------------------------------------------


def test_criterion_2_scott_rule():
    ratio = scott_bandwidth_factor(1117, 24)
    ok = abs(ratio - 0.778) <= 0.005
    report(2, ok, f"bandwidth ratio at (n=1117, d=24) = {ratio:.4f}")


# --- criterion 3: divergence sanity ---------------------------------------------


def test_criterion_3_divergence_sanity(bundled_table):
    start = time.perf_counter()
    table, _ = bundled_table
    kde = fit_kde(table.classifier_matrix())
    kl_self, _ = kl_divergence(kde, kde, mc_n=20000, seed=1)
    js_self, _ = js_divergence(kde, kde, mc_n=20000, seed=2)

    rng = np.random.default_rng(3)
    # large fit samples, 20000-draw MC estimate; kernel count kept at 5000
    # so the criterion fits its runtime budget on one core
    p = fit_kde(rng.normal(0.0, 1.0, size=(5000, 1)))
    q = fit_kde(rng.normal(1.0, 1.0, size=(5000, 1)))
    kl_pair, _ = kl_divergence(p, q, mc_n=20000, seed=4)

    # JS symmetry on two distinct distributions
    rng2 = np.random.default_rng(6)
    a = fit_kde(rng2.normal(0, 1, size=(1500, 2)))
    b = fit_kde(rng2.normal(0.6, 1.2, size=(1500, 2)))
    js_1, se_1 = js_divergence(a, b, mc_n=8000, seed=7)
    js_2, se_2 = js_divergence(b, a, mc_n=8000, seed=8)

    elapsed = time.perf_counter() - start
    ok = (
        abs(kl_self) < 0.01
        and js_self < 0.005
        and abs(kl_pair - 0.5) <= 0.1
        and abs(js_1 - js_2) <= 3 * math.hypot(se_1, se_2)
        and elapsed < 120
    )
    report(3, ok, f"KL(P||P)={kl_self:.4f}, JS(P,P)={js_self:.4f}, "
                  f"Gaussian-pair KL={kl_pair:.3f}, |JS sym diff|="
                  f"{abs(js_1 - js_2):.4f} vs 3se={3 * math.hypot(se_1, se_2):.4f}, "
                  f"{elapsed:.0f}s")


# --- criterion 4: label construction ---------------------------------------------


def test_criterion_4_label_construction(bundled_table):
    table, _ = bundled_table
    frac = float(table.labels.mean())
    frac_ok = abs(frac - 0.25) <= 2.0 / table.n_rows

    rows = table.features
    names = table.feature_names
    score_cols = [names.index(n) for n in CLASSIFIER_FEATURES]
    base_model = fit_score_model(rows[:, score_cols], CLASSIFIER_FEATURES)
    base = assign_labels(base_model, table.household_ids, rows, names)
    invariant_ok = True
    for col in ("load_entropy", "max_consumption", "dow_mean_sun"):
        scaled = rows.copy()
        j = names.index(col)
        scaled[:, j] = scaled[:, j] * 11.0 + 3.0
        model = fit_score_model(scaled[:, score_cols], CLASSIFIER_FEATURES)
        new = assign_labels(model, table.household_ids, scaled, names)
        invariant_ok &= bool(np.array_equal(base.labels, new.labels))

    ok = frac_ok and invariant_ok
    report(4, ok, f"responsive fraction {frac:.4f} (+/-{2.0 / table.n_rows:.3f} around 0.25), "
                  f"affine-rescale label invariance: {invariant_ok}")


# --- criterion 5: nested CV hygiene ------------------------------------------------


def test_criterion_5_nested_cv_hygiene(bundled_table):
    start = time.perf_counter()
    table, _ = bundled_table
    X = table.classifier_matrix()
    y = table.labels

    audit_report = nested_cv(X, y, seed=17, audit=True)
    leaks = sum(len(t & i) for t, i in audit_report.audit)

    rng = np.random.default_rng(41)
    y_perm = y[rng.permutation(len(y))]
    perm_report = nested_cv(X, y_perm, seed=17)
    perm_means = {k: r.mean for k, r in perm_report.per_classifier.items()}
    perm_ok = all(0.35 <= m <= 0.65 for m in perm_means.values())

    X_planted = X.copy()
    X_planted[:, 0] = y
    planted_report = nested_cv(X_planted, y, seed=18)
    planted_means = {k: r.mean for k, r in planted_report.per_classifier.items()}
    planted_ok = all(m >= 0.95 for m in planted_means.values())

    elapsed = time.perf_counter() - start
    ok = leaks == 0 and perm_ok and planted_ok and elapsed < 600
    report(5, ok, f"fingerprint leaks={leaks}, permuted macro-F1 "
                  f"{min(perm_means.values()):.3f}..{max(perm_means.values()):.3f}, "
                  f"planted min {min(planted_means.values()):.3f}, {elapsed:.0f}s")


# --- criterion 6: WGAN regularizer ablation -----------------------------------------


def test_criterion_6_wgan_regularizer_effect(bundled_table):
    start = time.perf_counter()
    table, _ = bundled_table
    p_r = float(table.labels.mean())
    gen = train_generator("wgan", table, {"seed": 4, "epochs": 100})
    _, y_default = gen.sample(1000, 42)
    dev_default = abs(float(y_default.mean()) - p_r)

    gen_off = train_generator("wgan", table, {"seed": 4, "epochs": 100,
                                              "lambda_bal": 0.0, "lambda_ent": 0.0})
    _, y_off = gen_off.sample(1000, 42)
    dev_off = abs(float(y_off.mean()) - p_r)

    elapsed = time.perf_counter() - start
    ok = dev_default < 0.05 and dev_off > dev_default and elapsed < 900
    report(6, ok, f"default |ratio-p_r|={dev_default:.3f} (<0.05), "
                  f"unregularized {dev_off:.3f} (strictly larger), {elapsed:.0f}s")


# --- criterion 7: diffusion identities ------------------------------------------------


def test_criterion_7_diffusion_identities(small_table):
    cfg = DiffusionConfig()
    _, abar = make_beta_schedule(cfg)
    rng = np.random.default_rng(9)
    x0 = rng.normal(size=(32, 8))
    eps = rng.normal(size=(32, 8))
    worst = 0.0
    for t in (0, 7, 44, 99):
        xt = forward_diffuse(x0, eps, t, abar)
        worst = max(worst, float(np.abs(invert_forward(xt, eps, t, abar) - x0).max()))

    monotone = bool(np.all(np.diff(abar) < 0)) and abar[0] > 0.99

    table, _ = small_table
    gen = train_generator("diffusion", table, {"seed": 5})
    X1, y1 = gen.sample(60, 13)
    X2, y2 = gen.sample(60, 13)
    reproducible = np.array_equal(X1, X2) and np.array_equal(y1, y2)

    ok = worst < 1e-10 and monotone and reproducible
    report(7, ok, f"inversion max err {worst:.1e}, alpha-bar strictly decreasing "
                  f"with abar_0={abar[0]:.5f}, DDIM sampling bit-reproducible: {reproducible}")


# --- criterion 8: MIA endpoints ----------------------------------------------------


class _Memorizer:
    def __init__(self, X):
        self.X = np.asarray(X, dtype=np.float64)

    def predict_proba(self, Q):
        Q = np.asarray(Q, dtype=np.float64)
        d = np.sqrt(((Q[:, None, :] - self.X[None, :, :]) ** 2).sum(axis=2)).min(axis=1)
        p = 0.5 + 0.5 * np.exp(-d)
        return np.column_stack([1.0 - p, p])


class _Constant:
    def predict_proba(self, Q):
        return np.full((len(Q), 2), 0.5)


def test_criterion_8_mia_endpoints():
    start = time.perf_counter()
    rng = np.random.default_rng(77)
    mem_X = rng.normal(size=(50, 5))
    mem_y = (rng.random(50) > 0.7).astype(int)
    pool_X = rng.normal(1.5, 1.0, size=(200, 5))
    pool_y = (rng.random(200) > 0.7).astype(int)

    leaky = mia_attack(mem_X, mem_y, pool_X, pool_y, _Memorizer(mem_X),
                       MiaConfig(), master_seed=3)
    flat = mia_attack(mem_X, mem_y, pool_X, pool_y, _Constant(),
                      MiaConfig(), master_seed=3)

    arr = np.array(leaky.per_seed_auc)
    half = 2.7764451 * arr.std(ddof=1) / np.sqrt(len(arr))
    interval_ok = (
        abs(leaky.ci_low - max(0.0, arr.mean() - half)) < 1e-9
        and abs(leaky.ci_high - min(1.0, arr.mean() + half)) < 1e-9
    )
    elapsed = time.perf_counter() - start
    ok = (leaky.mean_auc >= 0.9 and abs(flat.mean_auc - 0.5) <= 0.05
          and interval_ok and elapsed < 300)
    report(8, ok, f"memorizer AUC={leaky.mean_auc:.3f} (>=0.9), constant-posterior "
                  f"AUC={flat.mean_auc:.3f} (0.5+/-0.05), t-interval with "
                  f"t=2.776 verified: {interval_ok}, {elapsed:.0f}s")


# --- criterion 9: reconstruction endpoints ---------------------------------------------


def test_criterion_9_reconstruction_endpoints(bundled_table):
    start = time.perf_counter()
    table, _ = bundled_table
    copy_res = reconstruction_attack(table, table, seed=5)

    feats = table.features.copy()
    si = table.feature_names.index(SECRET_FEATURE)
    rng = np.random.default_rng(9)
    feats[:, si] = feats[rng.permutation(table.n_rows), si]
    permuted = FeatureTable(list(table.household_ids), list(table.feature_names),
                            feats, table.labels.copy())
    perm_res = reconstruction_attack(permuted, table, seed=5)

    elapsed = time.perf_counter() - start
    ok = (copy_res.prs == 1.0 and perm_res.prs <= 0.1
          and copy_res.mse_noise >= copy_res.mse_real and elapsed < 300)
    report(9, ok, f"copy PRS={copy_res.prs:.2f} (=1.0), permuted PRS={perm_res.prs:.3f} "
                  f"(<=0.1), mse_noise {copy_res.mse_noise:.2e} >= mse_real "
                  f"{copy_res.mse_real:.2e}, {elapsed:.0f}s")


# --- criterion 10: statistics ----------------------------------------------------------


def test_criterion_10_statistics():
    wilcox = wilcoxon_signed_rank([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
    wilcox_ok = abs(wilcox.p_value - 0.0625) < 1e-12

    holm = holm_bonferroni([0.01, 0.2, 0.3, 0.4, 0.5])
    holm_ok = np.allclose(holm, [0.05, 0.8, 0.9, 0.9, 0.9])
    holm_all = holm_bonferroni([0.01] * 5)
    holm_ok &= np.allclose(holm_all, [0.05] * 5)

    d = np.array([0.5, -0.2, 0.3, 0.1, 0.4])
    res = paired_t_test(d, np.zeros(5))
    xs = np.linspace(0.0, abs(res.statistic), 400_001)
    df = 4

    def t_pdf(x):
        return (
            math.exp(math.lgamma((df + 1) / 2.0) - math.lgamma(df / 2.0))
            / math.sqrt(df * math.pi) * (1.0 + x * x / df) ** (-(df + 1) / 2.0)
        )

    body = float(np.trapezoid([t_pdf(x) for x in xs], xs))
    oracle = 2.0 * (0.5 - body)
    t_ok = abs(res.p_value - oracle) < 1e-6

    ok = wilcox_ok and holm_ok and t_ok
    report(10, ok, f"Wilcoxon exact p={wilcox.p_value:.4f} (=0.0625), Holm step-down "
                   f"reproduced, paired-t |p - quadrature| = {abs(res.p_value - oracle):.2e}")


# --- criterion 11: full-pipeline directional checks --------------------------------------


def test_criterion_11_full_pipeline_directional(tmp_path):
    start = time.perf_counter()
    cfg = {
        "master_seed": 0,
        "output_dir": str(tmp_path / "full"),
        "data": {"sample": {"seed": 7, "households": 200, "days": 28}},
        "jobs": [
            {"family": "wgan", "regime": "full"},
            {"family": "wgan", "regime": "semi"},
            {"family": "diffusion", "regime": "full"},
            {"family": "diffusion", "regime": "semi"},
            {"family": "ctgan", "regime": "full"},
            {"family": "ctgan", "regime": "semi"},
            {"family": "noise", "regime": "full"},
            {"family": "noise", "regime": "semi"},
        ],
    }
    result = run(cfg)
    elapsed = time.perf_counter() - start

    names = [d["name"] for d in result["datasets"]]
    rows_ok = len(names) == 9 and names[0] == "real"
    errors = [d["name"] for d in result["datasets"] if d.get("error")]
    by_name = {d["name"]: d for d in result["datasets"]}

    noise_full = by_name["noise_full"]
    wgan_full = by_name["wgan_full"]
    ctgan_full = by_name["ctgan_full"]
    kl_ok = noise_full["fidelity"]["kl"] <= wgan_full["fidelity"]["kl"]
    js_ok = noise_full["fidelity"]["js"] <= wgan_full["fidelity"]["js"]
    prs_ok = noise_full["reconstruction"]["prs"] >= ctgan_full["reconstruction"]["prs"]

    ok = rows_ok and not errors and kl_ok and js_ok and prs_ok and elapsed < 2700
    report(11, ok, f"9 rows: {rows_ok}, errors: {errors or 'none'}; "
                   f"noise KL {noise_full['fidelity']['kl']:.2f} <= wgan KL "
                   f"{wgan_full['fidelity']['kl']:.2f}: {kl_ok}; "
                   f"noise JS {noise_full['fidelity']['js']:.3f} <= wgan JS "
                   f"{wgan_full['fidelity']['js']:.3f}: {js_ok}; "
                   f"noise PRS {noise_full['reconstruction']['prs']:.2f} >= ctgan PRS "
                   f"{ctgan_full['reconstruction']['prs']:.2f}: {prs_ok}; "
                   f"{elapsed / 60:.1f} min (< 45)")
