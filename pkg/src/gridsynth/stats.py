"""Paired significance tests and multiple-comparison correction.

The Wilcoxon signed-rank test uses an exact null distribution (dynamic
program over signed midranks) up to n = 25 and a tie-corrected normal
approximation beyond. The paired t-test evaluates the Student CDF through
the regularized incomplete beta function (Lentz continued fraction), so no
statistics library is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

EXACT_WILCOXON_LIMIT = 25


@dataclass
class TestResult:
    statistic: float
    p_value: float
    degenerate: bool = False
    method: str = ""


# --- special functions ------------------------------------------------------


def _betacf(a, b, x, max_iter=300, eps=3e-14):
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def betainc_reg(a, b, x) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_bt = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log(1.0 - x)
    )
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t, df) -> float:
    """Two-sided tail probability of Student's t."""
    t = float(t)
    return betainc_reg(df / 2.0, 0.5, df / (df + t * t))


def student_t_quantile(prob, df, tol=1e-10) -> float:
    """Upper quantile: t with P(T <= t) = prob, prob in (0.5, 1)."""
    if not 0.5 < prob < 1.0:
        raise ValidationError("quantile prob must be in (0.5, 1)")
    target = 2.0 * (1.0 - prob)  # two-sided p at the quantile
    lo, hi = 0.0, 1.0
    while student_t_two_sided_p(hi, df) > target:
        hi *= 2.0
        if hi > 1e8:
            break
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if student_t_two_sided_p(mid, df) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def normal_two_sided_p(z) -> float:
    return math.erfc(abs(z) / math.sqrt(2.0))


# --- tests -------------------------------------------------------------------


def _midranks(values):
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def wilcoxon_signed_rank(a, b) -> TestResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped (classic convention). Exact enumeration of
    the signed-rank null up to n = 25 non-zero pairs, normal approximation
    with tie correction beyond. The statistic is min(W+, W-).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError("wilcoxon: length mismatch")
    if len(a) < 5:
        raise ValidationError("wilcoxon: need n >= 5 pairs")
    d = a - b
    d = d[d != 0.0]
    if len(d) == 0:
        return TestResult(0.0, 1.0, degenerate=True, method="wilcoxon-degenerate")
    n = len(d)
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)

    if n <= EXACT_WILCOXON_LIMIT:
        # doubled midranks are integers; DP over achievable W+ values
        r2 = np.rint(2.0 * ranks).astype(np.int64)
        total = int(r2.sum())
        counts = np.zeros(total + 1, dtype=np.float64)
        counts[0] = 1.0
        for r in r2:
            counts[r:] = counts[r:] + counts[: total + 1 - r]
        w2 = int(round(2.0 * w))
        cdf = counts[: w2 + 1].sum() / 2.0**n
        p = min(1.0, 2.0 * cdf)
        return TestResult(w, p, method="wilcoxon-exact")

    mu = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(((tie_counts**3 - tie_counts)).sum()) / 48.0
    sigma2 = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    if sigma2 <= 0:
        return TestResult(w, 1.0, degenerate=True, method="wilcoxon-normal")
    z = (w - mu) / math.sqrt(sigma2)
    return TestResult(w, min(1.0, normal_two_sided_p(z)), method="wilcoxon-normal")


def paired_t_test(a, b) -> TestResult:
    """Two-sided paired Student t-test."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError("paired t: length mismatch")
    n = len(a)
    if n < 2:
        raise ValidationError("paired t: need n >= 2 pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TestResult(0.0, 1.0, degenerate=True, method="paired-t-degenerate")
        return TestResult(math.inf if mean > 0 else -math.inf, 0.0,
                          degenerate=True, method="paired-t-degenerate")
    t = mean / (sd / math.sqrt(n))
    p = student_t_two_sided_p(t, n - 1)
    return TestResult(t, p, method="paired-t")


def holm_bonferroni(p_values):
    """Step-down Holm correction; returns corrected values in input order."""
    p = np.asarray(p_values, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValidationError("p-values must lie in [0, 1]")
    m = len(p)
    order = np.argsort(p, kind="stable")
    corrected = np.empty(m)
    running = 0.0
    for i, idx in enumerate(order):
        val = min(1.0, (m - i) * p[idx])
        running = max(running, val)
        corrected[idx] = running
    return corrected.tolist()


@dataclass
class PairedComparison:
    """Synthetic-vs-real comparison of one classifier's fold scores."""

    statistic: float
    p_raw: float
    p_corrected: float
    direction: str  # improvement | drop | none
    significant: bool
    method: str

    def to_dict(self):
        return {
            "statistic": self.statistic,
            "p_raw": self.p_raw,
            "p_corrected": self.p_corrected,
            "direction": self.direction,
            "significant": self.significant,
            "method": self.method,
        }


def compare_fold_scores(synth_scores: dict, real_scores: dict, test="paired_t",
                        alpha=0.05) -> dict:
    """Per-classifier paired test with Holm correction across classifiers.

    synth_scores/real_scores map classifier kind to the outer-fold macro-F1
    vectors. Direction reflects the sign of the mean difference; the
    significance flag uses the corrected p-value.
    """
    kinds = list(synth_scores.keys())
    raws = {}
    for kind in kinds:
        s = np.asarray(synth_scores[kind], dtype=np.float64)
        r = np.asarray(real_scores[kind], dtype=np.float64)
        if test == "wilcoxon":
            res = wilcoxon_signed_rank(s, r)
        else:
            res = paired_t_test(s, r)
        raws[kind] = (res, float(s.mean() - r.mean()))
    corrected = holm_bonferroni([raws[k][0].p_value for k in kinds])
    out = {}
    for kind, p_corr in zip(kinds, corrected):
        res, diff = raws[kind]
        significant = bool(p_corr < alpha)
        if not significant or diff == 0.0:
            direction = "none"
        else:
            direction = "improvement" if diff > 0 else "drop"
        out[kind] = PairedComparison(
            statistic=float(res.statistic), p_raw=float(res.p_value),
            p_corrected=float(p_corr), direction=direction,
            significant=significant, method=res.method,
        )
    return out
