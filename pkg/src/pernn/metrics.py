"""Distribution and regression metrics for the evaluation reports.

All functions take 1-D collections of real samples. The distribution metrics
(MMD, Wasserstein, KL) compare a prediction sample set against a truth sample
set; MAE/R2 compare paired values.
"""
from __future__ import annotations

import numpy as np


def _samples(x, name="samples") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def mmd(a, b) -> float:
    """Gaussian-kernel maximum mean discrepancy, unbiased estimator.

    Kernel bandwidth follows the median heuristic on the pooled sample;
    the unbiased MMD^2 (diagonal terms excluded) is clipped at zero before
    taking the square root.
    """
    a, b = _samples(a, "a"), _samples(b, "b")
    pooled = np.concatenate([a, b])
    dists = np.abs(pooled[:, None] - pooled[None, :])
    iu = np.triu_indices(pooled.size, k=1)
    sigma = float(np.median(dists[iu])) if iu[0].size else 0.0
    if sigma <= 0.0:
        sigma = 1.0
    gamma = 1.0 / (2.0 * sigma * sigma)

    def kmean_offdiag(x, y=None):
        if y is None:
            k = np.exp(-gamma * (x[:, None] - x[None, :]) ** 2)
            n = x.size
            if n < 2:
                return 0.0
            return float((k.sum() - n) / (n * (n - 1)))
        k = np.exp(-gamma * (x[:, None] - y[None, :]) ** 2)
        return float(k.mean())

    mmd2 = kmean_offdiag(a) + kmean_offdiag(b) - 2.0 * kmean_offdiag(a, b)
    return float(np.sqrt(max(mmd2, 0.0)))


def wasserstein_1d(a, b) -> float:
    """Order-1 Wasserstein distance between empirical distributions.

    Equal sizes reduce to the mean absolute difference of sorted samples;
    the general case integrates |F_a - F_b| over the pooled support, which
    equals the quantile-function integral.
    """
    a, b = _samples(a, "a"), _samples(b, "b")
    if a.size == b.size:
        return float(np.mean(np.abs(np.sort(a) - np.sort(b))))
    support = np.sort(np.concatenate([a, b]))
    deltas = np.diff(support)
    cdf_a = np.searchsorted(np.sort(a), support[:-1], side="right") / a.size
    cdf_b = np.searchsorted(np.sort(b), support[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * deltas))


def kl_divergence(a, b, bins: int = 50) -> float:
    """Histogram KL divergence D(p_a || p_b) on the pooled range.

    Both sets are binned into `bins` equal-width bins spanning the pooled
    min/max, with additive smoothing eps = 1e-10 before normalization.
    """
    a, b = _samples(a, "a"), _samples(b, "b")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    eps = 1e-10
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    pa, _ = np.histogram(a, bins=edges)
    pb, _ = np.histogram(b, bins=edges)
    p = (pa + eps) / (a.size + bins * eps)
    q = (pb + eps) / (b.size + bins * eps)
    return float(np.sum(p * np.log(p / q)))


def r2_score(pred, truth) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot."""
    pred = _samples(pred, "pred")
    truth = _samples(truth, "truth")
    if pred.size != truth.size:
        raise ValueError("length mismatch")
    if pred.size < 2:
        raise ValueError("need at least 2 samples")
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot <= 0.0:
        raise ValueError("truth has zero variance")
    ss_res = float(np.sum((truth - pred) ** 2))
    return 1.0 - ss_res / ss_tot
