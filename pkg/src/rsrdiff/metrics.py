"""Image quality metrics (PSNR, SSIM, GMSD, perceptual proxy) and the
nonparametric statistics used to compare methods: Kruskal-Wallis omnibus,
Dunn pairwise tests with Bonferroni correction, and percentile bootstrap
confidence intervals.

The pipeline is unconditionally nonparametric; Dunn pairs are only reported
when the omnibus p-value clears the gate (see compare_methods).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal
from scipy.stats import chi2, norm, rankdata

from .perceptual import perceptual_proxy
from .tensorio import format_g9

__all__ = [
    "psnr",
    "ssim",
    "gmsd",
    "evaluate_pair",
    "aggregate",
    "kruskal_wallis",
    "dunn_bonferroni",
    "bootstrap_ci",
    "StatisticsBlock",
    "compare_methods",
    "MetricReport",
    "write_report_csv",
    "METRIC_NAMES",
    "HIGHER_IS_BETTER",
]

METRIC_NAMES = ("psnr", "ssim", "gmsd", "perceptual")
HIGHER_IS_BETTER = {"psnr": True, "ssim": True, "gmsd": False, "perceptual": False}

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_GMSD_C255 = 170.0  # constant from the original formulation, on a 0..255 scale
STATS_ALPHA = 0.05


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred, gt


def psnr(pred, gt, data_range: float = 1.0) -> float:
    if data_range <= 0:
        raise ValueError(f"data_range must be positive, got {data_range}")
    pred, gt = _check_pair(pred, gt)
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(pred, gt, data_range: float = 1.0) -> float:
    """Mean of the local SSIM map over valid 11x11 Gaussian windows."""
    pred, gt = _check_pair(pred, gt)
    if min(pred.shape) < _SSIM_WINDOW:
        raise ValueError(
            f"image {pred.shape} smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} SSIM window"
        )
    win = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def smooth(x):
        return signal.convolve2d(x, win, mode="valid")

    mu1, mu2 = smooth(pred), smooth(gt)
    s11 = smooth(pred * pred) - mu1 * mu1
    s22 = smooth(gt * gt) - mu2 * mu2
    s12 = smooth(pred * gt) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1**2 + mu2**2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


_PREWITT_X = np.array([[1.0, 0.0, -1.0], [1.0, 0.0, -1.0], [1.0, 0.0, -1.0]]) / 3.0
_PREWITT_Y = _PREWITT_X.T


def _grad_magnitude(img: np.ndarray) -> np.ndarray:
    # symmetric boundary keeps constant images gradient-free at the edges
    gx = signal.convolve2d(img, _PREWITT_X, mode="same", boundary="symm")
    gy = signal.convolve2d(img, _PREWITT_Y, mode="same", boundary="symm")
    return np.sqrt(gx * gx + gy * gy)


def gmsd(pred, gt, data_range: float = 1.0) -> float:
    """Standard deviation of the gradient-magnitude similarity map.

    The stabilizing constant is defined on a 0..255 scale and rescaled
    quadratically to the given data range; population std is used.
    """
    pred, gt = _check_pair(pred, gt)
    c = _GMSD_C255 * (data_range / 255.0) ** 2
    mp = _grad_magnitude(pred)
    mg = _grad_magnitude(gt)
    s = (2.0 * mp * mg + c) / (mp * mp + mg * mg + c)
    return float(np.std(s))


def evaluate_pair(pred, gt, data_range: float = 1.0) -> dict:
    """All four metrics for one prediction/ground-truth pair."""
    return {
        "psnr": psnr(pred, gt, data_range),
        "ssim": ssim(pred, gt, data_range),
        "gmsd": gmsd(pred, gt, data_range),
        "perceptual": perceptual_proxy(pred, gt),
    }


def aggregate(values) -> tuple[float, float]:
    """Mean and sample standard deviation (ddof=1; 0 for a single value)."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot aggregate an empty sample")
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


# --- nonparametric statistics ---


def _check_groups(groups):
    groups = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(groups) < 2:
        raise ValueError(f"need at least 2 groups, got {len(groups)}")
    for i, g in enumerate(groups):
        if g.size == 0:
            raise ValueError(f"group {i} is empty")
    return groups


def _rank_and_ties(groups):
    pooled = np.concatenate(groups)
    ranks = rankdata(pooled)
    _, counts = np.unique(pooled, return_counts=True)
    tie_sum = float(np.sum(counts.astype(np.float64) ** 3 - counts))
    return ranks, tie_sum


def kruskal_wallis(groups) -> tuple[float, float]:
    """Tie-corrected H statistic and its chi-square p-value."""
    groups = _check_groups(groups)
    ranks, tie_sum = _rank_and_ties(groups)
    n = ranks.size
    h = 0.0
    start = 0
    for g in groups:
        r = ranks[start : start + g.size]
        start += g.size
        h += r.sum() ** 2 / g.size
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    correction = 1.0 - tie_sum / (n**3 - n)
    if correction <= 0.0:
        # every pooled value identical: no evidence against the null
        return 0.0, 1.0
    h /= correction
    p = float(chi2.sf(h, len(groups) - 1))
    return float(h), p


def dunn_bonferroni(groups) -> np.ndarray:
    """Pairwise adjusted p-value matrix (symmetric, unit diagonal).

    z statistics use mean-rank differences with tie-corrected variance;
    two-sided p-values are multiplied by the number of pairs and capped at 1.
    """
    groups = _check_groups(groups)
    k = len(groups)
    ranks, tie_sum = _rank_and_ties(groups)
    n = ranks.size
    mean_ranks = []
    start = 0
    for g in groups:
        mean_ranks.append(ranks[start : start + g.size].mean())
        start += g.size
    var0 = n * (n + 1) / 12.0 - tie_sum / (12.0 * (n - 1)) if n > 1 else 0.0
    n_pairs = k * (k - 1) // 2
    p = np.ones((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            if var0 <= 0.0:
                adj = 1.0
            else:
                se = math.sqrt(var0 * (1.0 / groups[i].size + 1.0 / groups[j].size))
                z = abs(mean_ranks[i] - mean_ranks[j]) / se
                adj = min(1.0, 2.0 * float(norm.sf(z)) * n_pairs)
            p[i, j] = p[j, i] = adj
    return p


def bootstrap_ci(sample, iterations: int = 10000, level: float = 0.95, seed: int = 0):
    """Percentile bootstrap interval for the mean."""
    sample = np.asarray(sample, dtype=np.float64).ravel()
    if sample.size == 0:
        raise ValueError("cannot bootstrap an empty sample")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if np.ptp(sample) == 0.0:
        # resampling a constant is pure rounding noise; the interval is a point
        return float(sample[0]), float(sample[0])
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, sample.size, size=(iterations, sample.size))
    means = sample[idx].mean(axis=1)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [tail, 1.0 - tail])
    return float(lo), float(hi)


@dataclass(frozen=True)
class StatisticsBlock:
    """Omnibus result plus pairwise p-values when the gate was cleared."""

    methods: tuple
    statistic: float
    p_value: float
    dunn_p: np.ndarray | None  # None when the omnibus test was not significant

    @property
    def significant(self) -> bool:
        return self.dunn_p is not None


def compare_methods(values_by_method: dict, alpha: float = STATS_ALPHA) -> StatisticsBlock:
    """Kruskal-Wallis first; Dunn pairs only when the omnibus p < alpha."""
    methods = tuple(values_by_method)
    groups = [values_by_method[m] for m in methods]
    h, p = kruskal_wallis(groups)
    dunn = dunn_bonferroni(groups) if p < alpha else None
    return StatisticsBlock(methods=methods, statistic=h, p_value=p, dunn_p=dunn)


def write_report_csv(report: "MetricReport", path, bootstrap: dict | None = None) -> None:
    """Uniform 7-column CSV: image rows, aggregate rows, statistics footer.

    Dunn rows appear only for metrics whose omnibus test cleared the gate;
    gated-out cells stay empty.  Optional bootstrap block adds per-metric
    confidence bounds (single-method reports).
    """
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["section", "id", "method"] + list(METRIC_NAMES))
        for rec in report.records:
            writer.writerow(
                ["image", rec["id"], rec["method"]]
                + [format_g9(rec[m]) for m in METRIC_NAMES]
            )
        for method, aggs in report.aggregates.items():
            writer.writerow(
                ["aggregate", "mean", method] + [format_g9(aggs[m][0]) for m in METRIC_NAMES]
            )
            writer.writerow(
                ["aggregate", "std", method] + [format_g9(aggs[m][1]) for m in METRIC_NAMES]
            )
        if report.stats:
            writer.writerow(
                ["stats", "kw_h", "-"]
                + [format_g9(report.stats[m].statistic) for m in METRIC_NAMES]
            )
            writer.writerow(
                ["stats", "kw_p", "-"]
                + [format_g9(report.stats[m].p_value) for m in METRIC_NAMES]
            )
            methods = list(report.aggregates)
            for i in range(len(methods)):
                for j in range(i + 1, len(methods)):
                    cells = []
                    for m in METRIC_NAMES:
                        block = report.stats[m]
                        if block.dunn_p is None:
                            cells.append("")
                        else:
                            cells.append(format_g9(block.dunn_p[i, j]))
                    if any(cells):
                        writer.writerow(
                            ["stats", "dunn_p", f"{methods[i]}|{methods[j]}"] + cells
                        )
        for name, values in (bootstrap or {}).items():
            writer.writerow(
                ["stats", name, "-"] + [format_g9(v) for v in values]
            )


@dataclass
class MetricReport:
    """Per-image records, per-method aggregates, per-metric statistics."""

    records: list  # dicts: id, method, psnr, ssim, gmsd, perceptual
    aggregates: dict  # method -> metric -> (mean, std)
    stats: dict  # metric -> StatisticsBlock

    @classmethod
    def build(cls, records, alpha: float = STATS_ALPHA) -> "MetricReport":
        methods = []
        for rec in records:
            if rec["method"] not in methods:
                methods.append(rec["method"])
        aggregates = {}
        for method in methods:
            rows = [r for r in records if r["method"] == method]
            aggregates[method] = {
                m: aggregate(r[m] for r in rows) for m in METRIC_NAMES
            }
        stats = {}
        if len(methods) >= 2:
            for m in METRIC_NAMES:
                grouped = {
                    method: [r[m] for r in records if r["method"] == method]
                    for method in methods
                }
                stats[m] = compare_methods(grouped, alpha)
        return cls(records=list(records), aggregates=aggregates, stats=stats)
