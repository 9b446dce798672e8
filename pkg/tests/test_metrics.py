import math

import numpy as np
import pytest
from scipy import stats as scipy_stats

from rsrdiff.metrics import (
    MetricReport,
    aggregate,
    bootstrap_ci,
    compare_methods,
    dunn_bonferroni,
    evaluate_pair,
    gmsd,
    kruskal_wallis,
    psnr,
    ssim,
    write_report_csv,
)

from conftest import gmsd_reference, ssim_reference

KW_HAND_DERIVED = 3.857142857142854  # 27/7 for ranks {1..6} split in halves


def test_psnr_known_mse():
    gt = np.zeros((10, 10))
    pred = np.full((10, 10), 0.1)  # MSE exactly 0.01
    assert psnr(pred, gt, 1.0) == pytest.approx(20.0, abs=1e-12)


def test_psnr_identical_infinite():
    img = np.random.default_rng(0).random((8, 8))
    assert psnr(img, img) == math.inf


def test_psnr_translation_invariant(rng):
    a = rng.random((8, 8))
    b = rng.random((8, 8))
    assert psnr(a + 0.3, b + 0.3) == pytest.approx(psnr(a, b), rel=1e-12)


def test_psnr_validation():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.zeros((4, 4)), data_range=0.0)


def test_ssim_identical_is_one(rng):
    img = rng.random((16, 16))
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)


def test_ssim_symmetric(rng):
    a = rng.random((16, 16))
    b = rng.random((16, 16))
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-12


def test_ssim_constant_vs_noise_near_zero():
    rng = np.random.default_rng(11)
    for _ in range(20):
        a = np.full((16, 16), 0.5)
        b = rng.random((16, 16))
        assert abs(ssim(a, b)) < 0.2


def test_ssim_too_small_rejected():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 10)), np.zeros((10, 10)))


def test_ssim_matches_brute_force(rng):
    for _ in range(2):
        a = rng.random((24, 24))
        b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(ssim_reference(a, b), abs=1e-6)


def test_gmsd_identical_zero(rng):
    img = rng.random((16, 16))
    assert gmsd(img, img) == pytest.approx(0.0, abs=1e-15)


def test_gmsd_constants_zero():
    a = np.full((12, 12), 0.2)
    b = np.full((12, 12), 0.9)
    assert gmsd(a, b) == pytest.approx(0.0, abs=1e-15)


def test_gmsd_symmetric(rng):
    a = rng.random((16, 16))
    b = rng.random((16, 16))
    assert abs(gmsd(a, b) - gmsd(b, a)) <= 1e-15


def test_gmsd_matches_brute_force(rng):
    for _ in range(2):
        a = rng.random((16, 16))
        b = np.clip(a + 0.2 * rng.standard_normal(a.shape), 0, 1)
        assert gmsd(a, b) == pytest.approx(gmsd_reference(a, b), abs=1e-6)


def test_gmsd_distinguishes_blur(rng):
    from scipy.ndimage import gaussian_filter

    img = rng.random((32, 32))
    mild = gaussian_filter(img, 0.5)
    heavy = gaussian_filter(img, 2.0)
    assert gmsd(heavy, img) > gmsd(mild, img)


def test_evaluate_pair_keys(rng):
    a = rng.random((16, 16))
    b = rng.random((16, 16))
    out = evaluate_pair(a, b)
    assert set(out) == {"psnr", "ssim", "gmsd", "perceptual"}


def test_kruskal_wallis_hand_example():
    h, p = kruskal_wallis([[1, 2, 3], [4, 5, 6]])
    assert h == pytest.approx(KW_HAND_DERIVED, abs=1e-12)
    assert 0 < p < 1


def test_kruskal_wallis_identical_groups():
    h, p = kruskal_wallis([[2, 2, 2], [2, 2, 2]])
    assert h == 0.0
    assert p == 1.0


def test_kruskal_wallis_permutation_invariance():
    h1, _ = kruskal_wallis([[3, 1, 2], [6, 4, 5]])
    h2, _ = kruskal_wallis([[1, 2, 3], [4, 5, 6]])
    assert h1 == pytest.approx(h2, abs=1e-14)


def test_kruskal_wallis_matches_scipy_with_ties():
    rng = np.random.default_rng(21)
    for _ in range(10):
        groups = [rng.integers(0, 6, size=rng.integers(5, 12)).astype(float) for _ in range(3)]
        if all(np.ptp(np.concatenate(groups)) == 0 for _ in [0]):
            continue
        h, p = kruskal_wallis(groups)
        ref = scipy_stats.kruskal(*groups)
        assert h == pytest.approx(ref.statistic, rel=1e-12)
        assert p == pytest.approx(ref.pvalue, rel=1e-12)


def test_kruskal_wallis_validation():
    with pytest.raises(ValueError):
        kruskal_wallis([[1, 2, 3]])
    with pytest.raises(ValueError):
        kruskal_wallis([[1, 2], []])


def test_dunn_identical_groups_all_one():
    p = dunn_bonferroni([[1, 1, 1], [1, 1, 1], [1, 1, 1]])
    assert np.array_equal(p, np.ones((3, 3)))


def test_dunn_symmetric_unit_diagonal(rng):
    groups = [rng.random(8), rng.random(10), rng.random(6)]
    p = dunn_bonferroni(groups)
    assert np.array_equal(p, p.T)
    assert np.array_equal(np.diag(p), np.ones(3))
    assert np.all((p >= 0) & (p <= 1))


def test_dunn_separated_groups_significant():
    rng = np.random.default_rng(5)
    a = rng.normal(0.0, 0.1, size=30)
    b = rng.normal(5.0, 0.1, size=30)
    p = dunn_bonferroni([a, b])
    assert p[0, 1] < 0.001


def test_bootstrap_constant_degenerate():
    lo, hi = bootstrap_ci([0.7] * 12, iterations=500, seed=1)
    assert lo == hi == 0.7


def test_bootstrap_deterministic(rng):
    sample = rng.random(30)
    assert bootstrap_ci(sample, seed=9) == bootstrap_ci(sample, seed=9)
    assert bootstrap_ci(sample, seed=9) != bootstrap_ci(sample, seed=10)


def test_bootstrap_brackets_mean(rng):
    sample = rng.normal(3.0, 1.0, size=100)
    lo, hi = bootstrap_ci(sample, seed=4)
    assert lo <= sample.mean() <= hi
    assert lo < hi


def test_bootstrap_validation():
    with pytest.raises(ValueError):
        bootstrap_ci([])
    with pytest.raises(ValueError):
        bootstrap_ci([1.0], level=1.5)


def test_compare_methods_gate():
    rng = np.random.default_rng(8)
    same = {"a": rng.normal(0, 1, 40), "b": rng.normal(0, 1, 40)}
    block = compare_methods(same)
    if block.p_value >= 0.05:
        assert block.dunn_p is None
    apart = {"a": rng.normal(0, 0.1, 40), "b": rng.normal(9, 0.1, 40)}
    block = compare_methods(apart)
    assert block.p_value < 0.05
    assert block.dunn_p is not None
    assert block.significant


def test_aggregate():
    mean, std = aggregate([1.0, 2.0, 3.0])
    assert mean == 2.0
    assert std == pytest.approx(1.0)
    assert aggregate([5.0]) == (5.0, 0.0)
    with pytest.raises(ValueError):
        aggregate([])


def _toy_records(rng):
    records = []
    for method, offset in (("base", 0.0), ("better", 4.0)):
        for i in range(12):
            records.append(
                {
                    "id": f"img-{i}",
                    "method": method,
                    "psnr": 20.0 + offset + rng.random(),
                    "ssim": 0.5 + offset / 20 + 0.01 * rng.random(),
                    "gmsd": 0.3 - offset / 40 + 0.01 * rng.random(),
                    "perceptual": 0.1 + 0.001 * rng.random(),
                }
            )
    return records


def test_metric_report_build(rng):
    report = MetricReport.build(_toy_records(rng))
    assert set(report.aggregates) == {"base", "better"}
    mean, std = report.aggregates["better"]["psnr"]
    assert 24.0 < mean < 25.1
    assert std > 0
    assert report.stats["psnr"].p_value < 0.05
    assert report.stats["psnr"].dunn_p is not None


def test_write_report_csv_round_trip(tmp_path, rng):
    import csv

    report = MetricReport.build(_toy_records(rng))
    path = tmp_path / "report.csv"
    write_report_csv(report, path)
    with open(path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["section", "id", "method", "psnr", "ssim", "gmsd", "perceptual"]
    sections = {r[0] for r in rows[1:]}
    assert sections == {"image", "aggregate", "stats"}
    for row in rows[1:]:
        if row[0] == "image":
            for cell in row[3:]:
                assert f"{float(cell):.9g}" == cell
    kw_rows = [r for r in rows if r[1] == "kw_h"]
    assert len(kw_rows) == 1
