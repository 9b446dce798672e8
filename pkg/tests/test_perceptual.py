import numpy as np
import pytest
import torch

from rsrdiff.perceptual import FeatureBank, perceptual_proxy, proxy_distance_torch


def test_identical_inputs_zero(rng):
    a = rng.random((32, 32))
    assert perceptual_proxy(a, a) == 0.0


def test_symmetry(rng):
    a = rng.random((32, 32))
    b = rng.random((32, 32))
    assert abs(perceptual_proxy(a, b) - perceptual_proxy(b, a)) <= 1e-12


def test_nonnegative(rng):
    for _ in range(5):
        a = rng.random((24, 24))
        b = rng.random((24, 24))
        assert perceptual_proxy(a, b) >= 0.0


def test_dc_offset_invariance(rng):
    # zero-mean filters cancel a shared constant shift in the first layer
    a = rng.random((32, 32))
    assert perceptual_proxy(a, a + 0.3) < 1e-12
    assert perceptual_proxy(a + 0.7, a) < 1e-12


def test_noise_monotonicity():
    rng = np.random.default_rng(99)
    wins = 0
    for _ in range(100):
        a = rng.random((24, 24))
        weak = a + 0.02 * rng.standard_normal(a.shape)
        strong = a + 0.2 * rng.standard_normal(a.shape)
        if perceptual_proxy(a, strong) > perceptual_proxy(a, weak):
            wins += 1
    assert wins >= 95


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        perceptual_proxy(np.zeros((16, 16)), np.zeros((16, 17)))


def test_too_small_rejected():
    with pytest.raises(ValueError):
        perceptual_proxy(np.zeros((3, 3)), np.zeros((3, 3)))


def test_deterministic(rng):
    a = rng.random((16, 16))
    b = rng.random((16, 16))
    assert perceptual_proxy(a, b) == perceptual_proxy(a, b)


def test_bank_seed_changes_distance(rng):
    a = rng.random((16, 16))
    b = rng.random((16, 16))
    d1 = perceptual_proxy(a, b, bank=FeatureBank(seed=1))
    d2 = perceptual_proxy(a, b, bank=FeatureBank(seed=2))
    assert d1 != d2


def test_differentiable_through_torch(rng):
    a = torch.from_numpy(rng.random((1, 1, 16, 16))).requires_grad_(True)
    b = torch.from_numpy(rng.random((1, 1, 16, 16)))
    dist = proxy_distance_torch(a, b)
    dist.backward()
    grad = a.grad.numpy()
    assert np.all(np.isfinite(grad))
    assert np.abs(grad).max() > 0
