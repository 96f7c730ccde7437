"""Smoke tests for the python bindings."""

import math

import numpy as np
import pytest

import cmaseg


def test_softmax_rows_sum_to_one():
    x = np.random.default_rng(0).normal(size=(4, 6))
    y = cmaseg.softmax(x, axis=1)
    assert y.shape == (4, 6)
    assert np.allclose(y.sum(axis=1), 1.0)
    assert (y > 0).all()


def test_matmul_matches_numpy():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    assert np.allclose(cmaseg.matmul(a, b), a @ b, atol=1e-12)


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 5, 5))
    k = np.ones((1, 1, 1, 1))
    assert np.allclose(cmaseg.conv2d(x, k, stride=1, padding=0), x)


def test_bilinear_resize_constant():
    x = np.full((2, 3, 3), 1.5)
    y = cmaseg.bilinear_resize(x, 6, 5)
    assert y.shape == (2, 6, 5)
    assert np.allclose(y, 1.5)


def test_metrics_conventions():
    a = np.zeros((4, 4), dtype=np.uint8)
    b = np.zeros((4, 4), dtype=np.uint8)
    a[1:3, 1:3] = 1
    assert cmaseg.region_similarity(a, a) == 1.0
    assert cmaseg.region_similarity(a, b) == 0.0
    assert cmaseg.region_similarity(b, b) == 1.0
    assert cmaseg.contour_accuracy(a, a, tol=1) == 1.0
    assert cmaseg.default_f_tolerance(64, 64) == 1


def test_losses():
    logits = np.array([0.0])
    targets = np.array([1.0])
    want = 0.25 * 0.25 * math.log(2.0)
    assert abs(cmaseg.focal_loss(logits, targets, alpha=0.25, gamma=2.0) - want) < 1e-12

    gt = np.array([[1.0, 0.0], [0.0, 1.0]])
    saturated = np.where(gt > 0, 1000.0, -1000.0)
    assert abs(cmaseg.dice_loss(saturated, gt, eps=1.0)) < 1e-12


def test_self_affinity_plain_single_token():
    rng = np.random.default_rng(3)
    d = 4
    x = rng.normal(size=(1, d))
    wq, wk, wv = (rng.normal(size=(d, d)) for _ in range(3))
    out = cmaseg.self_affinity_plain(x, wq, wk, wv, n_heads=1)
    assert np.allclose(out, x @ wv, atol=1e-12)


def test_synthetic_video():
    video = cmaseg.generate_synthetic_video("circle", canvas=64, frames=3, seed=7)
    assert video["frames"].shape == (3, 64, 64, 3)
    assert video["masks"].shape == (3, 64, 64)
    assert video["masks"].any(axis=(1, 2)).all()  # referent visible in every frame
    words = video["expression"].split()
    assert words[0] == "the" and "circle" in words and "moving" in words
    assert set(words) <= set(cmaseg.grammar_tokens())

    again = cmaseg.generate_synthetic_video("circle", canvas=64, frames=3, seed=7)
    assert (video["frames"] == again["frames"]).all()


def test_grad_check_ops():
    assert cmaseg.grad_check_ops(seed=11) < 1e-4


def test_error_type():
    with pytest.raises(cmaseg.CmasegError):
        cmaseg.matmul(np.zeros((2, 3)), np.zeros((2, 3)))
