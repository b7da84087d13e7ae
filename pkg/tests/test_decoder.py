"""Decoder blocks: fixed filters, anti-aliased upsampling, conv block."""

import numpy as np
import pytest

from awgunet import ops
from awgunet.autodiff import GradientTape, Tensor
from awgunet.decoder import (ConvBlock, FixedFilterBank, UpsampleBlock,
                             gaussian_kernel, lanczos_kernel, upsample_fixed)
from awgunet.exceptions import ConfigError
from awgunet.gradcheck import assert_gradients_close
from awgunet.optim import ParameterStore, adam_step


def brute_force_upsample(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Independent reference: loop-based NN 2x expansion + edge-padded conv."""
    h, w = x.shape
    up = np.zeros((2 * h, 2 * w))
    for i in range(2 * h):
        for j in range(2 * w):
            up[i, j] = x[i // 2, j // 2]
    k = kernel.shape[0]
    r = k // 2
    out = np.zeros_like(up)
    for i in range(2 * h):
        for j in range(2 * w):
            acc = 0.0
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    ii = min(max(i + di, 0), 2 * h - 1)
                    jj = min(max(j + dj, 0), 2 * w - 1)
                    acc += kernel[di + r, dj + r] * up[ii, jj]
            out[i, j] = acc
    return out


def laplacian_energy(a: np.ndarray) -> float:
    kern = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64)
    h, w = a.shape
    acc = np.zeros((h - 2, w - 2))
    for i in range(3):
        for j in range(3):
            acc += kern[i, j] * a[i:i + h - 2, j:j + w - 2]
    return float((acc ** 2).sum())


# -- fixed kernels --------------------------------------------------------


def test_kernels_sum_to_one():
    assert abs(gaussian_kernel(1.0).sum() - 1.0) < 1e-6
    assert abs(gaussian_kernel(2.5).sum() - 1.0) < 1e-6
    assert abs(lanczos_kernel().sum() - 1.0) < 1e-6


def test_kernels_flip_symmetric():
    for k in (gaussian_kernel(1.0), lanczos_kernel()):
        np.testing.assert_allclose(k, k[::-1, :], atol=1e-12)
        np.testing.assert_allclose(k, k[:, ::-1], atol=1e-12)
        assert k.shape == (5, 5)


def test_lanczos_actually_smooths():
    # All five taps must carry mass, otherwise the kernel cannot anti-alias.
    k = lanczos_kernel()
    assert np.all(k > 0)
    assert k[2, 2] == k.max()


def test_gaussian_sigma_validated():
    with pytest.raises(ConfigError):
        gaussian_kernel(0.0)


def test_bank_excluded_from_store_and_training(rng):
    store = ParameterStore()
    bank = FixedFilterBank(sigma=1.0)
    block = UpsampleBlock(store, "up", 2, 4, bank, np.random.default_rng(0))
    gauss_before = bank.gaussian.copy()
    lanc_before = bank.lanczos.copy()
    assert all("gaussian" not in n and "lanczos" not in n for n in store.names())

    x = Tensor(rng.standard_normal((1, 2, 4, 4)).astype(np.float32),
               requires_grad=True)
    for t in range(1, 11):
        with GradientTape() as tape:
            out = ops.sum_all(block(store, x))
        tape.backward(out)
        adam_step(store, lr=1e-2, t=t)
    np.testing.assert_array_equal(bank.gaussian, gauss_before)
    np.testing.assert_array_equal(bank.lanczos, lanc_before)


# -- fixed upsampling ------------------------------------------------------


def test_constant_preservation_both_kernels():
    bank = FixedFilterBank()
    x = Tensor(np.full((1, 2, 3, 5), 0.37, dtype=np.float32))
    for kernel in (bank.gaussian, bank.lanczos):
        out = upsample_fixed(x, kernel)
        assert out.shape == (1, 2, 6, 10)
        assert np.abs(out.data - 0.37).max() < 1e-6


def test_single_pixel_against_brute_force():
    bank = FixedFilterBank()
    x = Tensor(np.ones((1, 1, 1, 1), dtype=np.float64))
    for kernel in (bank.gaussian, bank.lanczos):
        got = upsample_fixed(x, kernel).data[0, 0]
        want = brute_force_upsample(np.ones((1, 1)), kernel)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_random_input_against_brute_force(rng):
    bank = FixedFilterBank()
    x2d = rng.standard_normal((4, 5))
    x = Tensor(x2d[None, None], dtype=np.float64)
    for kernel in (bank.gaussian, bank.lanczos):
        got = upsample_fixed(x, kernel).data[0, 0]
        want = brute_force_upsample(x2d, kernel)
        np.testing.assert_allclose(got, want, atol=1e-10)


def test_upsample_fixed_gradients(rng):
    bank = FixedFilterBank()
    x = Tensor(rng.standard_normal((1, 2, 4, 4)), dtype=np.float64)
    w = Tensor(np.random.default_rng(60).standard_normal((1, 2, 8, 8)),
               dtype=np.float64)
    assert_gradients_close(
        lambda: ops.sum_all(ops.mul_elementwise(
            upsample_fixed(x, bank.lanczos), w)), [x])


def test_antialiasing_beats_nearest_neighbor():
    bank = FixedFilterBank()
    for size in (8, 16):
        cb = (np.indices((size, size)).sum(axis=0) % 2).astype(np.float32)
        x = Tensor(cb[None, None])
        nn_energy = laplacian_energy(
            ops.nearest_upsample2x(x).data[0, 0].astype(np.float64))
        for kernel in (bank.gaussian, bank.lanczos):
            smooth = upsample_fixed(x, kernel).data[0, 0].astype(np.float64)
            assert laplacian_energy(smooth) < nn_energy


# -- upsample block --------------------------------------------------------


def test_upsample_block_doubles_even_and_odd(rng):
    store = ParameterStore()
    bank = FixedFilterBank()
    block = UpsampleBlock(store, "up", 3, 6, bank, np.random.default_rng(1))
    for h, w in ((4, 4), (5, 7), (3, 8)):
        x = Tensor(rng.standard_normal((1, 3, h, w)).astype(np.float32))
        assert block(store, x).shape == (1, 6, 2 * h, 2 * w)


def test_upsample_block_constant_split():
    # Identity 1x1 mix and zeroed transposed conv: first half of the
    # output channels carries the constant, second half is zero.
    store = ParameterStore()
    bank = FixedFilterBank()
    block = UpsampleBlock(store, "up", 2, 4, bank, np.random.default_rng(2))
    mix = store["up.mix.weight"]
    mix.data = np.eye(2, dtype=np.float32).reshape(2, 2, 1, 1)
    store["up.mix.bias"].data[:] = 0.0
    store["up.tc.weight"].data[:] = 0.0
    store["up.tc.bias"].data[:] = 0.0
    v = 0.81
    x = Tensor(np.full((1, 2, 3, 3), v, dtype=np.float32))
    out = block(store, x)
    np.testing.assert_allclose(out.data[:, :2], v, atol=1e-6)
    np.testing.assert_allclose(out.data[:, 2:], 0.0, atol=0.0)


def test_upsample_block_concat_fusion(rng):
    store = ParameterStore()
    bank = FixedFilterBank()
    block = UpsampleBlock(store, "up", 3, 6, bank, np.random.default_rng(3),
                          fusion="concat")
    x = Tensor(rng.standard_normal((2, 3, 4, 4)).astype(np.float32))
    assert block(store, x).shape == (2, 6, 8, 8)
    assert store["up.mix.weight"].shape == (3, 6, 1, 1)


def test_upsample_block_gradients(rng):
    store = ParameterStore()
    bank = FixedFilterBank()
    block = UpsampleBlock(store, "up", 2, 4, bank, np.random.default_rng(4),
                          dtype=np.float64)
    x = Tensor(rng.standard_normal((1, 2, 3, 3)), dtype=np.float64)
    w = Tensor(np.random.default_rng(61).standard_normal((1, 4, 6, 6)),
               dtype=np.float64)
    wrt = [x] + [store[n] for n in store.names()]
    assert_gradients_close(
        lambda: ops.sum_all(ops.mul_elementwise(block(store, x), w)), wrt)


# -- conv block ------------------------------------------------------------


def test_conv_block_shape_contract(rng):
    store = ParameterStore()
    block = ConvBlock(store, "cb", 5, 8, np.random.default_rng(5))
    x = Tensor(rng.standard_normal((2, 5, 6, 7)).astype(np.float32))
    assert block(store, x).shape == (2, 8, 6, 7)


def test_conv_block_zeroed_convs_give_rectified_beta(rng):
    store = ParameterStore()
    block = ConvBlock(store, "cb", 3, 4, np.random.default_rng(6))
    for k in (5, 3, 1):
        store[f"cb.branch{k}.weight"].data[:] = 0.0
    store["cb.fuse.weight"].data[:] = 0.0
    beta = np.array([0.7, -0.3, 1.2, -2.0], dtype=np.float32)
    store["cb.fuse.beta"].data[:] = beta
    x = Tensor(rng.standard_normal((1, 3, 5, 5)).astype(np.float32))
    out = block(store, x)
    expected = np.maximum(beta, 0.0)
    for c in range(4):
        np.testing.assert_allclose(out.data[0, c], expected[c], atol=1e-6)


def test_conv_block_requires_even_width():
    store = ParameterStore()
    with pytest.raises(ConfigError, match="even"):
        ConvBlock(store, "cb", 3, 5, np.random.default_rng(7))


def test_conv_block_gradients(rng):
    store = ParameterStore()
    block = ConvBlock(store, "cb", 2, 4, np.random.default_rng(8),
                      dtype=np.float64)
    x = Tensor(rng.standard_normal((1, 2, 4, 4)), dtype=np.float64)
    w = Tensor(np.random.default_rng(62).standard_normal((1, 4, 4, 4)),
               dtype=np.float64)
    wrt = [x] + [store[n] for n in store.names()]
    assert_gradients_close(
        lambda: ops.sum_all(ops.mul_elementwise(block(store, x), w)), wrt)
