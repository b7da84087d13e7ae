"""Haar transform exactness: hand values, round trips, energy, linearity."""

import numpy as np
import pytest

from awgunet import ops
from awgunet.autodiff import Tensor
from awgunet.exceptions import ShapeError
from awgunet.gradcheck import max_relative_error
from awgunet.wavelet import (WaveletDecomposition, dwt_haar_forward,
                             dwt_haar_inverse)


def test_constant_block_has_no_detail():
    x = Tensor(np.ones((1, 1, 2, 2)))
    dec = dwt_haar_forward(x)
    ll, lh, hl, hh = dec.tensor.data.ravel()
    assert ll == 2.0 and lh == 0.0 and hl == 0.0 and hh == 0.0


def test_hand_block_1234():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
    dec = dwt_haar_forward(x)
    np.testing.assert_allclose(dec.tensor.data.ravel(), [5.0, -1.0, -2.0, 0.0])


def test_subband_layout_and_views(rng):
    x = Tensor(rng.standard_normal((1, 3, 4, 4)))
    dec = dwt_haar_forward(x)
    assert dec.tensor.shape == (1, 12, 2, 2)
    assert dec.channels_in == 3
    np.testing.assert_array_equal(dec.subband("LL"), dec.tensor.data[:, :3])
    np.testing.assert_array_equal(dec.subband("HH"), dec.tensor.data[:, 9:])


def test_odd_dimension_rejected():
    with pytest.raises(ShapeError, match="even"):
        dwt_haar_forward(Tensor(np.zeros((1, 1, 3, 4))))


def test_roundtrip_small(rng):
    x = Tensor(rng.standard_normal((1, 2, 8, 8)), dtype=np.float64)
    rt = dwt_haar_inverse(dwt_haar_forward(x))
    assert np.abs(rt.data - x.data).max() < 1e-6


def test_all_zero_decomposition_inverts_to_zero():
    dec = WaveletDecomposition(Tensor(np.zeros((1, 4, 2, 2))))
    np.testing.assert_array_equal(dwt_haar_inverse(dec).data,
                                  np.zeros((1, 1, 4, 4)))


def test_ll_only_constant_decomposition():
    # A constant image v has LL = 2v and zero detail; inverting that
    # synthetic decomposition must give back the constant image.
    v = 0.75
    bands = np.zeros((1, 4, 3, 3))
    bands[:, 0] = 2 * v
    out = dwt_haar_inverse(WaveletDecomposition(Tensor(bands)))
    np.testing.assert_allclose(out.data, v, atol=1e-7)


def test_linearity(rng):
    x = Tensor(rng.standard_normal((1, 2, 6, 6)), dtype=np.float64)
    y = Tensor(rng.standard_normal((1, 2, 6, 6)), dtype=np.float64)
    a, b = 1.7, -0.3
    combo = dwt_haar_forward(Tensor(a * x.data + b * y.data)).tensor.data
    parts = (a * dwt_haar_forward(x).tensor.data
             + b * dwt_haar_forward(y).tensor.data)
    np.testing.assert_allclose(combo, parts, atol=1e-12)


def test_energy_preservation(rng):
    for _ in range(20):
        shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4)),
                 2 * int(rng.integers(1, 9)), 2 * int(rng.integers(1, 9)))
        x = Tensor(rng.standard_normal(shape), dtype=np.float64)
        dec = dwt_haar_forward(x)
        ein = (x.data ** 2).sum()
        eout = (dec.tensor.data ** 2).sum()
        assert abs(eout - ein) / ein < 1e-6


def test_gradient_is_transpose_operator(rng):
    # Linear map: analytic backward equals the adjoint; the finite
    # difference match is essentially exact.
    x = Tensor(rng.standard_normal((1, 2, 6, 6)), dtype=np.float64)
    w = Tensor(np.random.default_rng(77).standard_normal((1, 8, 3, 3)),
               dtype=np.float64)
    err = max_relative_error(
        lambda: ops.sum_all(ops.mul_elementwise(dwt_haar_forward(x).tensor, w)),
        [x])
    assert err < 1e-6


def test_inverse_gradient(rng):
    d = Tensor(rng.standard_normal((1, 8, 3, 3)), dtype=np.float64)
    w = Tensor(np.random.default_rng(78).standard_normal((1, 2, 6, 6)),
               dtype=np.float64)
    err = max_relative_error(
        lambda: ops.sum_all(ops.mul_elementwise(
            dwt_haar_inverse(WaveletDecomposition(d)), w)),
        [d])
    assert err < 1e-6
