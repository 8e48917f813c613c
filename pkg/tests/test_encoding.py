import numpy as np
import pytest

from voldiff import kernels
from voldiff.encoding import (EncodingError, basis_lipschitz, encoded_width, frame_code, harmonic_basis,
                              init_motion_coefficients, normalized_time, positional_encoding)
from voldiff.nn import tensor as tt


def test_pe_zero_input():
    np.testing.assert_allclose(positional_encoding(np.array([0.0]), 1), [0.0, 0.0, 1.0], atol=0)


def test_pe_unit_input_two_frequencies():
    out = positional_encoding(np.array([1.0]), 2)
    np.testing.assert_allclose(out, [1.0, 0.0, -1.0, 0.0, 1.0], atol=1e-14)


def test_pe_width():
    assert encoded_width(3, 10) == 63
    assert positional_encoding(np.zeros((5, 3)), 10).shape == (5, 63)


def test_pe_matches_direct_formula():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(20, 3))
    L = 10
    ref = [x]
    for l in range(L):
        a = (2.0 ** l) * np.pi * x
        ref.append(np.stack([np.sin(a), np.cos(a)], axis=-1).reshape(20, -1))
    np.testing.assert_allclose(positional_encoding(x, L), np.concatenate(ref, axis=1), atol=1e-12)


def test_pe_kernel_forms_agree():
    x = np.random.default_rng(1).uniform(-1, 1, size=(300, 3))
    a = kernels.fourier_features_numba(x, 10, np.empty((300, 63)))
    b = kernels.fourier_features_numpy(x, 10, np.empty((300, 63)))
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_pe_grad_path_equals_no_grad_path():
    x = np.random.default_rng(2).uniform(-1, 1, size=(7, 4))
    t = tt.Tensor(x, requires_grad=True)
    np.testing.assert_allclose(positional_encoding(t, 6).data, positional_encoding(x, 6), atol=1e-12)


def test_pe_deterministic():
    x = np.random.default_rng(3).normal(size=(50, 3))
    np.testing.assert_array_equal(positional_encoding(x, 10), positional_encoding(x, 10))


def test_pe_errors():
    with pytest.raises(EncodingError):
        positional_encoding(np.array([np.nan]), 2)
    with pytest.raises(EncodingError):
        positional_encoding(np.array([0.0]), 0)


def test_harmonic_basis_values():
    np.testing.assert_allclose(harmonic_basis(0.0, 6), [1, 0, 0, 1, 0, 1], atol=1e-15)
    np.testing.assert_allclose(harmonic_basis(0.5, 6), [1, 0.5, 0, -1, 0, 1], atol=1e-15)
    diff = harmonic_basis(1.0, 6) - harmonic_basis(0.0, 6)
    np.testing.assert_allclose(diff, [0, 1, 0, 0, 0, 0], atol=1e-14)


@pytest.mark.parametrize("bad", [-0.1, 1.01])
def test_harmonic_basis_domain(bad):
    with pytest.raises(EncodingError):
        harmonic_basis(bad, 6)


@pytest.mark.parametrize("p", [1, 3, 0])
def test_harmonic_basis_size_must_be_even(p):
    with pytest.raises(EncodingError):
        harmonic_basis(0.2, p)


def test_normalized_time_spans_unit_interval():
    t = normalized_time(np.arange(10), 10)
    assert t[0] == 0.0 and t[-1] == 1.0
    with pytest.raises(EncodingError):
        normalized_time(0, 1)
    with pytest.raises(EncodingError):
        normalized_time(10, 10)


def test_frame_code_zero_and_constant():
    T = 40
    assert np.all(frame_code(np.arange(T), T, np.zeros((6, 17))) == 0)
    g = np.zeros((6, 17))
    g[0] = np.arange(17)
    z = frame_code(np.arange(T), T, g)
    np.testing.assert_array_equal(z, np.broadcast_to(np.arange(17.0), (T, 17)))


def test_frame_code_is_basis_times_gamma():
    g = np.random.default_rng(5).normal(size=(6, 17))
    z = frame_code(13, 50, g)
    np.testing.assert_allclose(z, harmonic_basis(13 / 49, 6) @ g, atol=1e-15)


def test_frame_code_lipschitz_bound():
    rng = np.random.default_rng(6)
    lb = basis_lipschitz(6)
    # independent bound: |dB/dt|^2 = 1 + (2π)^2 + (4π)^2 for the default basis
    assert abs(lb - np.sqrt(1 + (2 * np.pi) ** 2 + (4 * np.pi) ** 2)) < 1e-12
    for T in (32, 96, 500):
        g = rng.normal(size=(6, 17))
        z = frame_code(np.arange(T), T, g)
        step = np.linalg.norm(np.diff(z, axis=0), axis=1).max()
        assert step <= lb * np.linalg.norm(g, 2) / (T - 1) + 1e-12


def test_frame_code_gradient_reaches_gamma():
    g = tt.Tensor(np.random.default_rng(7).normal(size=(6, 17)), requires_grad=True)
    z = frame_code(np.array([3, 9]), 20, g)
    tt.backward(tt.tsum(z))
    B = harmonic_basis(np.array([3, 9]) / 19, 6)
    np.testing.assert_allclose(g.grad, np.repeat(B.sum(0)[:, None], 17, axis=1), atol=1e-12)


def test_init_motion_coefficients_scale():
    g = init_motion_coefficients(np.random.default_rng(0), 6, 17)
    assert g.shape == (6, 17)
    assert 0.005 < g.std() < 0.015
