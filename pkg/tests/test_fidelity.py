import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpfidelity.errors import DimensionError
from bpfidelity.fidelity import FidelityTerm, gradient, lipschitz, value
from bpfidelity.linops import (
    CirculantConv2D,
    Composite,
    DenseMatrix,
    Downsample2D,
    InpaintMask,
    gaussian_kernel,
    uniform_kernel,
)


def numeric_grad(f, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def dense_problem(seed=0, m=5, n=9):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    return A, DenseMatrix(A), rng.standard_normal(m), rng.standard_normal(n)


def test_ls_value_and_gradient_closed_form():
    A, op, y, x = dense_problem()
    f = FidelityTerm("ls", op, y)
    r = y - A @ x
    assert f.value(x) == pytest.approx(0.5 * r @ r)
    np.testing.assert_allclose(f.gradient(x), -A.T @ r, atol=1e-12)


def test_bp_value_matches_pseudo_inverse_form():
    A, op, y, x = dense_problem(1)
    P = np.linalg.pinv(A)
    f = FidelityTerm("bp", op, y)
    d = P @ y - P @ A @ x
    assert f.value(x) == pytest.approx(0.5 * d @ d, rel=1e-10)
    np.testing.assert_allclose(f.gradient(x), -(P @ y - P @ A @ x), atol=1e-10)


@pytest.mark.parametrize("variant,eps", [("ls", 0.0), ("bp", 0.0), ("bp", 0.05)])
def test_gradient_is_gradient_of_value(variant, eps):
    _, op, y, x = dense_problem(2)
    f = FidelityTerm(variant, op, y, eps=eps)
    np.testing.assert_allclose(f.gradient(x), numeric_grad(f.value, x), atol=1e-6)


def test_loaded_bp_hessian_norm_below_one():
    _, op, y, _ = dense_problem(3)
    f = FidelityTerm("bp", op, y, eps=0.1)
    H = np.stack([f.hessian_apply(e) for e in np.eye(op.n)], axis=1)
    assert np.linalg.eigvalsh(0.5 * (H + H.T)).max() < 1
    assert f.lipschitz == 1.0


def test_lipschitz_values():
    A, op, y, _ = dense_problem(4)
    assert lipschitz(FidelityTerm("bp", op, y)) == 1.0
    s = np.linalg.svd(A, compute_uv=False)
    assert lipschitz(FidelityTerm("ls", op, y)) == pytest.approx(s[0] ** 2, rel=1e-6)


def test_bp_zero_at_any_consistent_point():
    shape = (12, 12)
    op = Composite(Downsample2D(3, shape), CirculantConv2D(gaussian_kernel(7, 1.6), shape))
    rng = np.random.default_rng(5)
    x = rng.standard_normal(op.n)
    f = FidelityTerm("bp", op, op.apply(x))
    null = rng.standard_normal(op.n)
    null -= f.hessian_apply(null)
    assert abs(f.value(x + null)) < 1e-12
    assert np.abs(f.gradient(x + null)).max() < 1e-9


def test_module_functions_delegate():
    _, op, y, x = dense_problem(6)
    f = FidelityTerm("ls", op, y)
    assert value(f, x) == f.value(x)
    np.testing.assert_array_equal(gradient(f, x), f.gradient(x))


def test_bad_arguments():
    _, op, y, x = dense_problem(7)
    with pytest.raises(ValueError):
        FidelityTerm("l1", op, y)
    with pytest.raises(ValueError):
        FidelityTerm("ls", op, y, eps=0.1)
    with pytest.raises(ValueError):
        FidelityTerm("bp", op, y, eps=-1)
    with pytest.raises(DimensionError):
        FidelityTerm("ls", op, y[:-1])
    with pytest.raises(DimensionError):
        FidelityTerm("ls", op, y).value(x[:-1])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.95))
def test_inpainting_ls_and_bp_coincide(seed, ratio):
    rng = np.random.default_rng(seed)
    n = 64
    kept = rng.choice(n, max(1, int(ratio * n)), replace=False)
    op = InpaintMask(kept, n)
    y = rng.standard_normal(op.m) * 50
    x = rng.standard_normal(n) * 50
    ls = FidelityTerm("ls", op, y)
    bp = FidelityTerm("bp", op, y)
    assert ls.value(x) == bp.value(x)
    np.testing.assert_array_equal(ls.gradient(x), bp.gradient(x))


def test_circulant_bp_gradient_uses_fft_path():
    op = CirculantConv2D(uniform_kernel(3), (8, 8))
    rng = np.random.default_rng(8)
    y = rng.standard_normal(64)
    x = rng.standard_normal(64)
    A = op.to_dense()
    f = FidelityTerm("bp", op, y, eps=1e-3)
    ref = -A.T @ np.linalg.solve(A @ A.T + 1e-3 * np.eye(64), y - A @ x)
    np.testing.assert_allclose(f.gradient(x), ref, rtol=1e-7, atol=1e-9)
