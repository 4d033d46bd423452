"""Tensor core: op semantics, gradient rules vs finite differences, eigensolver."""

import numpy as np
import pytest

from mvx import numcore as nc
from mvx.errors import ContractError, DimensionError, NumericError

from helpers import assert_grad_close, finite_difference_grad


def test_exp_identity():
    out = nc.exp(nc.constant([0.0, 0.0]))
    assert np.array_equal(out.data, [1.0, 1.0])


def test_mul_forward_and_grad():
    a = nc.parameter([2.0, 3.0])
    b = nc.parameter([4.0, 5.0])
    out = nc.mul(a, b)
    assert np.array_equal(out.data, [8.0, 15.0])
    nc.backward(nc.sum_(out))
    assert np.array_equal(a.grad, b.data)
    assert np.array_equal(b.grad, a.data)


def test_sigmoid_gradient_matches_finite_difference():
    x = nc.parameter([0.0])
    nc.backward(nc.sum_(nc.sigmoid(x)))
    assert abs(x.grad[0] - 0.25) < 1e-12
    fd = finite_difference_grad(lambda: nc.sigmoid(x).data.sum(), x)
    assert abs(fd[0] - x.grad[0]) < 1e-6


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
def test_binary_op_gradients(op):
    rng = np.random.default_rng(11)
    a = nc.parameter(rng.uniform(-2, 2, size=(3, 4)))
    b = nc.parameter(rng.uniform(0.5, 2, size=(3, 4)))

    def loss():
        return nc.sum_(nc.square(nc.elementwise(op, a, b))).item()

    nc.backward(nc.sum_(nc.square(nc.elementwise(op, a, b))))
    for p in (a, b):
        fd = finite_difference_grad(loss, p)
        assert_grad_close(p.grad, fd, rel=1e-4, label=op)
        p.grad = None


@pytest.mark.parametrize("op", ["exp", "log", "tanh", "relu", "sigmoid", "square", "sqrt"])
def test_unary_op_gradients(op):
    rng = np.random.default_rng(7)
    raw = rng.uniform(-2, 2, size=(2, 5))
    if op in ("log", "sqrt"):
        raw = np.abs(raw) + 0.1
    if op == "relu":
        raw += np.where(np.abs(raw) < 0.05, 0.2, 0.0)  # keep clear of the kink
    a = nc.parameter(raw)

    def loss():
        return nc.sum_(nc.elementwise(op, a)).item()

    nc.backward(nc.sum_(nc.elementwise(op, a)))
    fd = finite_difference_grad(loss, a)
    assert_grad_close(a.grad, fd, rel=1e-4, label=op)


def test_softplus_abs_clip_gradients():
    rng = np.random.default_rng(13)
    a = nc.parameter(rng.uniform(-2, 2, size=(6,)) + 0.3)
    for fn in (nc.softplus, nc.absolute, lambda t: nc.clip(t, -1.5, 1.5)):
        a.grad = None
        nc.backward(nc.sum_(fn(a)))
        fd = finite_difference_grad(lambda: nc.sum_(fn(a)).item(), a)
        assert_grad_close(a.grad, fd, rel=1e-4)


def test_broadcast_vector_along_batch():
    a = nc.parameter(np.ones((4, 3)))
    b = nc.parameter(np.array([1.0, 2.0, 3.0]))
    out = a + b
    assert out.shape == (4, 3)
    nc.backward(nc.sum_(out))
    assert np.array_equal(b.grad, [4.0, 4.0, 4.0])
    assert np.array_equal(a.grad, np.ones((4, 3)))


def test_broadcast_rejects_bad_shapes():
    with pytest.raises(DimensionError):
        nc.add(nc.constant(np.ones((4, 3))), nc.constant(np.ones((2, 3))))
    with pytest.raises(DimensionError):
        nc.add(nc.constant(np.ones((4, 3))), nc.constant(np.ones((4, 1))))


def test_matmul_identity_and_hand_case():
    m = np.arange(9.0).reshape(3, 3)
    out = nc.matmul(nc.constant(np.eye(3)), nc.constant(m))
    assert np.array_equal(out.data, m)
    out2 = nc.matmul(nc.constant([[1.0, 2.0], [3.0, 4.0]]), nc.constant([[1.0], [1.0]]))
    assert np.array_equal(out2.data, [[3.0], [7.0]])
    with pytest.raises(DimensionError):
        nc.matmul(nc.constant(np.ones((2, 3))), nc.constant(np.ones((2, 3))))


def test_matmul_gradients_vs_finite_differences():
    rng = np.random.default_rng(3)
    a = nc.parameter(rng.normal(size=(4, 3)))
    b = nc.parameter(rng.normal(size=(3, 2)))

    def loss():
        return nc.sum_(nc.square(nc.matmul(a, b))).item()

    nc.backward(nc.sum_(nc.square(nc.matmul(a, b))))
    for p in (a, b):
        fd = finite_difference_grad(loss, p)
        assert_grad_close(p.grad, fd, rel=1e-5, label="matmul")


def test_reduce_examples():
    assert abs(nc.logsumexp(nc.constant([0.0, 0.0])).item() - np.log(2)) < 1e-12
    assert abs(nc.logsumexp(nc.constant([1000.0, 1000.0])).item() - (1000 + np.log(2))) < 1e-9
    out = nc.mean(nc.constant([[1.0, 2.0], [3.0, 4.0]]), axis=0)
    assert np.array_equal(out.data, [2.0, 3.0])


def test_logsumexp_equals_naive_for_small_inputs():
    rng = np.random.default_rng(5)
    x = rng.uniform(-10, 10, size=(4, 6))
    ours = nc.logsumexp(nc.constant(x), axis=1).data
    naive = np.log(np.sum(np.exp(x), axis=1))
    assert np.max(np.abs(ours - naive)) < 1e-12


def test_logsumexp_gradient():
    rng = np.random.default_rng(8)
    a = nc.parameter(rng.normal(size=(3, 5)))
    nc.backward(nc.sum_(nc.logsumexp(a, axis=1)))
    fd = finite_difference_grad(lambda: nc.logsumexp(a, axis=1).data.sum(), a)
    assert_grad_close(a.grad, fd, rel=1e-4)


def test_reduce_empty_axis_errors():
    with pytest.raises(DimensionError):
        nc.sum_(nc.constant(np.ones((3, 2))), axis=2)


def test_backward_requires_scalar():
    with pytest.raises(ContractError):
        nc.backward(nc.parameter(np.ones(3)))


def test_backward_accumulates_across_calls():
    w = nc.parameter([1.0, 2.0])
    loss = nc.sum_(nc.square(w))
    nc.backward(loss)
    assert np.array_equal(w.grad, [2.0, 4.0])
    nc.backward(loss)
    assert np.array_equal(w.grad, [4.0, 8.0])


def test_backward_through_shared_subexpression():
    # d/dx of (x*x + x*x) = 4x; the shared node must not double-run its rule
    x = nc.parameter([3.0])
    sq = nc.square(x)
    nc.backward(nc.sum_(sq + sq))
    assert np.array_equal(x.grad, [12.0])


def test_forward_determinism():
    rng = np.random.default_rng(21)
    x = rng.normal(size=(8, 8))
    w = rng.normal(size=(8, 4))
    a = nc.matmul(nc.tanh(nc.constant(x)), nc.constant(w)).data
    b = nc.matmul(nc.tanh(nc.constant(x)), nc.constant(w)).data
    assert a.tobytes() == b.tobytes()


def test_non_finite_raises_numeric_error():
    with pytest.raises(NumericError):
        nc.exp(nc.constant(np.full(3, 1e4)))


def test_log_floor_clamps_instead_of_error():
    out = nc.log(nc.constant([0.0]))
    assert np.isfinite(out.data).all()
    assert abs(out.item() - np.log(nc.EPS_FLOOR)) < 1e-12


def test_no_grad_suppresses_graph():
    w = nc.parameter([1.0])
    with nc.no_grad():
        out = nc.square(w)
    assert not out.requires_grad
    assert out.is_leaf


def test_concat_and_row_ops():
    a = nc.parameter(np.ones((2, 2)))
    b = nc.parameter(np.full((2, 1), 2.0))
    cat = nc.concat_cols([a, b])
    assert cat.shape == (2, 3)
    nc.backward(nc.sum_(cat * nc.constant(np.array([[1.0, 2, 3], [4, 5, 6]]))))
    assert np.array_equal(a.grad, [[1, 2], [4, 5]])
    assert np.array_equal(b.grad, [[3], [6]])
    m = nc.parameter(np.arange(6.0).reshape(3, 2))
    r = nc.row(m, 1)
    assert np.array_equal(r.data, [2.0, 3.0])
    nc.backward(nc.sum_(r))
    expect = np.zeros((3, 2))
    expect[1] = 1.0
    assert np.array_equal(m.grad, expect)


# -- symmetric eigendecomposition --------------------------------------------------


def test_sym_eig_diagonal():
    lam, vec = nc.sym_eig(nc.constant(np.diag([3.0, 1.0])))
    assert np.allclose(lam.data, [3.0, 1.0])
    assert np.allclose(np.abs(vec.data), np.eye(2))


def test_sym_eig_analytic_2x2():
    lam, _ = nc.sym_eig(nc.constant([[2.0, 1.0], [1.0, 2.0]]))
    assert np.allclose(lam.data, [3.0, 1.0], atol=1e-12)


def test_sym_eig_reconstruction_oracle():
    rng = np.random.default_rng(17)
    m = rng.normal(size=(8, 8))
    m = 0.5 * (m + m.T)
    lam, vec = nc.sym_eig(nc.constant(m))
    recon = vec.data @ np.diag(lam.data) @ vec.data.T
    assert np.abs(recon - m).max() < 1e-8
    # A.V = V.diag within 1e-8
    assert np.abs(m @ vec.data - vec.data @ np.diag(lam.data)).max() < 1e-8
    # independent oracle: numpy's eigensolver
    ref = np.linalg.eigvalsh(m)[::-1]
    assert np.abs(ref - lam.data).max() < 1e-10


def test_sym_eig_eigenvalue_sum_equals_trace():
    rng = np.random.default_rng(23)
    for d in (2, 5, 12):
        m = rng.normal(size=(d, d))
        m = 0.5 * (m + m.T)
        lam, _ = nc.sym_eig(nc.constant(m))
        assert abs(lam.data.sum() - np.trace(m)) < 1e-9


def test_sym_eig_rejects_asymmetric():
    with pytest.raises(ContractError):
        nc.sym_eig(nc.constant([[1.0, 2.0], [0.0, 1.0]]))


def test_sym_eig_eigenvalue_gradients():
    rng = np.random.default_rng(29)
    m = rng.normal(size=(4, 4))
    m = 0.5 * (m + m.T)
    a = nc.parameter(m)

    def loss():
        sym = nc.constant(0.5) * (a + nc.transpose(a))
        lam, _ = nc.sym_eig(sym)
        return nc.sum_(nc.square(lam)).item()

    sym = nc.constant(0.5) * (a + nc.transpose(a))
    lam, _ = nc.sym_eig(sym)
    nc.backward(nc.sum_(nc.square(lam)))
    fd = finite_difference_grad(loss, a)
    assert_grad_close(a.grad, fd, rel=1e-4, label="sym_eig.values")


def test_sym_eig_eigenvector_gradients():
    rng = np.random.default_rng(31)
    m = rng.normal(size=(3, 3))
    m = 0.5 * (m + m.T) + np.diag([3.0, 1.0, 0.2])  # well-separated spectrum
    a = nc.parameter(m)
    mix = nc.constant(rng.normal(size=(3, 3)))

    def build():
        sym = nc.constant(0.5) * (a + nc.transpose(a))
        _, vec = nc.sym_eig(sym)
        return nc.sum_(nc.square(nc.matmul(vec, mix)))

    nc.backward(build())
    fd = finite_difference_grad(lambda: build().item(), a)
    assert_grad_close(a.grad, fd, rel=1e-3, label="sym_eig.vectors")


def test_gradient_property_random_ops_in_range():
    # composite expression over the documented op set, inputs in [-2, 2]
    rng = np.random.default_rng(37)
    for trial in range(5):
        x = nc.parameter(rng.uniform(-2, 2, size=(3, 3)))
        y = nc.parameter(rng.uniform(0.5, 2, size=(3, 3)))

        def build():
            t = nc.tanh(x) * y + nc.sigmoid(x / y)
            t = nc.exp(nc.constant(0.3) * t) + nc.square(x)
            return nc.mean(nc.log(t + nc.constant(1.0)))

        nc.backward(build())
        for p in (x, y):
            fd = finite_difference_grad(lambda: build().item(), p)
            assert_grad_close(p.grad, fd, rel=1e-4, label=f"composite[{trial}]")
            p.grad = None
