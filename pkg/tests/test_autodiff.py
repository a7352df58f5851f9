import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import signal

from lionxa import autodiff as ad
from lionxa.errors import ShapeError
from lionxa.verify import GRAD_TOL, op_cases

OPS = op_cases()


@pytest.mark.parametrize("name", sorted(OPS))
@given(seed=st.integers(0, 2**32 - 1))
def test_op_gradients(name, seed):
    fn, point = OPS[name](np.random.default_rng(seed))
    assert ad.grad_check(fn, point) < GRAD_TOL


def test_grad_check_catches_wrong_rule():
    def bad_square(a):
        return ad._node(a.data ** 2, (a,), lambda g: (g * a.data,), "bad")

    x = np.array([1.0, -2.0, 3.0])
    assert ad.grad_check(lambda t: ad.sum_(bad_square(t)), x) > 0.5


def test_conv_matches_scipy(rng):
    x, w = rng.normal(size=(1, 5, 7, 2)), rng.normal(size=(3, 3, 2, 4))
    out = ad.conv2d(ad.Tensor(x), ad.Tensor(w)).data
    for co in range(4):
        ref = sum(signal.correlate2d(x[0, :, :, ci], w[:, :, ci, co], mode="same") for ci in range(2))
        assert np.allclose(out[0, :, :, co], ref)


def test_pool_and_upsample():
    x = np.arange(16.0).reshape(1, 4, 4, 1)
    assert ad.max_pool2d(ad.Tensor(x)).data[0, :, :, 0].tolist() == [[5, 7], [13, 15]]
    up = ad.upsample2d(ad.Tensor(np.array([[1.0, 2.0]]).reshape(1, 1, 2, 1))).data
    assert up[0, :, :, 0].tolist() == [[1, 1, 2, 2], [1, 1, 2, 2]]
    with pytest.raises(ShapeError):
        ad.max_pool2d(ad.Tensor(np.zeros((1, 3, 4, 1))))


@given(st.lists(st.floats(-700, 700), min_size=2, max_size=8))
def test_softmax_stable(row):
    x = ad.Tensor(np.array([row]))
    s = ad.softmax(x).data
    assert np.isfinite(s).all() and abs(s.sum() - 1) < 1e-12
    assert np.allclose(np.exp(ad.log_softmax(x).data), s)


def test_reuse_accumulates():
    x = ad.Parameter(np.array([2.0, 3.0]))
    ad.backward(ad.sum_(ad.mul(x, x) + x))
    assert x.grad.tolist() == [5.0, 7.0]
    ad.backward(ad.sum_(x))
    assert x.grad.tolist() == [6.0, 8.0]


def test_frozen_blocks_gradients():
    a, b = ad.Parameter(np.ones(2)), ad.Parameter(np.ones(2))
    with ad.frozen([a]):
        ad.backward(ad.sum_(ad.mul(a, b)))
    assert a.grad is None and b.grad.tolist() == [1.0, 1.0]
    assert a.requires_grad


def test_log_clamp():
    x = ad.Parameter(np.array([0.0, 1.0]))
    y = ad.log(x, eps=1e-12)
    assert np.isfinite(y.data).all()
    ad.backward(ad.sum_(y))
    assert x.grad.tolist() == [0.0, 1.0]


def test_detach_cuts_graph():
    x = ad.Parameter(np.ones(3))
    ad.backward(ad.sum_(ad.mul(x.detach(), 2.0)))
    assert x.grad is None


def test_gather_scatter_adjoint(rng):
    idx = np.array([0, 3, 3, -1, 1])
    a, b = rng.normal(size=(4, 2)), rng.normal(size=(5, 2))
    lhs = np.sum(ad.gather_rows(ad.Tensor(a), idx).data * b)
    rhs = np.sum(a * ad.scatter_rows(ad.Tensor(b), idx, 4).data)
    assert lhs == pytest.approx(rhs)


def test_shape_errors():
    with pytest.raises(ShapeError):
        ad.add(ad.Tensor(np.zeros(2)), ad.Tensor(np.zeros(3)))
    with pytest.raises(ShapeError):
        ad.matmul(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeError):
        ad.backward(ad.Parameter(np.zeros(2)))
    with pytest.raises(ShapeError):
        ad.gather_rows(ad.Tensor(np.zeros((2, 2))), [2])
