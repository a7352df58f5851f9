import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lionxa import autodiff as ad
from lionxa.errors import ShapeError
from lionxa.optim import SGD, Adam, Schedule, lr_at, set_lr


def test_multistep():
    s = Schedule("multistep", 2.5e-3, 100000, (80000, 90000), 0.1)
    assert lr_at(s, 0) == 2.5e-3
    assert lr_at(s, 79999) == 2.5e-3
    assert lr_at(s, 85000) == pytest.approx(2.5e-4, rel=1e-12)
    assert lr_at(s, 90000) == pytest.approx(2.5e-5, rel=1e-12)


@given(st.floats(1e-6, 1.0), st.integers(1, 10**6))
def test_poly_bounds(base, n):
    s = Schedule("poly", base, n, power=0.9)
    assert lr_at(s, 0) == base
    assert lr_at(s, n) == 0.0
    assert 0.0 <= lr_at(s, n // 2) <= base


def test_unknown_schedule():
    with pytest.raises(ValueError):
        lr_at(Schedule("cosine", 1.0), 0)


def test_sgd_plain_step():
    p = ad.Parameter(np.array(3.0))
    ad.backward(ad.mul(p, p))
    SGD([p], 0.1, momentum=0.0).step()
    assert float(p.data) == pytest.approx(2.4)


def test_sgd_momentum():
    p = ad.Parameter(np.array([1.0]))
    opt = SGD([p], 0.1, momentum=0.9)
    opt.step([np.array([1.0])])
    opt.step([np.array([1.0])])
    assert p.data[0] == pytest.approx(1.0 - 0.1 - 0.19)


def test_accumulation_equivalence(rng):
    x1, x2 = rng.normal(size=3), rng.normal(size=3)
    w0 = rng.normal(size=3)

    def loss(p, x):
        return ad.sum_(ad.mul(ad.mul(p, p), x))

    a = ad.Parameter(w0)
    ad.backward(loss(a, x1))
    ad.backward(loss(a, x2))
    SGD([a], 0.05).step()
    b = ad.Parameter(w0)
    ad.backward(loss(b, x1) + loss(b, x2))
    SGD([b], 0.05).step()
    assert np.array_equal(a.data, b.data)


@given(st.lists(st.floats(-10, 10).filter(lambda g: abs(g) > 1e-3), min_size=1, max_size=6), st.floats(1e-5, 1e-1))
def test_adam_first_step(grads, lr):
    g = np.array(grads)
    p = ad.Parameter(np.zeros_like(g))
    Adam([p], lr).step([g])
    assert np.allclose(p.data, -lr * np.sign(g), atol=1e-9)


def test_adam_missing_grad_is_zero():
    p = ad.Parameter(np.ones(2))
    Adam([p], 0.1).step([None])
    assert np.array_equal(p.data, np.ones(2))


def test_shape_check():
    p = ad.Parameter(np.ones(2))
    with pytest.raises(ShapeError):
        SGD([p], 0.1).step([np.ones(3)])
    with pytest.raises(ShapeError):
        Adam([p], 0.1).step([])


def test_set_lr():
    opt = SGD([ad.Parameter(np.ones(1))], 1.0, schedule=Schedule("multistep", 1.0, 10, (5,), 0.5))
    assert set_lr(opt, 6) == 0.5 and opt.lr == 0.5
