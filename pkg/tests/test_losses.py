import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lionxa import autodiff as ad
from lionxa import losses as L
from lionxa.errors import ConfigError, EmptyHistogram, EmptyLoss, ShapeError
from lionxa.lidar_io import IGNORE
from lionxa.verify import GRAD_TOL, loss_cases

CASES = loss_cases()


@pytest.mark.parametrize("name", sorted(CASES))
@given(seed=st.integers(0, 2**32 - 1))
def test_loss_gradients(name, seed):
    fn, point = CASES[name](np.random.default_rng(seed))
    assert ad.grad_check(fn, point) < GRAD_TOL


def test_class_weights():
    assert L.class_weights([5])[0] == pytest.approx(1 / np.log(2.02))
    w = L.class_weights([90, 10])
    assert w[1] > w[0]
    with pytest.raises(EmptyHistogram):
        L.class_weights([0, 0])


@given(st.integers(2, 12), st.integers(1, 20))
def test_uniform_ce(c, n):
    labels = np.arange(n) % c
    assert float(L.seg_loss_3d(ad.Tensor(np.zeros((n, c))), labels).data) == pytest.approx(np.log(c), abs=1e-12)


def test_ce_ignores_and_weights(rng):
    logits = rng.normal(size=(4, 3))
    ls = logits - np.log(np.exp(logits).sum(1, keepdims=True))
    w = np.array([1.0, 2.0, 3.0])
    got = float(L.seg_loss_3d(ad.Tensor(logits), [0, IGNORE, 2, 1], w).data)
    assert got == pytest.approx(-(ls[0, 0] * 1 + ls[2, 2] * 3 + ls[3, 1] * 2) / 3)
    with pytest.raises(EmptyLoss):
        L.seg_loss_3d(ad.Tensor(logits), [IGNORE] * 4)
    with pytest.raises(ShapeError):
        L.seg_loss_3d(ad.Tensor(logits), [0, 1])


def test_seg2d_matches_flat(rng):
    logits = rng.normal(size=(2, 3, 4, 5))
    lab = rng.integers(-1, 5, size=(2, 3, 4))
    lab[0, 0, 0] = 1
    a = L.seg_loss_2d(ad.Tensor(logits), lab).data
    b = L.seg_loss_3d(ad.Tensor(logits.reshape(-1, 5)), lab.reshape(-1)).data
    assert a == b


def test_kl_properties(rng):
    p = rng.dirichlet(np.ones(5), size=7)
    assert float(L.kl_divergence(p, ad.Tensor(p)).data) == pytest.approx(0.0, abs=1e-15)
    q = rng.dirichlet(np.ones(5), size=7)
    ref = np.mean(np.sum(p * np.log(p / q), axis=1))
    assert float(L.kl_divergence(p, ad.Tensor(q)).data) == pytest.approx(ref)


def test_kl_target_is_detached(rng):
    p = ad.Parameter(rng.dirichlet(np.ones(4), size=3))
    q = ad.Parameter(rng.dirichlet(np.ones(4), size=3))
    ad.backward(L.kl_divergence(p, q))
    assert p.grad is None and q.grad is not None


def test_cross_modal_pairs(rng):
    a, b, c, d = (ad.Tensor(rng.dirichlet(np.ones(3), size=4)) for _ in range(4))
    got = float(L.cross_modal_loss(a, b, c, d).data)
    ref = float(L.kl_divergence(c, b).data + L.kl_divergence(a, d).data)
    assert got == pytest.approx(ref)


def test_bce_and_adversarial():
    half = ad.Tensor(np.full(3, 0.5))
    assert float(L.bce(half, 0).data) == pytest.approx(np.log(2), abs=1e-12)
    assert float(L.discriminator_loss(half, half, 1, 1).data) == pytest.approx(2 * np.log(2))
    assert float(L.generator_adv_loss(half, 0.07).data) == pytest.approx(0.07 * np.log(2))
    edge = ad.Tensor(np.array([0.0, 1.0]))
    assert np.isfinite(L.bce(edge, 1).data) and np.isfinite(L.bce(edge, 0).data)


def test_total_loss_skips_zero_terms():
    w = L.LossWeights(lambda_s=0.5, lambda_t=0.0)
    got = L.total_loss(ad.Tensor(1.0), ad.Tensor(2.0), None, ad.Tensor(np.nan), w)
    assert float(got.data) == 2.0


def test_supervised_with_targetlike(rng):
    def batch():
        return L.SegBatch(ad.Tensor(rng.normal(size=(5, 3))), rng.integers(0, 3, 5),
                          ad.Tensor(rng.normal(size=(1, 2, 2, 3))), rng.integers(0, 3, (1, 2, 2)))
    bs, bt = batch(), batch()
    got = float(L.supervised_loss(bs, bt, 0.5).data)
    one = lambda b: L.seg_loss_3d(b.logits_3d, b.labels_3d).data + 0.5 * L.seg_loss_2d(b.logits_2d, b.labels_2d).data
    assert got == pytest.approx(float(one(bs) + one(bt)))


def test_weights_validation():
    with pytest.raises(ConfigError):
        L.LossWeights(lambda_p=1.0)
    with pytest.raises(ConfigError):
        L.LossWeights(d2d_tp=-0.1)
    w = L.LossWeights(g2d_tp=0.1, lambda_s=0.2)
    assert w.adversarial and not w.without_adversarial().adversarial
    assert w.without_adversarial().lambda_s == 0.2
