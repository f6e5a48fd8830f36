import math

import numpy as np
import pytest
from conftest import unit_rows
from hypothesis import given
from hypothesis import strategies as st

from bgbench import losses
from bgbench.errors import DegenerateInputError
from bgbench.losses import LossConfig


def cfg(kind, **kw):
    return LossConfig(kind=kind, **kw)


def ms_oracle(x, labels, alpha, beta, lam):
    total, anchors = 0.0, 0
    for i in range(len(x)):
        pos = [x[i] @ x[j] for j in range(len(x)) if j != i and labels[j] == labels[i]]
        neg = [x[i] @ x[j] for j in range(len(x)) if labels[j] != labels[i]]
        if not pos and not neg:
            continue
        anchors += 1
        total += math.log1p(sum(math.exp(-alpha * (s - lam)) for s in pos)) / alpha
        total += math.log1p(sum(math.exp(beta * (s - lam)) for s in neg)) / beta
    return total / anchors


def _batch(seed, n=8, d=5, k=3):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % k
    return unit_rows(rng.standard_normal((n, d))), labels, unit_rows(rng.standard_normal((k, d)))


# ---- examples ----


def test_contrastive_hand_example():
    x = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    # pos pair (0, 1): d = sqrt 2; neg pairs (0, 2): d = 2 -> 0, (1, 2): sqrt 2 -> 0 with neg_margin 1
    loss, _ = losses.contrastive_loss(x, [0, 0, 1], cfg("contrastive", pos_margin=0.0, neg_margin=1.0))
    assert loss == pytest.approx(math.sqrt(2.0))
    loss, _ = losses.contrastive_loss(x, [0, 0, 1], cfg("contrastive", pos_margin=0.0, neg_margin=1.5))
    assert loss == pytest.approx((1.5 - math.sqrt(2.0)) / 2 + math.sqrt(2.0))


def test_contrastive_zero_when_collapsed_and_separated():
    x = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]])
    loss, grad = losses.contrastive_loss(x, [0, 0, 1, 1], cfg("contrastive"))
    assert loss == 0.0
    np.testing.assert_array_equal(grad, 0.0)


def test_triplet_hand_example():
    x = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    # anchors 0 and 1 each have one triplet; d_ap = sqrt 2, d_an = 2 and sqrt 2
    loss, _ = losses.triplet_loss(x, [0, 0, 1], cfg("triplet", margin=0.1))
    assert loss == pytest.approx((0.0 + 0.1) / 2)


def test_triplet_needs_triplets():
    with pytest.raises(DegenerateInputError):
        losses.triplet_loss(np.eye(3), [0, 1, 2], cfg("triplet"))


def test_multi_similarity_matches_oracle():
    x, labels, _ = _batch(0, n=10)
    c = cfg("multi_similarity")
    loss, _ = losses.multi_similarity_loss(x, labels, c)
    assert loss == pytest.approx(ms_oracle(x, labels, c.alpha, c.beta, c.lam), rel=1e-12)


def test_multi_similarity_stable_for_large_beta():
    x, labels, _ = _batch(1)
    loss, grad = losses.multi_similarity_loss(x, labels, cfg("multi_similarity", beta=5000.0))
    assert np.isfinite(loss) and np.all(np.isfinite(grad))


def test_normalized_softmax_two_class_identity():
    x = np.array([[1.0, 0.0]])
    w = np.array([[0.6, 0.8], [0.0, 1.0]])
    t = 0.5
    loss, _, _ = losses.normalized_softmax_loss(x, [0], w, cfg("normalized_softmax", temperature=t))
    gap = (0.6 - 0.0) / t
    assert loss == pytest.approx(math.log1p(math.exp(-gap)), rel=1e-14)


def test_arcface_zero_margin_is_normalized_softmax():
    x, labels, w = _batch(2)
    a = losses.arcface_loss(x, labels, w, cfg("arcface", arc_margin=0.0, scale=64.0))
    b = losses.normalized_softmax_loss(x, labels, w, cfg("normalized_softmax", temperature=1.0 / 64.0))
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)
    a = losses.arcface_loss(x, labels, w, cfg("arcface", arc_margin=0.0, scale=30.0))
    b = losses.normalized_softmax_loss(x, labels, w, cfg("normalized_softmax", temperature=1.0 / 30.0))
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-15)


def test_arcface_margin_increases_loss():
    x, labels, w = _batch(3)
    low = losses.arcface_loss(x, labels, w, cfg("arcface", arc_margin=0.0, scale=16.0))[0]
    high = losses.arcface_loss(x, labels, w, cfg("arcface", arc_margin=0.3, scale=16.0))[0]
    assert high > low


def test_arcface_finite_at_clamp():
    w = np.eye(2)
    loss, gx, gw = losses.arcface_loss(np.array([[1.0, 0.0]]), [0], w, cfg("arcface"))
    assert np.isfinite(loss) and np.all(np.isfinite(gx)) and np.all(np.isfinite(gw))


def test_proxy_label_range():
    x, labels, w = _batch(4)
    with pytest.raises(ValueError):
        losses.normalized_softmax_loss(x, labels + 5, w, cfg("normalized_softmax"))


# ---- properties ----


@pytest.mark.parametrize("kind", losses.LOSS_KINDS)
def test_non_negative_and_finite(kind):
    for seed in range(20):
        x, labels, w = _batch(seed)
        loss, gx, _ = losses.compute_loss(cfg(kind), x, labels, w if kind in losses.PROXY_LOSSES else None)
        assert loss >= 0.0 and np.isfinite(loss)
        assert np.all(np.isfinite(gx))


@pytest.mark.parametrize("kind", losses.LOSS_KINDS)
@given(seed=st.integers(0, 2**32 - 1))
def test_permutation_equivariance(kind, seed):
    x, labels, w = _batch(seed)
    weights = w if kind in losses.PROXY_LOSSES else None
    perm = np.random.default_rng(seed).permutation(len(x))
    loss, gx, _ = losses.compute_loss(cfg(kind), x, labels, weights)
    loss_p, gx_p, _ = losses.compute_loss(cfg(kind), x[perm], labels[perm], weights)
    assert loss_p == pytest.approx(loss, rel=1e-12, abs=1e-15)
    np.testing.assert_allclose(gx_p, gx[perm], rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("kind", ["contrastive", "triplet", "multi_similarity"])
def test_ranking_losses_invariant_to_label_renaming(kind):
    x, labels, _ = _batch(5)
    a = losses.compute_loss(cfg(kind), x, labels)[0]
    b = losses.compute_loss(cfg(kind), x, labels * 7 + 3)[0]
    assert a == b


# ---- gradients ----


@pytest.mark.parametrize("kind", losses.LOSS_KINDS)
def test_grad_check_passes(kind):
    rep = losses.grad_check(kind, trials=10, seed=1)
    assert rep.passed, rep.failures
    assert rep.max_rel_error < 1e-4


@pytest.mark.parametrize("kind", losses.LOSS_KINDS)
def test_grad_check_catches_wrong_gradient(kind):
    def tamper(g):
        g[0, 0] += 0.1 * np.abs(g).max() + 1e-3

    rep = losses.grad_check(kind, trials=5, seed=2, tamper=tamper)
    assert not rep.passed


def test_relative_error_floor():
    analytic = np.array([1.0, 1e-9])
    numeric = np.array([1.0, 2e-9])
    assert losses.relative_error(analytic, numeric).max() < 1e-5
    assert losses.relative_error(analytic, numeric, scale_floor=0.0).max() == pytest.approx(0.5)


# ---- config ----


def test_config_defaults_and_roundtrip():
    c = LossConfig()
    assert c.kind == "contrastive" and c.neg_margin == 1.0
    d = c.to_dict()
    assert "lambda" in d and "lam" not in d
    assert LossConfig.from_dict(d) == c


def test_config_validation():
    with pytest.raises(ValueError, match="unknown"):
        LossConfig.from_dict({"kind": "triplet", "margn": 0.1})
    with pytest.raises(ValueError):
        LossConfig(kind="hinge")
    with pytest.raises(ValueError):
        LossConfig(margin=-0.1)
    with pytest.raises(ValueError):
        LossConfig(temperature=0.0)
    with pytest.raises(ValueError):
        LossConfig.from_dict({"lambda": 1.5})
