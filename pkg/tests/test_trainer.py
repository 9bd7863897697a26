import numpy as np
import pytest

from kernelshot.anchors import AnchorSet
from kernelshot.core import FeatureBundle, HyperParams, one_hot
from kernelshot.errors import KernelMismatch, LabelOutOfRange
from kernelshot.kernels import Linear
from kernelshot.methods import CacheScores
from kernelshot.trainer import (
    TrainConfig,
    cross_entropy_loss,
    grad_cache_scores,
    grad_keys,
    train,
    trained_anchor_set,
    _model_logits,
)


def unit_rows(rng, n, d):
    a = rng.standard_normal((n, d))
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def toy_problem(seed=0, C=3, M=2, d=8, B=4):
    rng = np.random.default_rng(seed)
    keys = unit_rows(rng, C * M, d)
    text = unit_rows(rng, C, d)
    anchors = AnchorSet(
        image_anchors=FeatureBundle(
            keys, labels=np.repeat(np.arange(C), M), kind="image",
            l2_normalized=True, class_count=C,
        ),
        text_anchors=FeatureBundle(text, kind="text", l2_normalized=True),
    )
    Z = one_hot(np.repeat(np.arange(C), M), C)
    X = unit_rows(rng, B, d)
    y = rng.integers(0, C, size=B)
    r = np.exp(0.1 * rng.standard_normal(C * M))
    return anchors, Z, X, y, r


def fd_grad_keys(X, y, anchors, Z, hp, r, h=1e-4):
    keys = anchors.image_anchors.data
    text = anchors.text_anchors.data

    def loss(k):
        logits, _ = _model_logits(X, k, text, Z, hp, r)
        return cross_entropy_loss(logits, y)

    g = np.zeros_like(keys)
    for idx in np.ndindex(keys.shape):
        kp = keys.copy()
        kp[idx] += h
        km = keys.copy()
        km[idx] -= h
        g[idx] = (loss(kp) - loss(km)) / (2 * h)
    return g


def fd_grad_scores(X, y, anchors, Z, hp, r, h=1e-4):
    keys = anchors.image_anchors.data
    text = anchors.text_anchors.data

    def loss(r_):
        logits, _ = _model_logits(X, keys, text, Z, hp, r_)
        return cross_entropy_loss(logits, y)

    g = np.zeros_like(r)
    for i in range(r.size):
        rp = r.copy()
        rp[i] += h
        rm = r.copy()
        rm[i] -= h
        g[i] = (loss(rp) - loss(rm)) / (2 * h)
    return g


def max_rel(a, b):
    # floor keeps finite-difference truncation noise on near-zero
    # coordinates from masquerading as relative error
    return float(
        np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6))
    )


class TestCrossEntropy:
    def test_huge_margin_loss_near_zero(self):
        assert cross_entropy_loss(np.array([[1000.0, 0.0]]), [0]) < 1e-9

    def test_uniform_two_class(self):
        assert cross_entropy_loss(np.array([[0.0, 0.0]]), [0]) == pytest.approx(
            np.log(2)
        )

    def test_hand_value(self):
        # -log(e / (e + 1))
        got = cross_entropy_loss(np.array([[1.0, 0.0]]), [0])
        assert got == pytest.approx(0.313262, abs=1e-6)

    def test_batch_mean(self):
        logits = np.array([[0.0, 0.0], [1.0, 0.0]])
        expect = (np.log(2) + 0.313262) / 2
        assert cross_entropy_loss(logits, [0, 0]) == pytest.approx(expect, abs=1e-6)

    def test_label_out_of_range(self):
        with pytest.raises(LabelOutOfRange):
            cross_entropy_loss(np.array([[0.0, 0.0]]), [2])


class TestGradKeys:
    def test_alpha_zero_detaches_cache(self):
        anchors, Z, X, y, r = toy_problem()
        hp = HyperParams(alpha=0.0, beta=5.0, logit_scale=10.0)
        g = grad_keys(X, y, anchors, Z, hp, CacheScores(r))
        np.testing.assert_array_equal(g, np.zeros_like(g))

    def test_confident_correct_sample_zero_gradient(self):
        # text anchors orthonormal, huge logit scale: softmax is one-hot on
        # the true class, so the residual (and thus the gradient) vanishes
        anchors, Z, X, y, r = toy_problem(C=3, M=1, d=3)
        img = FeatureBundle(
            np.eye(3), labels=np.arange(3), kind="image",
            l2_normalized=True, class_count=3,
        )
        txt = FeatureBundle(np.eye(3), kind="text", l2_normalized=True)
        anchors = AnchorSet(image_anchors=img, text_anchors=txt)
        Z = one_hot([0, 1, 2], 3)
        hp = HyperParams(alpha=1.0, beta=5.0, logit_scale=1e4)
        g = grad_keys(np.eye(3)[:1], np.array([0]), anchors, Z, hp)
        assert np.abs(g).max() < 1e-12

    @pytest.mark.parametrize("seed", range(8))
    def test_finite_difference_oracle(self, seed):
        anchors, Z, X, y, r = toy_problem(seed=seed)
        hp = HyperParams(alpha=1.0, beta=5.0, logit_scale=10.0)
        analytic = grad_keys(X, y, anchors, Z, hp, CacheScores(r))
        fd = fd_grad_keys(X, y, anchors, Z, hp, r)
        assert max_rel(analytic, fd) <= 1e-4

    def test_two_anchor_one_sample_toy(self):
        anchors, Z, X, y, r = toy_problem(seed=1, C=2, M=1, d=4, B=1)
        hp = HyperParams(alpha=2.0, beta=3.0, logit_scale=5.0)
        analytic = grad_keys(X, y, anchors, Z, hp, CacheScores(r))
        fd = fd_grad_keys(X, y, anchors, Z, hp, r)
        assert max_rel(analytic, fd) <= 1e-4

    def test_high_beta_stress(self):
        anchors, Z, X, y, r = toy_problem(seed=2)
        hp = HyperParams(alpha=1.0, beta=20.0, logit_scale=10.0)
        analytic = grad_keys(X, y, anchors, Z, hp, CacheScores(r))
        fd = fd_grad_keys(X, y, anchors, Z, hp, r)
        assert max_rel(analytic, fd) <= 1e-4

    def test_non_gaussian_kernel_rejected(self):
        anchors, Z, X, y, r = toy_problem()
        with pytest.raises(KernelMismatch):
            grad_keys(X, y, anchors, Z, HyperParams(), kernel=Linear())


class TestGradCacheScores:
    def test_alpha_zero(self):
        anchors, Z, X, y, r = toy_problem()
        hp = HyperParams(alpha=0.0, beta=5.0)
        g = grad_cache_scores(X, y, anchors, Z, hp, CacheScores(r))
        np.testing.assert_array_equal(g, np.zeros_like(g))

    def test_duplicate_anchors_equal_gradients(self):
        rng = np.random.default_rng(3)
        row = unit_rows(rng, 1, 6)[0]
        img = FeatureBundle(
            np.vstack([row, row]), labels=np.array([0, 0]), kind="image",
            l2_normalized=True, class_count=1,
        )
        txt = FeatureBundle(unit_rows(rng, 2, 6), kind="text", l2_normalized=True)
        anchors = AnchorSet(image_anchors=img, text_anchors=txt)
        Z = one_hot([0, 0], 2)
        X = unit_rows(rng, 3, 6)
        y = np.array([0, 1, 0])
        g = grad_cache_scores(X, y, anchors, Z, HyperParams(alpha=1.0, beta=5.0))
        assert g[0] == pytest.approx(g[1], rel=1e-12)

    @pytest.mark.parametrize("seed", range(8))
    def test_finite_difference_oracle(self, seed):
        anchors, Z, X, y, r = toy_problem(seed=seed)
        hp = HyperParams(alpha=1.0, beta=5.0, logit_scale=10.0)
        analytic = grad_cache_scores(X, y, anchors, Z, hp, CacheScores(r))
        fd = fd_grad_scores(X, y, anchors, Z, hp, r)
        assert max_rel(analytic, fd) <= 1e-4


def separable_episode(seed=0, C=3, M=8, d=16):
    rng = np.random.default_rng(seed)
    centers = unit_rows(rng, C, d)
    data = np.repeat(centers, M, axis=0) + 0.05 * rng.standard_normal((C * M, d))
    data /= np.linalg.norm(data, axis=1, keepdims=True)
    labels = np.repeat(np.arange(C), M)
    episode = FeatureBundle(
        data, labels=labels, kind="image", l2_normalized=True, class_count=C
    )
    anchors = AnchorSet(
        image_anchors=episode,
        text_anchors=FeatureBundle(
            centers, kind="text", l2_normalized=True, class_count=C
        ),
        provenance="LabeledShots",
    )
    return episode, anchors, one_hot(labels, C)


class TestTrain:
    def test_zero_learning_rate_is_noop(self):
        episode, anchors, Z = separable_episode()
        cfg = TrainConfig(learning_rate=0.0, epochs=4, batch_size=8, seed=0)
        report = train(cfg, episode, anchors, Z, hp=HyperParams(alpha=1.0, beta=5.0))
        np.testing.assert_array_equal(report.keys, anchors.image_anchors.data)
        assert len(set(report.loss_history)) == 1

    def test_one_full_batch_step_matches_hand_oracle(self):
        episode, anchors, Z = separable_episode(seed=1)
        hp = HyperParams(alpha=1.0, beta=5.0, logit_scale=10.0)
        lr = 0.05
        cfg = TrainConfig(
            learning_rate=lr, epochs=1, batch_size=episode.n, seed=0
        )
        report = train(cfg, episode, anchors, Z, hp=hp)
        # hand-stepped oracle: one full-batch gradient step from the init
        g = grad_keys(episode.data, episode.labels, anchors, Z, hp)
        expect = anchors.image_anchors.data - lr * g
        np.testing.assert_allclose(report.keys, expect, rtol=1e-9, atol=1e-12)

    def test_loss_decreases_on_separable_toy(self):
        episode, anchors, Z = separable_episode(seed=2)
        hp = HyperParams(alpha=5.0, beta=5.0, logit_scale=1.0)
        cfg = TrainConfig(learning_rate=0.01, epochs=5, batch_size=episode.n, seed=0)
        report = train(cfg, episode, anchors, Z, hp=hp)
        diffs = np.diff(report.loss_history)
        assert (diffs <= 1e-12).all()
        assert report.loss_history[-1] < report.loss_history[0]

    def test_deterministic(self):
        episode, anchors, Z = separable_episode(seed=3)
        cfg = TrainConfig(learning_rate=0.02, epochs=3, batch_size=4, seed=5)
        hp = HyperParams(alpha=1.0, beta=5.0)
        a = train(cfg, episode, anchors, Z, hp=hp)
        b = train(cfg, episode, anchors, Z, hp=hp)
        np.testing.assert_array_equal(a.keys, b.keys)
        assert a.loss_history == b.loss_history

    def test_grad_check_recorded_and_small(self):
        episode, anchors, Z = separable_episode(seed=4)
        cfg = TrainConfig(learning_rate=0.01, epochs=1, batch_size=8, seed=0)
        report = train(
            cfg, episode, anchors, Z, hp=HyperParams(alpha=1.0, beta=5.0)
        )
        assert report.grad_check_max_rel_err <= 1e-4

    def test_weight_decay_shrinks_on_flat_landscape(self):
        # alpha = 0 gives zero loss gradient; only the decay term acts
        episode, anchors, Z = separable_episode(seed=5)
        cfg = TrainConfig(
            learning_rate=0.1, epochs=3, batch_size=episode.n,
            weight_decay=0.5, seed=0,
        )
        report = train(cfg, episode, anchors, Z, hp=HyperParams(alpha=0.0, beta=5.0))
        before = np.linalg.norm(anchors.image_anchors.data)
        assert np.linalg.norm(report.keys) < before

    def test_scores_target_trains_rho_not_keys(self):
        episode, anchors, Z = separable_episode(seed=6)
        cfg = TrainConfig(
            learning_rate=0.1, epochs=3, batch_size=8, seed=0, target="CacheScores"
        )
        report = train(
            cfg, episode, anchors, Z,
            hp=HyperParams(alpha=2.0, beta=5.0, logit_scale=1.0),
        )
        np.testing.assert_array_equal(report.keys, anchors.image_anchors.data)
        assert not np.array_equal(report.scores.r_fw, np.ones(Z.n))
        assert (report.scores.r_fw > 0).all()

    def test_best_val_params_returned(self):
        episode, anchors, Z = separable_episode(seed=7)
        val = FeatureBundle(
            episode.data[::2], labels=episode.labels[::2], kind="image",
            l2_normalized=True, class_count=3,
        )
        cfg = TrainConfig(learning_rate=0.02, epochs=4, batch_size=8, seed=0)
        report = train(
            cfg, episode, anchors, Z, val_bundle=val,
            hp=HyperParams(alpha=1.0, beta=5.0),
        )
        assert report.best_val_accuracy is not None
        assert 0 <= report.best_epoch < 4

    def test_normalize_keys_flag(self):
        episode, anchors, Z = separable_episode(seed=8)
        cfg = TrainConfig(
            learning_rate=0.05, epochs=2, batch_size=8, seed=0, normalize_keys=True
        )
        report = train(
            cfg, episode, anchors, Z, hp=HyperParams(alpha=2.0, beta=5.0)
        )
        norms = np.linalg.norm(report.keys, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)

    def test_trained_anchor_set_substitutes_keys(self):
        episode, anchors, Z = separable_episode(seed=9)
        cfg = TrainConfig(learning_rate=0.05, epochs=2, batch_size=8, seed=0)
        report = train(cfg, episode, anchors, Z, hp=HyperParams(alpha=2.0, beta=5.0))
        out = trained_anchor_set(anchors, report)
        np.testing.assert_array_equal(out.image_anchors.data, report.keys)
        assert out.text_anchors is anchors.text_anchors


class TestTrainConfig:
    @pytest.mark.parametrize(
        "kw",
        [
            dict(learning_rate=-1.0),
            dict(epochs=0),
            dict(batch_size=0),
            dict(weight_decay=-0.1),
            dict(target="Nope"),
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)
