import math

import numpy as np
import pytest

from fakeclr.config import ExperimentConfig, ModelConfig
from fakeclr.contrastive import ContractViolation, NegativeQueue, QueueSchedule
from fakeclr.data import make_dataset
from fakeclr.gan import (CHECKPOINT_MAGIC, AbortRun, GanModel, Streams, Trainer, adversarial_losses,
                         contrastive_term_D, load_checkpoint, momentum_update, save_checkpoint, train)
from fakeclr.numerics import Tensor, grad_check, make_rng

from .conftest import random_unit

SMALL = ModelConfig(z_dim=4, w_dim=4, h_dim=8, proj_dim=6, hidden=16)


def small_cfg(**overrides) -> ExperimentConfig:
    base = {"model.z_dim": 4, "model.w_dim": 4, "model.h_dim": 8, "model.proj_dim": 6, "model.hidden": 16,
            "train_batch": 16, "enqueue_batch": 16, "iterations": 20, "eval_interval": 10,
            "queue.n0": 64, "queue.n_min": 8}
    base.update(overrides)
    return ExperimentConfig().replace(**base)


def leaky(h):
    return np.where(h > 0, h, 0.2 * h)


def mlp_forward(mlp, x):
    """Plain numpy forward pass read straight from the parameter arrays."""
    n = len(mlp.weights)
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        x = x @ w.values + b.values
        if i < n - 1 or mlp.final_activation:
            x = leaky(x)
    return x


def unit_rows(v):
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def rotate_and_jitter(x, rng, cfg):
    theta = rng.uniform(-cfg.rotation_max, cfg.rotation_max, size=len(x))
    noise = rng.normal(0.0, cfg.jitter_std, size=x.shape)
    c = x.mean(axis=0)
    d = x - c
    rot = np.stack([d[:, 0] * np.cos(theta) - d[:, 1] * np.sin(theta),
                    d[:, 0] * np.sin(theta) + d[:, 1] * np.cos(theta)], axis=1)
    return rot + c + noise


def params_equal(a: GanModel, b: GanModel) -> bool:
    sa, sb = a.state(), b.state()
    return sa.keys() == sb.keys() and all(np.array_equal(sa[k], sb[k]) for k in sa)


class TestGenerator:
    def test_deterministic_init(self):
        z = np.full((1, SMALL.z_dim), 0.5)
        a = GanModel.create(SMALL, 5).generator.sample(z)
        b = GanModel.create(SMALL, 5).generator.sample(z)
        c = GanModel.create(SMALL, 6).generator.sample(z)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_output_shape(self):
        g = GanModel.create(SMALL, 0).generator
        w, x = g(make_rng(1).standard_normal((13, SMALL.z_dim)))
        assert w.shape == (13, SMALL.w_dim)
        assert x.shape == (13, 2)

    def test_matches_numpy_forward(self):
        g = GanModel.create(SMALL, 0).generator
        z = make_rng(2).standard_normal((7, SMALL.z_dim))
        expected = mlp_forward(g.synthesis_net, mlp_forward(g.mapping_net, z))
        np.testing.assert_allclose(g.sample(z), expected, rtol=1e-13, atol=1e-14)

    def test_gradient_wrt_latent(self):
        g = GanModel.create(SMALL, 0).generator
        z = make_rng(3).standard_normal((3, SMALL.z_dim))
        assert grad_check(lambda t: g(t)[1].sum(), z, eps=1e-6) < 1e-6

    def test_gradient_wrt_parameters(self):
        g = GanModel.create(SMALL, 0).generator
        z = make_rng(4).standard_normal((5, SMALL.z_dim))
        w0 = g.synthesis_net.weights[1]
        original = w0.values.copy()

        def f(t):
            g.synthesis_net.weights[1] = t
            return (g(z)[1] * g(z)[1]).sum()

        assert grad_check(f, original, eps=1e-6) < 1e-5
        g.synthesis_net.weights[1] = w0


class TestDiscriminator:
    def test_embeddings_unit_norm(self):
        d = GanModel.create(SMALL, 0).discriminator
        x = make_rng(5).standard_normal((9, 2))
        for head in ("f", "r"):
            np.testing.assert_allclose(np.linalg.norm(d.embed(x, head).values, axis=1), 1.0, atol=1e-12)

    def test_logit_shape(self):
        d = GanModel.create(SMALL, 0).discriminator
        assert d.logits(np.zeros((4, 2))).shape == (4,)


class TestAdversarialLosses:
    def test_zero_logits(self):
        l_d, l_g = adversarial_losses(np.zeros(8), np.zeros(8))
        assert abs(l_d.item() - 2 * math.log(2)) <= 1e-12
        assert abs(l_g.item() - math.log(2)) <= 1e-12

    def test_saturated_discriminator(self):
        l_d, _ = adversarial_losses(np.full(4, 30.0), np.full(4, -30.0))
        assert l_d.item() < 1e-12

    def test_scalar_oracle(self, rng):
        real, fake = rng.normal(0, 3, 20), rng.normal(0, 3, 20)
        sp = lambda v: math.log1p(math.exp(v)) if v < 30 else v + math.log1p(math.exp(-v))  # noqa: E731
        l_d, l_g = adversarial_losses(real, fake)
        assert l_d.item() == pytest.approx(np.mean([sp(-v) for v in real]) + np.mean([sp(v) for v in fake]),
                                           rel=1e-13)
        assert l_g.item() == pytest.approx(np.mean([sp(-v) for v in fake]), rel=1e-13)

    def test_extreme_logits_finite(self):
        l_d, l_g = adversarial_losses(np.array([-800.0]), np.array([800.0]))
        assert l_d.item() == pytest.approx(1600.0)
        assert np.isfinite(l_g.item())


class TestMomentumUpdate:
    def _models(self):
        model = GanModel.create(SMALL, 0)
        for p in model.discriminator.parameters():
            p.values = p.values + make_rng(9, p.values.size).standard_normal(p.shape)
        return model

    def test_fixed_point(self):
        model = self._models()
        before = [p.values.copy() for p in model.encoder.parameters()]
        momentum_update(model.encoder, model.discriminator, 1.0)
        for b, p in zip(before, model.encoder.parameters()):
            np.testing.assert_array_equal(b, p.values)

    def test_hard_copy(self):
        model = self._models()
        momentum_update(model.encoder, model.discriminator, 0.0)
        for key, live in model.encoder.pairs(model.discriminator):
            np.testing.assert_array_equal(key.values, live.values)

    def test_midpoint(self):
        model = self._models()
        before = [(k.values.copy(), q.values.copy()) for k, q in model.encoder.pairs(model.discriminator)]
        momentum_update(model.encoder, model.discriminator, 0.5)
        for (k0, q0), (k1, _) in zip(before, model.encoder.pairs(model.discriminator)):
            np.testing.assert_allclose(k1.values, (k0 + q0) / 2, rtol=1e-15, atol=1e-15)

    def test_head_d_not_tracked(self):
        model = GanModel.create(SMALL, 0)
        names = {p.name for p in model.encoder.parameters()}
        assert not any(n.startswith("D.head_d") for n in names)
        assert any(n.startswith("D.head_r") for n in names)

    def test_errors(self):
        model = GanModel.create(SMALL, 0)
        with pytest.raises(ContractViolation):
            momentum_update(model.encoder, model.discriminator, 1.5)
        other = GanModel.create(ModelConfig(hidden=8), 0)
        with pytest.raises(ContractViolation):
            momentum_update(model.encoder, other.discriminator, 0.5)


class TestContrastiveTerm:
    def test_baseline_touches_nothing(self):
        cfg = small_cfg(**{"strategy.variant": "baseline"})
        model = GanModel.create(cfg.model, 0)
        queue = NegativeQueue(cfg.model.proj_dim)
        streams = Streams(0)
        z = make_rng(1).standard_normal((16, 4))
        out = contrastive_term_D(model, queue, None, z, np.zeros((16, 2)), cfg, streams, 0)
        assert out is None
        assert len(queue) == 0
        assert streams.d_contrast.standard_normal() == Streams(0).d_contrast.standard_normal()

    def test_fakeclr_pipeline_oracle(self):
        cfg = small_cfg(**{"strategy.variant": "fakeclr", "contrastive.tau_m": 0.05})
        model = GanModel.create(cfg.model, 3)
        rng = make_rng(4)
        queue = NegativeQueue(cfg.model.proj_dim, QueueSchedule(100, 0.0, 8))
        queue.push(random_unit(rng, 20, 6), 0).push(random_unit(rng, 20, 6), 5).push(random_unit(rng, 10, 6), 9)
        negs, labels = queue.embeddings.copy(), queue.labels.copy()
        z = rng.standard_normal((16, 4))
        x_real = rng.standard_normal((16, 2))

        got = contrastive_term_D(model, queue, None, z, x_real, cfg, Streams(8), 10).item()

        # standalone composition: perturb -> generate -> augment -> embed -> weighted InfoNCE
        streams = Streams(8)
        g, d, k_enc = model.generator, model.discriminator, model.encoder
        z_k = z + cfg.perturbation.l1 * np.abs(z) * streams.perturb.standard_normal(z.shape)
        gen = lambda v: mlp_forward(g.synthesis_net, mlp_forward(g.mapping_net, v))  # noqa: E731
        x_q = rotate_and_jitter(gen(z), streams.d_contrast, cfg.augmentation)
        x_k = rotate_and_jitter(gen(z_k), streams.d_contrast, cfg.augmentation)
        q = unit_rows(mlp_forward(d.head_f, mlp_forward(d.backbone, x_q)))
        k = unit_rows(mlp_forward(k_enc.head_f, mlp_forward(k_enc.backbone, x_k)))
        t_hat = (labels - labels.min()) / (labels.max() - labels.min())
        m = np.exp(t_hat / 0.05) / np.exp(t_hat / 0.05).sum()
        tau = cfg.contrastive.tau
        losses = []
        for qi, ki in zip(q, k):
            num = math.exp(qi @ ki / tau)
            den = num + sum(math.exp((qi @ n + mi) / tau) for n, mi in zip(negs, m))
            losses.append(-math.log(num / den))
        assert got == pytest.approx(np.mean(losses), rel=1e-11)

        # then the keys are enqueued with the current label
        assert len(queue) == 50 + 16
        np.testing.assert_allclose(queue.embeddings[-16:], k, rtol=1e-11, atol=1e-12)
        assert queue.labels[-16:].tolist() == [10] * 16

    def test_instance_fake_uses_same_sample_for_both_views(self):
        cfg = small_cfg(**{"strategy.variant": "instance_fake", "augmentation.enabled": False})
        model = GanModel.create(cfg.model, 0)
        queue = NegativeQueue(6)
        z = make_rng(1).standard_normal((16, 4))
        contrastive_term_D(model, queue, None, z, np.zeros((16, 2)), cfg, Streams(0), 0)
        # encoder == live at init, so with no augmentation the keys equal the queries
        q = model.discriminator.embed(model.generator.sample(z), "f").values
        np.testing.assert_allclose(queue.embeddings, q, rtol=1e-12, atol=1e-14)

    def test_instance_real_uses_real_queue_and_head(self):
        cfg = small_cfg(**{"strategy.variant": "instance_real", "augmentation.enabled": False})
        model = GanModel.create(cfg.model, 0)
        real_q, fake_q = NegativeQueue(6), NegativeQueue(6)
        x_real = make_rng(2).standard_normal((16, 2))
        contrastive_term_D(model, fake_q, real_q, np.zeros((16, 4)), x_real, cfg, Streams(0), 0)
        assert len(fake_q) == 0
        np.testing.assert_allclose(real_q.embeddings, model.encoder.embed(x_real, "r"), rtol=1e-12)

    def test_real_keys_mixed_into_fake_queue(self):
        cfg = small_cfg(**{"strategy.variant": "instance_fake", "strategy.real_in_fake_queue": 0.25,
                           "augmentation.enabled": False})
        model = GanModel.create(cfg.model, 0)
        queue = NegativeQueue(6)
        x_real = make_rng(2).standard_normal((16, 2))
        contrastive_term_D(model, queue, None, make_rng(3).standard_normal((16, 4)), x_real, cfg, Streams(0), 0)
        assert len(queue) == 16
        np.testing.assert_allclose(queue.embeddings[-4:], model.encoder.embed(x_real[:4], "f"), rtol=1e-12)

    def test_zero_perturbation_collapses_to_instance_fake(self):
        common = {"perturbation.mode": "noise_related", "perturbation.l1": 0.0}
        a = Trainer(small_cfg(**{"strategy.variant": "instance_perturbation", **common}), _ring())
        b = Trainer(small_cfg(**{"strategy.variant": "instance_fake"}), _ring())
        for t in range(10):
            ra, rb = a.d_step(t), b.d_step(t)
            assert ra == rb
            a.g_step(t)
            b.g_step(t)
        assert params_equal(a.model, b.model)
        np.testing.assert_array_equal(a.queue_fake.embeddings, b.queue_fake.embeddings)


def _ring():
    return make_dataset("ring", 100, 0)


class TestTrainerSteps:
    def test_d_step_leaves_generator_alone(self):
        tr = Trainer(small_cfg(), _ring())
        g_before = [p.values.copy() for p in tr.model.generator.parameters()]
        d_before = [p.values.copy() for p in tr.model.discriminator.parameters()]
        tr.d_step(0)
        assert all(np.array_equal(b, p.values) for b, p in zip(g_before, tr.model.generator.parameters()))
        assert not all(np.array_equal(b, p.values) for b, p in zip(d_before, tr.model.discriminator.parameters()))
        assert all(p.grad is None for p in tr.model.encoder.parameters())

    def test_g_step_leaves_discriminator_alone(self):
        tr = Trainer(small_cfg(), _ring())
        tr.d_step(0)
        d_before = [p.values.copy() for p in tr.model.discriminator.parameters()]
        k_before = [p.values.copy() for p in tr.model.encoder.parameters()]
        queue_before = tr.queue_fake.embeddings.copy()
        tr.g_step(0)
        assert all(np.array_equal(b, p.values) for b, p in zip(d_before, tr.model.discriminator.parameters()))
        assert all(np.array_equal(b, p.values) for b, p in zip(k_before, tr.model.encoder.parameters()))
        np.testing.assert_array_equal(tr.queue_fake.embeddings, queue_before)

    def test_loss_decomposition(self):
        tr = Trainer(small_cfg(**{"weights.lambda_f": 0.7}), _ring())
        for t in range(3):
            r = tr.d_step(t)
            assert r.loss == pytest.approx(r.adversarial + 0.7 * r.contrastive, rel=1e-12)
            g = tr.g_step(t)
            assert g.contrastive > 0

    def test_zero_lambda_g_is_pure_adversarial_update(self):
        a = Trainer(small_cfg(**{"weights.lambda_g": 0.0}), _ring())
        b = Trainer(small_cfg(**{"strategy.variant": "baseline"}), _ring())
        a.queue_fake.push(random_unit(make_rng(1), 32, 6), 0)
        z = make_rng(2).standard_normal((16, 4))
        ra, rb = a.g_step(0, z), b.g_step(0, z)
        assert ra.contrastive > 0
        assert ra.adversarial == rb.adversarial
        for pa, pb in zip(a.model.generator.parameters(), b.model.generator.parameters()):
            assert np.array_equal(pa.values, pb.values)

    def test_enqueue_per_d_step(self):
        tr = Trainer(small_cfg(**{"enqueue_batch": 8}), _ring())
        for t in range(3):
            tr.d_step(t)
            tr.g_step(t)
        assert len(tr.queue_fake) == 24
        assert tr.queue_fake.labels.tolist() == [0] * 8 + [1] * 8 + [2] * 8

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_abort_on_non_finite_loss(self):
        tr = Trainer(small_cfg(), _ring())
        tr.model.discriminator.head_d.weights[0].values[:] = np.nan
        with pytest.raises(AbortRun) as info:
            tr.d_step(7)
        assert info.value.iteration == 7


@pytest.mark.parametrize("variant", ["instance_fake", "instance_perturbation", "fakeclr", "instance_real"])
def test_zero_weights_reduce_to_baseline_bitwise(variant):
    zero = {"weights.lambda_f": 0.0, "weights.lambda_r": 0.0, "weights.lambda_g": 0.0}
    a, _ = train(small_cfg(**{"strategy.variant": variant, **zero}), _ring())
    b, _ = train(small_cfg(**{"strategy.variant": "baseline"}), _ring())
    assert params_equal(a.model, b.model)


class TestTrainLoop:
    def test_zero_iterations_returns_initial_model(self):
        cfg = small_cfg(iterations=0)
        calls = []
        tr, log = train(cfg, _ring(), lambda t, it, losses: calls.append((it, losses)) or it)
        assert params_equal(tr.model, GanModel.create(cfg.model, cfg.seed))
        assert calls == [(0, None)]

    def test_eval_schedule(self):
        cfg = small_cfg(iterations=25, eval_interval=10)
        _, log = train(cfg, _ring(), lambda t, it, losses: it)
        assert log == [0, 10, 20, 25]

    def test_deterministic(self):
        a, _ = train(small_cfg(), _ring())
        b, _ = train(small_cfg(), _ring())
        assert params_equal(a.model, b.model)

    def test_mean_losses_reported(self):
        cfg = small_cfg(iterations=4, eval_interval=2)
        seen = []
        train(cfg, _ring(), lambda t, it, losses: seen.append(losses))
        assert seen[0] is None
        assert all(len(s) == 3 and all(np.isfinite(s)) for s in seen[1:])


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        cfg = small_cfg(iterations=5)
        tr, _ = train(cfg, _ring())
        path = tmp_path / "final.ckpt"
        save_checkpoint(path, tr.model, cfg)
        model, cfg2 = load_checkpoint(path)
        assert cfg2 == cfg
        assert params_equal(model, tr.model)
        assert path.read_bytes().startswith(CHECKPOINT_MAGIC)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"not a checkpoint\n")
        with pytest.raises(ValueError):
            load_checkpoint(path)


def test_smoke_run_finite_losses():
    cfg = ExperimentConfig().replace(**{"iterations": 2000, "eval_interval": 500, "eval.n_generated": 500,
                                        "eval.n_reference": 500, "eval.n_kid": 200, "eval.n_paths": 100})
    seen = []

    def evaluate(trainer, it, losses):
        from fakeclr.metrics import toy_fid
        fid = toy_fid(trainer.model.generator.sample(make_rng(0).standard_normal((500, cfg.model.z_dim))), _ring())
        seen.append((it, losses, fid))

    train(cfg, _ring(), evaluate)
    assert [s[0] for s in seen] == [0, 500, 1000, 1500, 2000]
    assert all(np.isfinite(s[2]) for s in seen)
    assert all(np.all(np.isfinite(s[1])) for s in seen[1:])
