"""Toy generator/discriminator pair with momentum-queue contrastive terms.

The discriminator owns a shared backbone and three heads: the real/fake
logit head, and two projection heads (fake and real) whose outputs are
normalised onto the unit sphere.  A momentum copy of the backbone and the
projection heads produces queue keys.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import augment
from .config import ExperimentConfig, ModelConfig
from .contrastive import (ContractViolation, ForgettingConfig, NegativeQueue, QueueSchedule,
                          iteration_info_nce_tensor)
from .numerics import Adam, Rng, Tensor, affine, frozen, make_rng, no_grad

LEAKY_SLOPE = 0.2
CHECKPOINT_MAGIC = b"FAKECLR-CKPT/1\n"


class AbortRun(RuntimeError):
    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


class MLP:
    """Fully connected layers with leaky-ReLU between them."""

    def __init__(self, sizes: list[int], rng: Rng, final_activation: bool = False, name: str = "mlp"):
        self.sizes = list(sizes)
        self.final_activation = final_activation
        gain = math.sqrt(2.0 / (1.0 + LEAKY_SLOPE ** 2))
        self.weights = []
        self.biases = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = rng.normal(0.0, gain / math.sqrt(fan_in), size=(fan_in, fan_out))
            self.weights.append(Tensor(w, requires_grad=True, name=f"{name}.{i}.weight"))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.{i}.bias"))

    def __call__(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = affine(x, w, b)
            if i < last or self.final_activation:
                x = x.leaky_relu(LEAKY_SLOPE)
        return x

    def parameters(self) -> list[Tensor]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self, requires_grad: bool = True) -> "MLP":
        out = MLP.__new__(MLP)
        out.sizes = list(self.sizes)
        out.final_activation = self.final_activation
        out.weights = [Tensor(w.values.copy(), requires_grad=requires_grad, name=w.name) for w in self.weights]
        out.biases = [Tensor(b.values.copy(), requires_grad=requires_grad, name=b.name) for b in self.biases]
        return out


class Generator:
    """Mapping net z -> w followed by a synthesis net w -> x in the plane."""

    def __init__(self, cfg: ModelConfig, rng: Rng):
        self.z_dim = cfg.z_dim
        self.mapping_net = MLP([cfg.z_dim, cfg.hidden, cfg.w_dim], rng, name="G.mapping")
        self.synthesis_net = MLP([cfg.w_dim, cfg.hidden, cfg.hidden, 2], rng, name="G.synthesis")

    def mapping(self, z) -> Tensor:
        return self.mapping_net(z)

    def synthesis(self, w) -> Tensor:
        return self.synthesis_net(w)

    def forward(self, z) -> tuple[Tensor, Tensor]:
        w = self.mapping(z)
        return w, self.synthesis(w)

    __call__ = forward

    def sample(self, z: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.forward(z)[1].values

    def parameters(self) -> list[Tensor]:
        return self.mapping_net.parameters() + self.synthesis_net.parameters()

    def copy(self, requires_grad: bool = True) -> "Generator":
        out = Generator.__new__(Generator)
        out.z_dim = self.z_dim
        out.mapping_net = self.mapping_net.copy(requires_grad)
        out.synthesis_net = self.synthesis_net.copy(requires_grad)
        return out


class Discriminator:
    def __init__(self, cfg: ModelConfig, rng: Rng):
        self.backbone = MLP([2, cfg.hidden, cfg.h_dim], rng, final_activation=True, name="D.backbone")
        self.head_d = MLP([cfg.h_dim, 1], rng, name="D.head_d")
        self.head_f = MLP([cfg.h_dim, cfg.h_dim, cfg.proj_dim], rng, name="D.head_f")
        self.head_r = MLP([cfg.h_dim, cfg.h_dim, cfg.proj_dim], rng, name="D.head_r")

    def logits(self, x) -> Tensor:
        return self.head_d(self.backbone(x)).sum(axis=1)

    def embed(self, x, head: str = "f") -> Tensor:
        proj = self.head_f if head == "f" else self.head_r
        return proj(self.backbone(x)).normalize_rows()

    def parameters(self) -> list[Tensor]:
        return (self.backbone.parameters() + self.head_d.parameters()
                + self.head_f.parameters() + self.head_r.parameters())


class MomentumEncoder:
    """EMA copy of the backbone and both projection heads; never trained directly."""

    def __init__(self, live: Discriminator):
        self.backbone = live.backbone.copy(requires_grad=False)
        self.head_f = live.head_f.copy(requires_grad=False)
        self.head_r = live.head_r.copy(requires_grad=False)

    def embed(self, x, head: str = "f") -> np.ndarray:
        proj = self.head_f if head == "f" else self.head_r
        with no_grad():
            return proj(self.backbone(x)).normalize_rows().values

    def pairs(self, live: Discriminator) -> Iterator[tuple[Tensor, Tensor]]:
        for mine, theirs in ((self.backbone, live.backbone), (self.head_f, live.head_f),
                             (self.head_r, live.head_r)):
            yield from zip(mine.parameters(), theirs.parameters())

    def parameters(self) -> list[Tensor]:
        return self.backbone.parameters() + self.head_f.parameters() + self.head_r.parameters()


def momentum_update(encoder: MomentumEncoder, live: Discriminator, m_ema: float) -> MomentumEncoder:
    """``theta_key <- m_ema * theta_key + (1 - m_ema) * theta_live`` for every key parameter."""
    if not 0.0 <= m_ema <= 1.0:
        raise ContractViolation(f"m_ema must lie in [0, 1], got {m_ema}")
    for key, param in encoder.pairs(live):
        if key.shape != param.shape:
            raise ContractViolation(f"shape mismatch {key.shape} vs {param.shape} for {param.name}")
        key.values = m_ema * key.values + (1.0 - m_ema) * param.values
    return encoder


@dataclass
class GanModel:
    generator: Generator
    discriminator: Discriminator
    encoder: MomentumEncoder
    # slow EMA copy of the generator, used for evaluation
    generator_ema: Generator

    @classmethod
    def create(cls, cfg: ModelConfig, seed: int) -> "GanModel":
        g = Generator(cfg, make_rng(seed, 1))
        d = Discriminator(cfg, make_rng(seed, 2))
        return cls(g, d, MomentumEncoder(d), g.copy(requires_grad=False))

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [(p.name, p) for p in self.generator.parameters() + self.discriminator.parameters()]
        out += [("K." + p.name, p) for p in self.encoder.parameters()]
        out += [("E." + p.name, p) for p in self.generator_ema.parameters()]
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self.named_tensors()}


def adversarial_losses(real_logits, fake_logits) -> tuple[Tensor, Tensor]:
    """Non-saturating logistic losses for the discriminator and the generator."""
    real = real_logits if isinstance(real_logits, Tensor) else Tensor(real_logits)
    fake = fake_logits if isinstance(fake_logits, Tensor) else Tensor(fake_logits)
    loss_d = (-real).softplus().mean() + fake.softplus().mean()
    loss_g = (-fake).softplus().mean()
    return loss_d, loss_g


# training ------------------------------------------------------------------------


class Streams:
    """Independent Philox sub-streams so each consumer advances only its own state."""

    NAMES = ("data", "adv", "d_contrast", "perturb", "g_contrast")

    def __init__(self, seed: int):
        for i, name in enumerate(self.NAMES):
            setattr(self, name, make_rng(seed, 100 + i))


@dataclass
class StepResult:
    loss: float
    adversarial: float
    contrastive: float


def contrastive_term_D(model: GanModel, queue_fake: NegativeQueue | None, queue_real: NegativeQueue | None,
                       z: np.ndarray, x_real: np.ndarray, cfg: ExperimentConfig, streams: Streams,
                       iteration: int) -> Tensor | None:
    """Discriminator-side contrastive loss for the active strategy, then enqueue the keys.

    Queries come from the live discriminator, keys from the momentum
    encoder.  Returns None for the baseline, which touches no queue.
    """
    variant = cfg.strategy.variant
    if variant == "baseline":
        return None
    aug, rng = cfg.augmentation, streams.d_contrast
    if variant == "instance_real":
        head, queue = "r", queue_real
        x_q = x_k = x_real
    else:
        head, queue = "f", queue_fake
        x_q = model.generator.sample(z)
        x_k = x_q
        if cfg.strategy.perturbs:
            z_k = augment.perturb_latent(z, cfg.perturbation, streams.perturb)
            x_k = model.generator.sample(z_k)
    q = model.discriminator.embed(augment.augment_data(x_q, aug, rng), head)
    k = model.encoder.embed(augment.augment_data(x_k, aug, rng), head)
    weights = None
    if cfg.strategy.forgetting and len(queue):
        weights = queue.weights(ForgettingConfig(cfg.contrastive.tau_m, True,
                                                 cfg.contrastive.use_pseudocode_normalization))
    loss = iteration_info_nce_tensor(q, k, queue.embeddings, weights, cfg.contrastive.tau)

    b = cfg.enqueue_batch
    keys = k[:b]
    frac = cfg.strategy.real_in_fake_queue
    if head == "f" and frac > 0:
        n_real = min(b, math.ceil(frac * b))
        real_keys = model.encoder.embed(augment.augment_data(x_real[:n_real], aug, rng), "f")
        keys = np.concatenate([keys[: b - n_real], real_keys])
    queue.push(keys, iteration)
    return loss


class Trainer:
    """Alternating discriminator / generator updates on a fixed training set."""

    def __init__(self, cfg: ExperimentConfig, data: np.ndarray, model: GanModel | None = None):
        self.cfg = cfg
        self.data = np.asarray(data, dtype=np.float64)
        self.model = model or GanModel.create(cfg.model, cfg.seed)
        self.streams = Streams(cfg.seed)
        o = cfg.optim
        self.opt_g = Adam(self.model.generator.parameters(), o.lr, (o.beta1, o.beta2))
        self.opt_d = Adam(self.model.discriminator.parameters(), o.lr, (o.beta1, o.beta2))
        schedule = QueueSchedule(cfg.queue.n0, cfg.queue.decay_rate(cfg.iterations, cfg.strategy.diversity_queue),
                                 cfg.queue.n_min)
        p = cfg.model.proj_dim
        self.queue_fake = NegativeQueue(p, schedule) if cfg.strategy.uses_fake_queue else None
        self.queue_real = NegativeQueue(p, schedule) if cfg.strategy.variant == "instance_real" else None

    @property
    def queue_size(self) -> int:
        q = self.queue_fake if self.queue_fake is not None else self.queue_real
        return len(q) if q is not None else 0

    def _zero_grads(self) -> None:
        self.opt_g.zero_grad()
        self.opt_d.zero_grad()

    def _adv_input(self, x):
        aug = self.cfg.augmentation
        return augment.augment_data(x, aug, self.streams.adv) if aug.adversarial else x

    def sample_batch(self) -> tuple[np.ndarray, np.ndarray]:
        rng, b = self.streams.data, self.cfg.train_batch
        x_real = self.data[rng.integers(0, len(self.data), size=b)]
        z = rng.standard_normal((b, self.cfg.model.z_dim))
        return x_real, z

    def d_step(self, iteration: int, batch=None) -> StepResult:
        cfg, model = self.cfg, self.model
        x_real, z = batch if batch is not None else self.sample_batch()
        self._zero_grads()
        x_fake = model.generator.sample(z)
        both = np.concatenate([self._adv_input(x_real), self._adv_input(x_fake)])
        logits = model.discriminator.logits(both)
        b = len(x_real)
        loss_d, _ = adversarial_losses(logits[:b], logits[b:])
        total = loss_d
        c = contrastive_term_D(model, self.queue_fake, self.queue_real, z, x_real, cfg, self.streams, iteration)
        c_val = 0.0
        if c is not None:
            lam = cfg.weights.lambda_r if cfg.strategy.variant == "instance_real" else cfg.weights.lambda_f
            total = loss_d + c * lam
            c_val = c.item()
        if not np.isfinite(total.values):
            raise AbortRun(iteration, "non-finite discriminator loss")
        total.backward()
        self.opt_d.step()
        momentum_update(model.encoder, model.discriminator, cfg.contrastive.m_ema)
        return StepResult(total.item(), loss_d.item(), c_val)

    def g_step(self, iteration: int, z: np.ndarray | None = None) -> StepResult:
        cfg, model = self.cfg, self.model
        if z is None:
            z = self.streams.data.standard_normal((cfg.train_batch, cfg.model.z_dim))
        self._zero_grads()
        d = model.discriminator
        c_val = 0.0
        with frozen(d.parameters()):
            _, x = model.generator.forward(z)
            _, loss_g = adversarial_losses(np.zeros(1), d.logits(self._adv_input(x)))
            total = loss_g
            if self.queue_fake is not None:
                rng = self.streams.g_contrast
                q = d.embed(augment.augment_data(x, cfg.augmentation, rng), "f")
                k = model.encoder.embed(augment.augment_data(x.values, cfg.augmentation, rng), "f")
                c = iteration_info_nce_tensor(q, k, self.queue_fake.embeddings, None, cfg.contrastive.tau)
                total = loss_g + c * cfg.weights.lambda_g
                c_val = c.item()
        if not np.isfinite(total.values):
            raise AbortRun(iteration, "non-finite generator loss")
        total.backward()
        self.opt_g.step()
        beta = cfg.optim.g_ema
        for slow, live in zip(model.generator_ema.parameters(), model.generator.parameters()):
            slow.values = beta * slow.values + (1.0 - beta) * live.values
        return StepResult(total.item(), loss_g.item(), c_val)


def train(cfg: ExperimentConfig, data: np.ndarray, evaluate=None, model: GanModel | None = None):
    """Run ``cfg.iterations`` alternating steps.

    ``evaluate(trainer, iteration, losses)`` is called at iteration 0, every
    ``eval_interval`` steps and after the last step; its return values are
    collected into the log.  ``losses`` holds the mean step losses since the
    previous evaluation (None at iteration 0).
    """
    trainer = Trainer(cfg, data, model)
    log = []
    if evaluate is not None:
        log.append(evaluate(trainer, 0, None))
    acc = np.zeros(3)
    count = 0
    for t in range(cfg.iterations):
        d = trainer.d_step(t)
        g = trainer.g_step(t)
        acc += (d.loss, g.loss, d.contrastive)
        count += 1
        done = t + 1
        if evaluate is not None and (done % cfg.eval_interval == 0 or done == cfg.iterations):
            log.append(evaluate(trainer, done, tuple(acc / count)))
            acc[:] = 0.0
            count = 0
    return trainer, log


# checkpoints -----------------------------------------------------------------------


def save_checkpoint(path, model: GanModel, cfg: ExperimentConfig) -> None:
    """Write the magic line, a one-line JSON header, then raw little-endian float64 data."""
    tensors, offset, blobs = [], 0, []
    for name, t in model.named_tensors():
        arr = np.ascontiguousarray(t.values, dtype="<f8")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += arr.size
        blobs.append(arr.tobytes())
    header = json.dumps({"config": cfg.to_dict(), "tensors": tensors}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(header.encode() + b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[GanModel, ExperimentConfig]:
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic {magic[:20]!r})")
        header = json.loads(fh.readline())
        payload = np.frombuffer(fh.read(), dtype="<f8")
    cfg = ExperimentConfig.from_dict(header["config"])
    model = GanModel.create(cfg.model, cfg.seed)
    by_name = dict(model.named_tensors())
    for entry in header["tensors"]:
        t = by_name[entry["name"]]
        vals = payload[entry["offset"]: entry["offset"] + entry["count"]].reshape(entry["shape"])
        if vals.shape != t.shape:
            raise ValueError(f"shape mismatch for {entry['name']}")
        t.values = vals.astype(np.float64)
    return model, cfg
