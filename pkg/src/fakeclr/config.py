"""Experiment configuration as nested dataclasses with a JSON round-trip."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Optional

from .augment import AugmentationConfig, PerturbationConfig
from .numerics import InvalidParameterError

VARIANTS = ("baseline", "instance_real", "instance_fake", "instance_perturbation", "fakeclr")
DATASET_KINDS = ("ring", "grid", "spiral")
RNG_ALGORITHM = "philox"


@dataclass
class DatasetConfig:
    kind: str = "ring"
    n_samples: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise InvalidParameterError(f"unknown dataset kind {self.kind!r}")
        if self.n_samples < 2:
            raise InvalidParameterError("n_samples must be at least 2")


@dataclass
class ModelConfig:
    z_dim: int = 8
    w_dim: int = 8
    h_dim: int = 32
    proj_dim: int = 16
    hidden: int = 64


@dataclass
class StrategyConfig:
    variant: str = "fakeclr"
    # None resolves from the variant: on for fakeclr, off otherwise
    forgetting: Optional[bool] = None
    diversity_queue: Optional[bool] = None
    real_in_fake_queue: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidParameterError(f"unknown strategy variant {self.variant!r}")
        if not 0.0 <= self.real_in_fake_queue <= 1.0:
            raise InvalidParameterError("real_in_fake_queue must lie in [0, 1]")
        is_fakeclr = self.variant == "fakeclr"
        if self.forgetting is None:
            self.forgetting = is_fakeclr
        if self.diversity_queue is None:
            self.diversity_queue = is_fakeclr
        if is_fakeclr and not (self.forgetting and self.diversity_queue):
            raise InvalidParameterError("fakeclr requires forgetting and the diversity-aware queue")

    @property
    def uses_fake_queue(self) -> bool:
        return self.variant in ("instance_fake", "instance_perturbation", "fakeclr")

    @property
    def perturbs(self) -> bool:
        return self.variant in ("instance_perturbation", "fakeclr")


@dataclass
class ContrastiveConfig:
    tau: float = 0.07
    tau_m: float = 0.01
    use_pseudocode_normalization: bool = False
    m_ema: float = 0.999

    def __post_init__(self):
        if not self.tau > 0 or not self.tau_m > 0:
            raise InvalidParameterError("temperatures must be positive")
        if not 0.0 <= self.m_ema <= 1.0:
            raise InvalidParameterError("m_ema must lie in [0, 1]")


@dataclass
class QueueConfig:
    n0: int = 1000
    n_min: int = 64
    # with the diversity-aware queue, capacity falls linearly to n0 * final_fraction
    final_fraction: float = 0.5

    def __post_init__(self):
        if self.n_min < 1 or self.n_min > self.n0:
            raise InvalidParameterError("need 1 <= n_min <= n0")
        if not 0.0 <= self.final_fraction <= 1.0:
            raise InvalidParameterError("final_fraction must lie in [0, 1]")

    def decay_rate(self, iterations: int, enabled: bool) -> float:
        if not enabled or iterations <= 0:
            return 0.0
        return self.n0 * (1.0 - self.final_fraction) / iterations


@dataclass
class LossWeights:
    lambda_f: float = 1.0
    lambda_r: float = 1.0
    lambda_g: float = 1.0

    def __post_init__(self):
        if min(self.lambda_f, self.lambda_r, self.lambda_g) < 0:
            raise InvalidParameterError("loss weights must be non-negative")


@dataclass
class OptimConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    # decay of the generator copy used for evaluation; 0 evaluates the live generator
    g_ema: float = 0.995

    def __post_init__(self):
        if not 0.0 <= self.g_ema < 1.0:
            raise InvalidParameterError("g_ema must lie in [0, 1)")


@dataclass
class EvalConfig:
    n_generated: int = 10_000
    n_reference: int = 10_000
    n_kid: int = 1000
    n_paths: int = 1000
    ppl_eps: float = 1e-4
    nn_delta: float = 0.05


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    queue: QueueConfig = field(default_factory=QueueConfig)
    perturbation: PerturbationConfig = field(default_factory=PerturbationConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    train_batch: int = 64
    enqueue_batch: int = 64
    iterations: int = 5000
    eval_interval: int = 500
    seed: int = 0
    rng: str = RNG_ALGORITHM
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.iterations < 0:
            raise InvalidParameterError("iterations must be non-negative")
        if self.eval_interval < 1:
            raise InvalidParameterError("eval_interval must be positive")
        if not 1 <= self.enqueue_batch <= self.train_batch:
            raise InvalidParameterError("need 1 <= enqueue_batch <= train_batch")
        if self.rng != RNG_ALGORITHM:
            raise InvalidParameterError(f"only the {RNG_ALGORITHM!r} generator is supported")
        if self.perturbation.mode is None and self.strategy.perturbs:
            self.perturbation.mode = "noise_related" if self.strategy.variant == "fakeclr" else "fixed"
        if self.strategy.variant == "fakeclr" and self.perturbation.mode == "fixed":
            raise InvalidParameterError("fakeclr requires a noise-dependent perturbation")

    # serialisation -------------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _build(cls, data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("out_dir", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def replace(self, **overrides: Any) -> "ExperimentConfig":
        """Copy with dotted-path overrides, e.g. ``replace(**{"strategy.variant": "baseline"})``."""
        return self.from_dict(apply_overrides(self.to_dict(), overrides))


# fields re-derived from the variant whenever the variant is overridden
_VARIANT_DERIVED = ("strategy.forgetting", "strategy.diversity_queue", "perturbation.mode")


def apply_overrides(data: dict, overrides: dict) -> dict:
    data = json.loads(json.dumps(data))
    if "strategy.variant" in overrides:
        for path in _VARIANT_DERIVED:
            if path not in overrides:
                _set_path(data, path, None)
    for path, value in overrides.items():
        _set_path(data, path, value)
    return data


def _set_path(data: dict, path: str, value: Any) -> None:
    keys = path.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def _build(cls, data: dict):
    if not isinstance(data, dict):
        raise InvalidParameterError(f"expected an object for {cls.__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise InvalidParameterError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = known[name].default_factory if known[name].default_factory is not dataclasses.MISSING else None
        if default is not None and dataclasses.is_dataclass(default):
            kwargs[name] = _build(default, value)
        else:
            kwargs[name] = value
    return cls(**kwargs)

