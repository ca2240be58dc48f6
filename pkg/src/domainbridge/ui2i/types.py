"""Configuration and record types for unsupervised image-to-image training."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from ..errors import ConfigError, SpecError


class DomainCode(Enum):
    """The two translation domains, encoded as a one-hot conditioning vector."""

    SOURCE = 0
    TARGET = 1

    def one_hot(self) -> tuple[float, float]:
        return (1.0, 0.0) if self is DomainCode.SOURCE else (0.0, 1.0)


@dataclass(frozen=True)
class LossWeights:
    adversarial: float = 1.0
    domain: float = 1.0
    cycle: float = 10.0
    identity: float = 10.0

    def __post_init__(self) -> None:
        for name in ("adversarial", "domain", "cycle", "identity"):
            if getattr(self, name) < 0:
                raise SpecError(f"loss weight {name} must be nonnegative")
        # Cycle and identity constraints are what keep class content intact;
        # they are mandatory.
        if self.cycle <= 0 or self.identity <= 0:
            raise SpecError("cycle and identity weights must be strictly positive")


@dataclass(frozen=True)
class UI2IConfig:
    total_iterations: int = 300_000
    checkpoint_every: int = 10_000
    batch_size: int = 16
    gen_lr: float = 1e-4
    disc_lr: float = 1e-4
    betas: tuple[float, float] = (0.5, 0.999)
    critic_steps: int = 5
    grad_penalty: float = 10.0
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    input_size: int = 128
    backend_id: str = "cond_cycle"
    base_channels: int = 64
    n_res_blocks: int = 6

    def __post_init__(self) -> None:
        if self.total_iterations < self.checkpoint_every:
            raise ConfigError(
                f"total_iterations ({self.total_iterations}) must be >= "
                f"checkpoint_every ({self.checkpoint_every})"
            )
        if self.checkpoint_every < 1 or self.total_iterations % self.checkpoint_every:
            raise ConfigError(
                f"checkpoint_every ({self.checkpoint_every}) must divide "
                f"total_iterations ({self.total_iterations})"
            )
        if self.batch_size < 1 or self.critic_steps < 1:
            raise ConfigError("batch_size and critic_steps must be >= 1")
        # Two stride-2 stages each way: odd sizes would not round-trip.
        if self.input_size < 8 or self.input_size % 4:
            raise ConfigError(
                f"input_size must be a multiple of 4 and >= 8, got {self.input_size}"
            )

    def to_dict(self) -> dict:
        return {
            "total_iterations": self.total_iterations,
            "checkpoint_every": self.checkpoint_every,
            "batch_size": self.batch_size,
            "gen_lr": self.gen_lr,
            "disc_lr": self.disc_lr,
            "betas": list(self.betas),
            "critic_steps": self.critic_steps,
            "grad_penalty": self.grad_penalty,
            "weights": {
                "adversarial": self.weights.adversarial,
                "domain": self.weights.domain,
                "cycle": self.weights.cycle,
                "identity": self.weights.identity,
            },
            "seed": self.seed,
            "input_size": self.input_size,
            "backend_id": self.backend_id,
            "base_channels": self.base_channels,
            "n_res_blocks": self.n_res_blocks,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "UI2IConfig":
        kwargs = dict(raw)
        if "betas" in kwargs:
            kwargs["betas"] = tuple(kwargs["betas"])
        if "weights" in kwargs:
            kwargs["weights"] = LossWeights(**kwargs["weights"])
        return cls(**kwargs)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class CheckpointRecord:
    """One saved generator state, tagged with its training iteration."""

    iteration: int
    path: Path
    backend_id: str
    order_index: int


def plan_checkpoints(config: UI2IConfig) -> list[int]:
    """Iterations at which checkpoints will be written (dry-run planning)."""
    return list(
        range(config.checkpoint_every, config.total_iterations + 1, config.checkpoint_every)
    )


def checkpoint_filename(iteration: int) -> str:
    return f"ckpt_{iteration:07d}.bin"
