"""Translation-model backends behind a common interface.

The sweep and translate operations only ever see the ``TranslationModel``
surface, so any backend registered here (or by downstream code) can drive the
pipeline. Two are built in:

* ``cond_cycle``   - one domain-conditioned generator plus a critic with
                     realness and domain-classification heads, trained with a
                     gradient-penalty objective.
* ``twin_cycle``   - a plain two-generator cycle-consistent model without the
                     domain head, trained least-squares; exists to prove the
                     backend seam.
"""

from __future__ import annotations

from pathlib import Path
from typing import Protocol, runtime_checkable

import torch
import torch.nn.functional as F

from .nets import ConditionalGenerator, Critic, PlainGenerator
from .types import DomainCode, UI2IConfig


@runtime_checkable
class TranslationModel(Protocol):
    """Anything that can map a batch of [0,1] images into a target domain."""

    backend_id: str

    def translate(self, images01: torch.Tensor, to: DomainCode) -> torch.Tensor: ...


BACKEND_REGISTRY: dict[str, type] = {}


def register_backend(backend_id: str, backend_cls: type) -> None:
    BACKEND_REGISTRY[backend_id] = backend_cls


def get_backend(backend_id: str) -> type:
    if backend_id not in BACKEND_REGISTRY:
        raise KeyError(
            f"unknown backend {backend_id!r}; registered: {sorted(BACKEND_REGISTRY)}"
        )
    return BACKEND_REGISTRY[backend_id]


def load_checkpoint_payload(path: Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint file not found: {path}")
    return torch.load(path, weights_only=False)


class CondCycleBackend:
    """Conditional single-generator backend (the default)."""

    backend_id = "cond_cycle"

    def __init__(self, config: UI2IConfig):
        self.config = config
        self.input_size = config.input_size
        self.generator = ConditionalGenerator(config.base_channels, config.n_res_blocks)
        self.critic = Critic(config.input_size, config.base_channels)
        self.opt_g = torch.optim.Adam(
            self.generator.parameters(), lr=config.gen_lr, betas=config.betas
        )
        self.opt_d = torch.optim.Adam(
            self.critic.parameters(), lr=config.disc_lr, betas=config.betas
        )

    @classmethod
    def build(cls, config: UI2IConfig) -> "CondCycleBackend":
        return cls(config)

    def _gradient_penalty(self, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
        alpha = torch.rand(real.size(0), 1, 1, 1, dtype=real.dtype)
        mixed = (alpha * real + (1 - alpha) * fake).requires_grad_(True)
        realness, _ = self.critic(mixed)
        grads = torch.autograd.grad(
            outputs=realness.sum(), inputs=mixed, create_graph=True
        )[0]
        norms = grads.flatten(1).norm(2, dim=1)
        return ((norms - 1.0) ** 2).mean()

    def train_step(
        self, batch_src: torch.Tensor, batch_tgt: torch.Tensor, iteration: int
    ) -> dict[str, float]:
        from .training import compute_losses  # avoid import cycle

        cfg = self.config
        w = cfg.weights
        src_code = torch.zeros(batch_src.size(0), dtype=torch.long)
        tgt_code = torch.ones(batch_tgt.size(0), dtype=torch.long)

        # Critic update runs every iteration.
        with torch.no_grad():
            fake_tgt = self.generator(batch_src, DomainCode.TARGET)
            fake_src = self.generator(batch_tgt, DomainCode.SOURCE)
        real_s, dom_s = self.critic(batch_src)
        real_t, dom_t = self.critic(batch_tgt)
        fake_s_score, _ = self.critic(fake_src)
        fake_t_score, _ = self.critic(fake_tgt)
        critic_loss = (
            fake_s_score.mean() + fake_t_score.mean() - real_s.mean() - real_t.mean()
        ) / 2.0
        gp = (
            self._gradient_penalty(batch_src, fake_src)
            + self._gradient_penalty(batch_tgt, fake_tgt)
        ) / 2.0
        domain_real = (
            F.cross_entropy(dom_s, src_code) + F.cross_entropy(dom_t, tgt_code)
        ) / 2.0
        d_total = critic_loss + cfg.grad_penalty * gp + w.domain * domain_real
        self.opt_d.zero_grad()
        d_total.backward()
        self.opt_d.step()

        out = {
            "critic": critic_loss.item(),
            "gradient_penalty": gp.item(),
            "domain_real": domain_real.item(),
        }

        # Generator update every critic_steps iterations.
        if iteration % cfg.critic_steps == 0:
            losses = compute_losses(self.generator, self.critic, batch_src, batch_tgt, w)
            self.opt_g.zero_grad()
            losses["total"].backward()
            self.opt_g.step()
            out.update({k: v.item() for k, v in losses.items()})
        return out

    def translate(self, images01: torch.Tensor, to: DomainCode) -> torch.Tensor:
        self.generator.eval()
        with torch.no_grad():
            return self.generator(images01, to).clamp(0.0, 1.0)

    def hyper(self) -> dict:
        return {
            "base_channels": self.config.base_channels,
            "n_res_blocks": self.config.n_res_blocks,
            "input_size": self.config.input_size,
        }

    def state(self) -> dict:
        return {
            "generator": self.generator.state_dict(),
            "critic": self.critic.state_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "torch_rng": torch.get_rng_state(),
        }

    def restore(self, state: dict) -> None:
        self.generator.load_state_dict(state["generator"])
        self.critic.load_state_dict(state["critic"])
        self.opt_g.load_state_dict(state["opt_g"])
        self.opt_d.load_state_dict(state["opt_d"])
        torch.set_rng_state(state["torch_rng"])

    @classmethod
    def load(cls, path: Path) -> "CondCycleBackend":
        payload = load_checkpoint_payload(path)
        hyper = payload["hyper"]
        config = UI2IConfig(
            total_iterations=1,
            checkpoint_every=1,
            base_channels=hyper["base_channels"],
            n_res_blocks=hyper["n_res_blocks"],
            input_size=hyper["input_size"],
        )
        backend = cls(config)
        backend.generator.load_state_dict(payload["state"]["generator"])
        backend.generator.eval()
        return backend


class TwinCycleBackend:
    """Two plain generators with per-domain least-squares discriminators."""

    backend_id = "twin_cycle"

    def __init__(self, config: UI2IConfig):
        self.config = config
        self.input_size = config.input_size
        self.g_to_source = PlainGenerator(config.base_channels, config.n_res_blocks)
        self.g_to_target = PlainGenerator(config.base_channels, config.n_res_blocks)
        self.d_source = Critic(config.input_size, config.base_channels)
        self.d_target = Critic(config.input_size, config.base_channels)
        gen_params = list(self.g_to_source.parameters()) + list(
            self.g_to_target.parameters()
        )
        disc_params = list(self.d_source.parameters()) + list(
            self.d_target.parameters()
        )
        self.opt_g = torch.optim.Adam(gen_params, lr=config.gen_lr, betas=config.betas)
        self.opt_d = torch.optim.Adam(disc_params, lr=config.disc_lr, betas=config.betas)

    @classmethod
    def build(cls, config: UI2IConfig) -> "TwinCycleBackend":
        return cls(config)

    def train_step(
        self, batch_src: torch.Tensor, batch_tgt: torch.Tensor, iteration: int
    ) -> dict[str, float]:
        cfg = self.config
        w = cfg.weights

        with torch.no_grad():
            fake_src = self.g_to_source(batch_tgt)
            fake_tgt = self.g_to_target(batch_src)
        d_loss = torch.zeros(())
        for d, real, fake in (
            (self.d_source, batch_src, fake_src),
            (self.d_target, batch_tgt, fake_tgt),
        ):
            real_score, _ = d(real)
            fake_score, _ = d(fake)
            d_loss = d_loss + 0.5 * (
                F.mse_loss(real_score, torch.ones_like(real_score))
                + F.mse_loss(fake_score, torch.zeros_like(fake_score))
            )
        self.opt_d.zero_grad()
        d_loss.backward()
        self.opt_d.step()
        out = {"critic": d_loss.item()}

        if iteration % cfg.critic_steps == 0:
            fake_src = self.g_to_source(batch_tgt)
            fake_tgt = self.g_to_target(batch_src)
            adv = 0.5 * (
                F.mse_loss(self.d_source(fake_src)[0],
                           torch.ones_like(self.d_source(fake_src)[0]))
                + F.mse_loss(self.d_target(fake_tgt)[0],
                             torch.ones_like(self.d_target(fake_tgt)[0]))
            )
            cycle = 0.5 * (
                (self.g_to_source(fake_tgt) - batch_src).abs().mean()
                + (self.g_to_target(fake_src) - batch_tgt).abs().mean()
            )
            identity = 0.5 * (
                (self.g_to_source(batch_src) - batch_src).abs().mean()
                + (self.g_to_target(batch_tgt) - batch_tgt).abs().mean()
            )
            total = w.adversarial * adv + w.cycle * cycle + w.identity * identity
            self.opt_g.zero_grad()
            total.backward()
            self.opt_g.step()
            out.update(
                {
                    "adversarial": adv.item(),
                    "domain_classification": 0.0,
                    "cycle": cycle.item(),
                    "identity": identity.item(),
                    "total": total.item(),
                }
            )
        return out

    def translate(self, images01: torch.Tensor, to: DomainCode) -> torch.Tensor:
        gen = self.g_to_source if to is DomainCode.SOURCE else self.g_to_target
        gen.eval()
        with torch.no_grad():
            return gen(images01).clamp(0.0, 1.0)

    def hyper(self) -> dict:
        return {
            "base_channels": self.config.base_channels,
            "n_res_blocks": self.config.n_res_blocks,
            "input_size": self.config.input_size,
        }

    def state(self) -> dict:
        return {
            "g_to_source": self.g_to_source.state_dict(),
            "g_to_target": self.g_to_target.state_dict(),
            "d_source": self.d_source.state_dict(),
            "d_target": self.d_target.state_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "torch_rng": torch.get_rng_state(),
        }

    def restore(self, state: dict) -> None:
        self.g_to_source.load_state_dict(state["g_to_source"])
        self.g_to_target.load_state_dict(state["g_to_target"])
        self.d_source.load_state_dict(state["d_source"])
        self.d_target.load_state_dict(state["d_target"])
        self.opt_g.load_state_dict(state["opt_g"])
        self.opt_d.load_state_dict(state["opt_d"])
        torch.set_rng_state(state["torch_rng"])

    @classmethod
    def load(cls, path: Path) -> "TwinCycleBackend":
        payload = load_checkpoint_payload(path)
        hyper = payload["hyper"]
        config = UI2IConfig(
            total_iterations=1,
            checkpoint_every=1,
            base_channels=hyper["base_channels"],
            n_res_blocks=hyper["n_res_blocks"],
            input_size=hyper["input_size"],
        )
        backend = cls(config)
        backend.g_to_source.load_state_dict(payload["state"]["g_to_source"])
        backend.g_to_target.load_state_dict(payload["state"]["g_to_target"])
        backend.g_to_source.eval()
        backend.g_to_target.eval()
        return backend


register_backend(CondCycleBackend.backend_id, CondCycleBackend)
register_backend(TwinCycleBackend.backend_id, TwinCycleBackend)
