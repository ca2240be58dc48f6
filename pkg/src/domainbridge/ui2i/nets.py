"""Generator and critic networks for conditional image translation.

All interfaces exchange images in [0,1]; rescaling to the internal [-1,1]
working range happens inside the modules. Instance normalization keeps every
forward pass batch-independent, so inference results cannot depend on batch
composition.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .types import DomainCode

N_DOMAINS = 2


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(channels, channels, 3, 1, 1),
            nn.InstanceNorm2d(channels, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, 1, 1),
            nn.InstanceNorm2d(channels, affine=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.block(x)


def _tile_condition(x: torch.Tensor, code: DomainCode) -> torch.Tensor:
    """Append the one-hot domain code as constant feature planes."""
    b, _, h, w = x.shape
    vec = torch.tensor(code.one_hot(), dtype=x.dtype, device=x.device)
    planes = vec.view(1, N_DOMAINS, 1, 1).expand(b, N_DOMAINS, h, w)
    return torch.cat([x, planes], dim=1)


class ConditionalGenerator(nn.Module):
    """Single generator conditioned on the requested output domain:
    2x downsampling, residual trunk, 2x upsampling, tanh output."""

    def __init__(self, base_channels: int = 64, n_res_blocks: int = 6):
        super().__init__()
        c = base_channels
        self.net = nn.Sequential(
            nn.Conv2d(1 + N_DOMAINS, c, 7, 1, 3),
            nn.InstanceNorm2d(c, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, c * 2, 4, 2, 1),
            nn.InstanceNorm2d(c * 2, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(c * 2, c * 4, 4, 2, 1),
            nn.InstanceNorm2d(c * 4, affine=True),
            nn.ReLU(inplace=True),
            *[ResidualBlock(c * 4) for _ in range(n_res_blocks)],
            nn.ConvTranspose2d(c * 4, c * 2, 4, 2, 1),
            nn.InstanceNorm2d(c * 2, affine=True),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(c * 2, c, 4, 2, 1),
            nn.InstanceNorm2d(c, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, 1, 7, 1, 3),
            nn.Tanh(),
        )

    def forward(self, images01: torch.Tensor, to: DomainCode) -> torch.Tensor:
        x = images01 * 2.0 - 1.0
        y = self.net(_tile_condition(x, to))
        return (y + 1.0) / 2.0


class PlainGenerator(nn.Module):
    """Unconditional generator with the same trunk; used in pairs by the
    two-generator backend."""

    def __init__(self, base_channels: int = 64, n_res_blocks: int = 6):
        super().__init__()
        c = base_channels
        self.net = nn.Sequential(
            nn.Conv2d(1, c, 7, 1, 3),
            nn.InstanceNorm2d(c, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, c * 2, 4, 2, 1),
            nn.InstanceNorm2d(c * 2, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(c * 2, c * 4, 4, 2, 1),
            nn.InstanceNorm2d(c * 4, affine=True),
            nn.ReLU(inplace=True),
            *[ResidualBlock(c * 4) for _ in range(n_res_blocks)],
            nn.ConvTranspose2d(c * 4, c * 2, 4, 2, 1),
            nn.InstanceNorm2d(c * 2, affine=True),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(c * 2, c, 4, 2, 1),
            nn.InstanceNorm2d(c, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(c, 1, 7, 1, 3),
            nn.Tanh(),
        )

    def forward(self, images01: torch.Tensor) -> torch.Tensor:
        return (self.net(images01 * 2.0 - 1.0) + 1.0) / 2.0


class Critic(nn.Module):
    """PatchGAN-style critic with two heads: an unbounded realness map and a
    global domain-classification head."""

    def __init__(self, input_size: int, base_channels: int = 64):
        super().__init__()
        # Keep the final feature map at least 2x2 for small inputs.
        n_strided = 4
        while input_size // (2**n_strided) < 2:
            n_strided -= 1
        layers: list[nn.Module] = []
        c_in, c_out = 1, base_channels
        for _ in range(n_strided):
            layers += [nn.Conv2d(c_in, c_out, 4, 2, 1), nn.LeakyReLU(0.01, inplace=True)]
            c_in, c_out = c_out, c_out * 2
        self.trunk = nn.Sequential(*layers)
        feat = input_size // (2**n_strided)
        self.head_real = nn.Conv2d(c_in, 1, 3, 1, 1)
        self.head_domain = nn.Conv2d(c_in, N_DOMAINS, feat, 1, 0)

    def forward(self, images01: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.trunk(images01 * 2.0 - 1.0)
        realness = self.head_real(h)
        domain_logits = self.head_domain(h).flatten(1)
        return realness, domain_logits
