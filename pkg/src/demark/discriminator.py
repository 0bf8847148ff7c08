"""Patch-based conditional discriminator.

The patch kind scores overlapping receptive fields and returns a grid of
per-patch real-probabilities; the image kind reuses the same trunk and
pools to one probability per image. The conditional variant consumes the
watermarked input concatenated with the candidate, so it judges the pair,
not the candidate alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError
from .netops import initialize_parameters
from .rng import RngStream

KINDS = ("patch", "image")


@dataclass(frozen=True)
class DiscriminatorConfig:
    kind: str = "patch"
    base_channels: int = 64
    n_strided: int = 3
    channel_cap: int = 512
    conditional: bool = True
    image_channels: int = 3

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.base_channels < 1 or self.n_strided < 1:
            raise ConfigError("base_channels and n_strided must be positive")

    @property
    def in_channels(self) -> int:
        return self.image_channels * (2 if self.conditional else 1)


@dataclass
class PatchScoreMap:
    """Grid of per-patch probabilities plus the patch extent each one saw."""
    probs: torch.Tensor  # (N, 1, H', W') in (0, 1)
    receptive_field: int

    def grid(self, index: int = 0) -> np.ndarray:
        return self.probs[index, 0].detach().cpu().numpy()


def aggregate_real_probability(score_map: PatchScoreMap) -> torch.Tensor:
    """Mean patch probability; differentiable, so usable inside losses."""
    if score_map.probs.numel() == 0:
        raise ValueError("empty score map")
    return score_map.probs.mean()


class PatchDiscriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        layers: list[nn.Module] = []
        self._geometry: list[tuple[int, int]] = []  # (kernel, stride) per conv

        ch = cfg.base_channels
        layers += [nn.Conv2d(cfg.in_channels, ch, 4, stride=2, padding=1),
                   nn.LeakyReLU(0.2, inplace=True)]
        self._geometry.append((4, 2))
        for _ in range(cfg.n_strided - 1):
            nxt = min(ch * 2, cfg.channel_cap)
            # bias omitted where a norm immediately follows: mean
            # subtraction would cancel it anyway
            layers += [nn.Conv2d(ch, nxt, 4, stride=2, padding=1, bias=False),
                       nn.InstanceNorm2d(nxt, affine=True,
                                         track_running_stats=False),
                       nn.LeakyReLU(0.2, inplace=True)]
            self._geometry.append((4, 2))
            ch = nxt
        nxt = min(ch * 2, cfg.channel_cap)
        layers += [nn.Conv2d(ch, nxt, 4, stride=1, padding=1, bias=False),
                   nn.InstanceNorm2d(nxt, affine=True,
                                     track_running_stats=False),
                   nn.LeakyReLU(0.2, inplace=True)]
        self._geometry.append((4, 1))
        self.trunk = nn.Sequential(*layers)
        self._trunk_channels = nxt

        if cfg.kind == "patch":
            self.head = nn.Conv2d(nxt, 1, 4, stride=1, padding=1)
            self._geometry.append((4, 1))
        else:
            self.pool_head = nn.Linear(nxt, 1)

    def receptive_field(self) -> int:
        """Input extent seen by one output unit, from the conv geometry."""
        rf, jump = 1, 1
        for kernel, stride in self._geometry:
            rf += (kernel - 1) * jump
            jump *= stride
        return rf

    def output_side(self, input_side: int) -> int:
        side = input_side
        for kernel, stride in self._geometry:
            side = (side + 2 * 1 - kernel) // stride + 1
        return side

    def forward(self, candidate: torch.Tensor,
                condition: torch.Tensor | None = None):
        """Score a candidate batch; returns PatchScoreMap or (N,) image probs.

        The unconditional variant ignores any supplied condition entirely.
        """
        if self.cfg.conditional:
            if condition is None:
                raise ValueError("conditional discriminator needs a condition")
            if condition.shape != candidate.shape:
                raise ValueError(
                    f"condition shape {tuple(condition.shape)} != candidate "
                    f"shape {tuple(candidate.shape)}")
            h = torch.cat([condition, candidate], dim=1)
        else:
            h = candidate
        if h.dim() != 4 or h.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected NCHW with C={self.cfg.in_channels}, "
                             f"got {tuple(h.shape)}")

        feats = self.trunk(h)
        if self.cfg.kind == "image":
            pooled = feats.mean(dim=(2, 3))
            return torch.sigmoid(self.pool_head(pooled)).squeeze(1)
        logits = self.head(feats)
        return PatchScoreMap(torch.sigmoid(logits), self.receptive_field())


def build_discriminator(cfg: DiscriminatorConfig,
                        rng: RngStream) -> PatchDiscriminator:
    model = PatchDiscriminator(cfg)
    initialize_parameters(model, rng)
    return model
