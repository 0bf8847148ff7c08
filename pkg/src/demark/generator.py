"""U-Net generator: encoder-decoder with skip connections.

Down path halves the spatial side and doubles channels (capped) per block;
the up path mirrors it, consuming the concatenation of the previous decoder
output with the matching encoder activation. Output is tanh-squashed into
the network range [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError
from .netops import initialize_parameters
from .rng import RngStream


@dataclass(frozen=True)
class GeneratorConfig:
    depth: int = 6
    base_channels: int = 64
    input_side: int = 256
    in_channels: int = 3
    out_channels: int = 3
    channel_cap: int = 512

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be positive")
        if self.input_side < 2 ** self.depth or self.input_side % 2 ** self.depth:
            raise ConfigError(
                f"input_side {self.input_side} not divisible by 2^depth "
                f"({2 ** self.depth})")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be positive")

    def encoder_channels(self) -> list[int]:
        return [min(self.base_channels * 2 ** i, self.channel_cap)
                for i in range(self.depth)]


def _norm(ch: int) -> nn.Module:
    # Per-instance statistics: batch size 1 makes batch norm degenerate.
    return nn.InstanceNorm2d(ch, affine=True, track_running_stats=False)


def _down_block(in_ch: int, out_ch: int, normalize: bool) -> nn.Sequential:
    # A conv bias feeding a norm is a no-op (the mean subtraction eats it).
    layers: list[nn.Module] = [
        nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1, bias=not normalize)]
    if normalize:
        layers.append(_norm(out_ch))
    layers.append(nn.LeakyReLU(0.2, inplace=True))
    return nn.Sequential(*layers)


def _up_block(in_ch: int, out_ch: int, final: bool) -> nn.Sequential:
    layers: list[nn.Module] = [
        nn.ConvTranspose2d(in_ch, out_ch, 4, stride=2, padding=1, bias=final)]
    if final:
        layers.append(nn.Tanh())
    else:
        layers.append(_norm(out_ch))
        layers.append(nn.ReLU(inplace=True))
    return nn.Sequential(*layers)


class UNetGenerator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        enc = cfg.encoder_channels()

        downs = []
        for i in range(cfg.depth):
            in_ch = cfg.in_channels if i == 0 else enc[i - 1]
            # First block: raw pixels need no renormalization. Innermost:
            # spatial side can reach 1x1, where instance stats are undefined.
            normalize = 0 < i < cfg.depth - 1
            downs.append(_down_block(in_ch, enc[i], normalize))
        self.downs = nn.ModuleList(downs)

        ups = []
        for i in range(cfg.depth - 1, -1, -1):
            in_ch = enc[i] if i == cfg.depth - 1 else enc[i] * 2
            out_ch = cfg.out_channels if i == 0 else enc[i - 1]
            ups.append(_up_block(in_ch, out_ch, final=i == 0))
        self.ups = nn.ModuleList(ups)  # innermost first

    def forward(self, x: torch.Tensor,
                ablate_skip: int | None = None) -> torch.Tensor:
        """Map a conditioned batch to candidates in [-1, 1].

        ablate_skip zeroes the skip tensor from encoder block i; used to
        probe how much the output depends on a given skip path.
        """
        cfg = self.cfg
        if x.dim() != 4 or x.shape[1] != cfg.in_channels:
            raise ValueError(f"expected NCHW with C={cfg.in_channels}, "
                             f"got {tuple(x.shape)}")
        if x.shape[2] != cfg.input_side or x.shape[3] != cfg.input_side:
            raise ValueError(f"expected side {cfg.input_side}, "
                             f"got {tuple(x.shape[2:])}")

        skips: list[torch.Tensor] = []
        h = x
        for down in self.downs:
            h = down(h)
            skips.append(h)

        for idx, up in enumerate(self.ups):
            i = cfg.depth - 1 - idx
            if i < cfg.depth - 1:
                skip = skips[i]
                if ablate_skip == i:
                    skip = torch.zeros_like(skip)
                h = torch.cat([h, skip], dim=1)
            h = up(h)
        return h


def build_generator(cfg: GeneratorConfig, rng: RngStream) -> UNetGenerator:
    model = UNetGenerator(cfg)
    initialize_parameters(model, rng)
    return model
