"""Shared helpers for building and inspecting the torch networks."""

from __future__ import annotations

import hashlib

import torch
from torch import nn

from .rng import RngStream


def initialize_parameters(module: nn.Module, rng: RngStream,
                          std: float = 0.02) -> None:
    """Deterministic init: conv kernels ~ N(0, std^2), norm scale 1, all
    biases 0.

    Each parameter draws from a stream derived from its own name, so the
    result does not depend on iteration order or on what other modules
    drew before.
    """
    with torch.no_grad():
        for name, p in sorted(module.named_parameters()):
            if p.dim() >= 2:
                g = rng.derive("param", name).generator()
                vals = g.normal(0.0, std, size=tuple(p.shape))
                p.copy_(torch.from_numpy(vals).to(p.dtype))
            elif name.endswith("bias"):
                p.zero_()
            else:
                p.fill_(1.0)


def parameter_hash(module: nn.Module) -> str:
    """SHA-256 over all parameter bytes; equal iff params are bit-identical."""
    h = hashlib.sha256()
    for name, p in sorted(module.named_parameters()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
