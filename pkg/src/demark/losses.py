"""Training objective: adversarial + weighted L1 + weighted perceptual.

total = L_adv + alpha * L_l1 + beta * L_per, with alpha=10 and beta=1e-4
by default. Probabilities are clamped to [eps, 1-eps] before any log so a
saturated discriminator yields a large finite loss instead of an inf.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import torch
from torch import nn

from .discriminator import PatchScoreMap
from .errors import ConfigError, DataError, MissingFileError, NumericError
from .rng import RngStream

PROB_EPS = 1e-7

LOSS_CONFIGS = ("l1", "perceptual", "l1+perceptual",
                "l1+perceptual+gan", "l1+perceptual+cgan")
_ALIASES = {"+gan": "l1+perceptual+gan", "+cgan": "l1+perceptual+cgan"}


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 10.0  # L1 weight
    beta: float = 1e-4   # perceptual weight

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossPlan:
    """Which objective terms are active, decoded from a config name."""
    use_l1: bool
    use_perceptual: bool
    adversarial: str | None  # None, "gan" (unconditional) or "cgan"

    @property
    def needs_discriminator_update(self) -> bool:
        return self.adversarial is not None


def parse_loss_config(name: str) -> LossPlan:
    canonical = _ALIASES.get(name.strip().lower(), name.strip().lower())
    if canonical not in LOSS_CONFIGS:
        raise ConfigError(
            f"unknown loss config {name!r}; expected one of {LOSS_CONFIGS}")
    parts = canonical.split("+")
    adv = "cgan" if "cgan" in parts else "gan" if "gan" in parts else None
    return LossPlan("l1" in parts, "perceptual" in parts, adv)


# --------------------------------------------------------------------------
# feature extractors for the perceptual term


class FeatureExtractor(nn.Module):
    """Frozen feature map phi; inputs are image batches in [0, 1]."""
    provenance: str = "unset"

    def features(self, x: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def freeze(self) -> "FeatureExtractor":
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self


class IdentityExtractor(FeatureExtractor):
    """phi(x) = x; collapses the perceptual term onto plain pixel MSE."""
    provenance = "identity"

    def __init__(self):
        super().__init__()
        self.freeze()

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return x


class RandomConvExtractor(FeatureExtractor):
    """Small conv stack with frozen seed-derived weights.

    Random but fixed features still define a stable content distance, which
    keeps training runs fully offline and reproducible.
    """

    def __init__(self, rng: RngStream, in_channels: int = 3,
                 widths: tuple[int, ...] = (16, 32)):
        super().__init__()
        self.provenance = f"random-conv(seed={rng.seed})"
        layers: list[nn.Module] = []
        ch = in_channels
        for i, w in enumerate(widths):
            stride = 1 if i == 0 else 2
            layers += [nn.Conv2d(ch, w, 3, stride=stride, padding=1),
                       nn.ReLU(inplace=True)]
            ch = w
        self.net = nn.Sequential(*layers)
        with torch.no_grad():
            for name, p in sorted(self.net.named_parameters()):
                if p.dim() >= 2:
                    fan_in = p.shape[1] * p.shape[2] * p.shape[3]
                    std = math.sqrt(2.0 / fan_in)
                    g = rng.derive("extractor", name).generator()
                    p.copy_(torch.from_numpy(
                        g.normal(0.0, std, size=tuple(p.shape))).to(p.dtype))
                else:
                    p.zero_()
        self.freeze()

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


class Vgg16Extractor(FeatureExtractor):
    """VGG16 up to relu2_2, loaded from a local weights file.

    The file must be a torchvision-format VGG16 state dict; a sha256 can be
    pinned to detect swapped or truncated weights. Inputs in [0, 1] are
    normalized with the ImageNet statistics the backbone was trained with.
    """

    def __init__(self, weights_path: str, sha256: str | None = None):
        super().__init__()
        try:
            payload = open(weights_path, "rb").read()
        except FileNotFoundError as e:
            raise MissingFileError(f"VGG16 weights not found: {weights_path}") from e
        digest = hashlib.sha256(payload).hexdigest()
        if sha256 is not None and digest != sha256.lower():
            raise ConfigError(
                f"VGG16 weights checksum mismatch: expected {sha256}, "
                f"got {digest}")
        from torchvision.models import vgg16
        backbone = vgg16(weights=None)
        try:
            state = torch.load(weights_path, map_location="cpu",
                               weights_only=True)
            backbone.load_state_dict(state)
        except DataError:
            raise
        except Exception as e:
            raise DataError(
                f"unreadable VGG16 weights file {weights_path}: {e}") from e
        self.net = backbone.features[:9]  # through relu2_2
        self.provenance = f"vgg16-relu2_2(sha256={digest[:12]})"
        mean = torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1)
        self.register_buffer("mean", mean)
        self.register_buffer("std", std)
        self.freeze()

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.net((x - self.mean) / self.std)


# --------------------------------------------------------------------------
# loss terms


def _check_shapes(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def l1_loss(output: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over every element."""
    _check_shapes(output, target)
    return (output - target).abs().mean()


def perceptual_loss(extractor: FeatureExtractor, output: torch.Tensor,
                    target: torch.Tensor) -> torch.Tensor:
    """Mean squared error between frozen feature maps of the two batches."""
    _check_shapes(output, target)
    fa = extractor.features(output)
    fb = extractor.features(target)
    return (fa - fb).pow(2).mean()


def _probs(x) -> torch.Tensor:
    p = x.probs if isinstance(x, PatchScoreMap) else x
    return p.clamp(PROB_EPS, 1.0 - PROB_EPS)


def adversarial_d_loss(d_real, d_fake) -> torch.Tensor:
    """-(mean log D(real) + mean log(1 - D(fake))); accepts prob tensors or
    patch score maps."""
    real = _probs(d_real)
    fake = _probs(d_fake)
    return -(real.log().mean() + (1.0 - fake).log().mean())


def adversarial_g_loss(d_fake) -> torch.Tensor:
    """Non-saturating generator loss: -mean log D(fake)."""
    return -_probs(d_fake).log().mean()


def scalar(x) -> float:
    """Plain float of a loss term, tensor or number, without grad noise."""
    return float(x.detach()) if isinstance(x, torch.Tensor) else float(x)


def total_generator_loss(adv, l1, perceptual, weights: LossWeights):
    """adv + alpha*l1 + beta*perceptual; rejects non-finite operands."""
    for name, term in (("adversarial", adv), ("l1", l1),
                       ("perceptual", perceptual)):
        val = scalar(term)
        if not math.isfinite(val):
            raise NumericError(f"non-finite {name} loss term: {val}")
    return adv + weights.alpha * l1 + weights.beta * perceptual
