"""Adversarial training loop for the removal generator.

Each step alternates one discriminator update (real pair vs detached fake)
with one generator update on the combined objective. The discriminator is
always constructed so runs differ only in which terms are enabled, but it
is updated only when an adversarial term is active.

Conversion convention: dataset images live in [0, 1]; networks consume and
produce [-1, 1]. Content losses (L1, perceptual) are computed back in
[0, 1] space at the module boundary; adversarial terms see network range.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .discriminator import DiscriminatorConfig, PatchDiscriminator, build_discriminator
from .errors import ConfigError, DataError, MissingFileError, NumericError
from .generator import GeneratorConfig, UNetGenerator, build_generator
from .image_core import Image, load_image
from .losses import (FeatureExtractor, IdentityExtractor, LossPlan,
                     LossWeights, RandomConvExtractor, Vgg16Extractor,
                     adversarial_d_loss, adversarial_g_loss, l1_loss,
                     parse_loss_config, perceptual_loss, scalar,
                     total_generator_loss)
from .metrics import EvalReport, evaluate_rows
from .rng import RngStream
from .watermark_synthesis import DatasetManifest, ManifestRow

CHECKPOINT_VERSION = 1

EXTRACTOR_KINDS = ("identity", "random", "vgg16")


@dataclass(frozen=True)
class ExtractorConfig:
    kind: str = "random"
    weights_path: str | None = None
    sha256: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in EXTRACTOR_KINDS:
            raise ConfigError(
                f"extractor kind must be one of {EXTRACTOR_KINDS}, "
                f"got {self.kind!r}")
        if self.kind == "vgg16" and not self.weights_path:
            raise ConfigError("vgg16 extractor needs weights_path")


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 20
    learning_rate: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 1
    loss_config: str = "l1+perceptual+cgan"
    weights: LossWeights = field(default_factory=LossWeights)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator_kind: str = "patch"
    disc_base_channels: int = 64
    disc_n_strided: int = 3
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    checkpoint_interval: int = 0  # steps; 0 disables interval checkpoints

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ConfigError("adam betas must be in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        parse_loss_config(self.loss_config)  # raises on unknown names

    def plan(self) -> LossPlan:
        return parse_loss_config(self.loss_config)


def config_to_dict(cfg: TrainConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["weights"] = LossWeights(**d.get("weights", {}))
    d["generator"] = GeneratorConfig(**d.get("generator", {}))
    d["extractor"] = ExtractorConfig(**d.get("extractor", {}))
    return TrainConfig(**d)


def build_extractor(cfg: ExtractorConfig, rng: RngStream) -> FeatureExtractor:
    if cfg.kind == "identity":
        return IdentityExtractor().freeze()
    if cfg.kind == "random":
        return RandomConvExtractor(rng)
    path = cfg.weights_path
    env = os.environ.get("DEMARK_VGG16_WEIGHTS")
    if env:
        path = env
    return Vgg16Extractor(path, cfg.sha256)


@dataclass
class TrainState:
    cfg: TrainConfig
    plan: LossPlan
    generator: UNetGenerator
    discriminator: PatchDiscriminator
    extractor: FeatureExtractor
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    step: int = 0
    epoch: int = 0


def build_state(cfg: TrainConfig) -> TrainState:
    root = RngStream(cfg.seed)
    plan = cfg.plan()
    gen = build_generator(cfg.generator, root.derive("generator"))
    dcfg = DiscriminatorConfig(
        kind=cfg.discriminator_kind,
        base_channels=cfg.disc_base_channels,
        n_strided=cfg.disc_n_strided,
        conditional=plan.adversarial != "gan",
        image_channels=cfg.generator.out_channels)
    disc = build_discriminator(dcfg, root.derive("discriminator"))
    extractor = build_extractor(cfg.extractor, root.derive("extractor"))
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.learning_rate,
                             betas=betas, eps=cfg.adam_eps)
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.learning_rate,
                             betas=betas, eps=cfg.adam_eps)
    return TrainState(cfg, plan, gen, disc, extractor, opt_g, opt_d)


# --------------------------------------------------------------------------
# tensor conversions


def to_net(img: Image) -> torch.Tensor:
    """Image in [0, 1] -> 1x3xHxW float32 tensor in [-1, 1]."""
    arr = img.rgb().data.astype(np.float32)
    t = torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)
    return t * 2.0 - 1.0

def from_net(t: torch.Tensor) -> Image:
    """1x3xHxW tensor in [-1, 1] -> Image in [0, 1], clipped."""
    if t.dim() == 4:
        t = t[0]
    arr = t.detach().cpu().permute(1, 2, 0).numpy().astype(np.float64)
    return Image(np.clip((arr + 1.0) / 2.0, 0.0, 1.0))


# --------------------------------------------------------------------------
# single-step mechanics


@dataclass(frozen=True)
class StepMetrics:
    step: int
    epoch: int
    total: float
    l1: float | None
    perceptual: float | None
    adv_g: float | None
    adv_d: float | None

    def to_record(self) -> dict:
        rec = dataclasses.asdict(self)
        rec["ts"] = time.time()
        return rec


def _condition_for(state: TrainState, x: torch.Tensor) -> torch.Tensor | None:
    return x if state.plan.adversarial == "cgan" else None


def discriminator_step(state: TrainState, x: torch.Tensor, y: torch.Tensor,
                       fake_detached: torch.Tensor) -> float:
    """One discriminator update on (real, detached fake); returns its loss."""
    cond = _condition_for(state, x)
    d_real = state.discriminator(y, condition=cond)
    d_fake = state.discriminator(fake_detached, condition=cond)
    loss = adversarial_d_loss(d_real, d_fake)
    val = scalar(loss)
    if not math.isfinite(val):
        raise NumericError(f"non-finite discriminator loss: {val}")
    state.opt_d.zero_grad(set_to_none=True)
    loss.backward()
    state.opt_d.step()
    return val


def generator_step(state: TrainState, x: torch.Tensor, y: torch.Tensor,
                   g_out: torch.Tensor) -> tuple[float, float | None,
                                                 float | None, float | None]:
    """One generator update; returns (total, l1, perceptual, adv_g)."""
    plan = state.plan
    zero = torch.zeros((), dtype=g_out.dtype)
    if plan.adversarial is not None:
        d_fake = state.discriminator(g_out, condition=_condition_for(state, x))
        adv = adversarial_g_loss(d_fake)
    else:
        adv = zero
    g01 = (g_out + 1.0) / 2.0
    y01 = (y + 1.0) / 2.0
    l1 = l1_loss(g01, y01) if plan.use_l1 else zero
    per = (perceptual_loss(state.extractor, g01, y01)
           if plan.use_perceptual else zero)
    total = total_generator_loss(adv, l1, per, state.cfg.weights)
    state.opt_g.zero_grad(set_to_none=True)
    total.backward()
    state.opt_g.step()
    return (scalar(total),
            scalar(l1) if plan.use_l1 else None,
            scalar(per) if plan.use_perceptual else None,
            scalar(adv) if plan.adversarial else None)


def train_step(state: TrainState, x: torch.Tensor,
               y: torch.Tensor) -> StepMetrics:
    """One alternating D-then-G update on a single batch."""
    if x.shape != y.shape:
        raise ValueError("x/y batch shape mismatch")
    state.generator.train()
    g_out = state.generator(x)
    adv_d = (discriminator_step(state, x, y, g_out.detach())
             if state.plan.needs_discriminator_update else None)
    total, l1v, perv, adv_g = generator_step(state, x, y, g_out)
    state.step += 1
    return StepMetrics(step=state.step, epoch=state.epoch, total=total,
                       l1=l1v, perceptual=perv, adv_g=adv_g, adv_d=adv_d)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(state: TrainState, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "version": CHECKPOINT_VERSION,
        "config": config_to_dict(state.cfg),
        "step": state.step,
        "epoch": state.epoch,
        "generator": state.generator.state_dict(),
        "discriminator": state.discriminator.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        # All randomness is counter-based on (seed, path), so the seed IS
        # the complete RNG state; nothing stateful needs snapshotting.
        "rng": {"scheme": "counter-based", "seed": state.cfg.seed},
    }, path)
    return path


def load_checkpoint(path: str | os.PathLike) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such checkpoint: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise DataError(f"unreadable checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path} is not a version-{CHECKPOINT_VERSION} "
                        "demark checkpoint")
    missing = {"config", "step", "epoch", "generator", "discriminator",
               "opt_g", "opt_d"} - payload.keys()
    if missing:
        raise DataError(f"checkpoint {path} missing fields: {sorted(missing)}")
    return payload


def restore_state(payload: dict) -> TrainState:
    """Rebuild a TrainState from a checkpoint payload, resume-ready."""
    cfg = config_from_dict(payload["config"])
    state = build_state(cfg)
    state.generator.load_state_dict(payload["generator"])
    state.discriminator.load_state_dict(payload["discriminator"])
    state.opt_g.load_state_dict(payload["opt_g"])
    state.opt_d.load_state_dict(payload["opt_d"])
    state.step = int(payload["step"])
    state.epoch = int(payload["epoch"])
    return state


# --------------------------------------------------------------------------
# the loop


@dataclass(frozen=True)
class TrainResult:
    checkpoint_path: Path
    metrics_path: Path
    state: TrainState


def _load_pairs(rows: list[ManifestRow], data_dir: Path,
                side: int) -> list[tuple[torch.Tensor, torch.Tensor]]:
    pairs = []
    for r in rows:
        x = load_image(data_dir / r.x_path)
        y = load_image(data_dir / r.y_path)
        if x.height != side or x.width != side:
            raise DataError(
                f"sample {r.x_path} is {x.height}x{x.width}, but the "
                f"generator expects {side}x{side}")
        pairs.append((to_net(x), to_net(y)))
    return pairs


def shuffle_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Per-epoch sample order; a pure function of (seed, epoch, n)."""
    return RngStream(seed).derive("shuffle", epoch).generator().permutation(n)


def train(manifest: DatasetManifest, data_dir: str | os.PathLike,
          cfg: TrainConfig, out_dir: str | os.PathLike, *,
          resume: str | os.PathLike | None = None,
          log_fn: Callable[[str], None] | None = None) -> TrainResult:
    """Run the full loop over the manifest's train split.

    Deterministic for a fixed config and dataset; resuming from a
    checkpoint replays the remaining schedule exactly, because epoch
    shuffles depend only on (seed, epoch).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_dir = Path(data_dir)

    if resume is not None:
        state = restore_state(load_checkpoint(resume))
        cfg = state.cfg
    else:
        state = build_state(cfg)

    rows = manifest.train_rows()
    if not rows:
        raise DataError("manifest has no train rows")
    pairs = _load_pairs(rows, data_dir, cfg.generator.input_side)
    n = len(pairs)
    bs = cfg.batch_size
    steps_per_epoch = (n + bs - 1) // bs

    metrics_path = out_dir / "metrics.jsonl"
    last_path = out_dir / "last.ckpt"
    final_path = out_dir / "final.ckpt"

    with open(metrics_path, "a", encoding="utf-8") as sink:
        global_step = 0
        for epoch in range(cfg.epochs):
            order = shuffle_order(cfg.seed, epoch, n)
            for b in range(steps_per_epoch):
                global_step += 1
                if global_step <= state.step:
                    continue  # already covered before the resume point
                state.epoch = epoch
                idx = order[b * bs:(b + 1) * bs]
                x = torch.cat([pairs[i][0] for i in idx], dim=0)
                y = torch.cat([pairs[i][1] for i in idx], dim=0)
                try:
                    ms = train_step(state, x, y)
                except NumericError as e:
                    dump = {
                        "error": str(e), "step": state.step + 1,
                        "epoch": epoch, "config": config_to_dict(cfg),
                    }
                    (out_dir / "diagnostics.json").write_text(
                        json.dumps(dump, indent=2), encoding="utf-8")
                    raise
                sink.write(json.dumps(ms.to_record()) + "\n")
                if (cfg.checkpoint_interval
                        and state.step % cfg.checkpoint_interval == 0):
                    sink.flush()
                    save_checkpoint(state, last_path)
            state.epoch = epoch + 1
            if log_fn is not None:
                log_fn(f"epoch {epoch + 1}/{cfg.epochs} done "
                       f"(step {state.step})")

    save_checkpoint(state, final_path)
    return TrainResult(final_path, metrics_path, state)


# --------------------------------------------------------------------------
# inference + evaluation


def remove_watermark(state: TrainState, img: Image) -> Image:
    """Run the trained generator on one image already sized to its input."""
    g = state.generator
    side = state.cfg.generator.input_side
    if img.height != side or img.width != side:
        raise DataError(f"input is {img.height}x{img.width}; generator "
                        f"expects {side}x{side}")
    g.eval()
    with torch.no_grad():
        out = g(to_net(img))
    return from_net(out)


def evaluate(state: TrainState | None, manifest: DatasetManifest,
             data_dir: str | os.PathLike, *, split: str = "test",
             quantized: bool = False, identity: bool = False,
             generator_tag: str | None = None) -> EvalReport:
    """Score the generator (or the identity baseline) on a manifest split."""
    rows = manifest.test_rows() if split == "test" else manifest.train_rows()
    if identity:
        restore = lambda img: img  # noqa: E731
        tag = "identity"
    else:
        if state is None:
            raise ConfigError("evaluate needs a train state unless identity=True")
        restore = lambda img: remove_watermark(state, img)  # noqa: E731
        tag = generator_tag or "generator"
    return evaluate_rows(rows, data_dir, restore, split=split,
                         generator_tag=tag, quantized=quantized)
