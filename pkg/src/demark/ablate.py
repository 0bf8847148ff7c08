"""Ablation harness: retrain the same setup under each objective variant.

Six unique runs cover the five loss configurations (with the patch
discriminator) plus an image-level discriminator under the full objective;
the patch row of the discriminator comparison reuses the full-objective
run. Every run shares one seed, one init scheme and an identical sample
order, so rows differ only in the term or component under study.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .errors import DataError
from .metrics import EvalReport
from .trainer import TrainConfig, TrainResult, evaluate, shuffle_order, train
from .watermark_synthesis import DatasetManifest

LOSS_ROWS = (
    ("L1", "l1"),
    ("Perceptual", "perceptual"),
    ("L1 + Perceptual", "l1+perceptual"),
    ("L1 + Perceptual + GAN", "l1+perceptual+gan"),
    ("L1 + Perceptual + cGAN", "l1+perceptual+cgan"),
)

SCALE_NOTE = ("All rows share one seed, one initialization scheme and an "
              "identical sample order. Scores come from a reduced-scale "
              "run; row orderings at this scale are noisy and are not "
              "expected to match full-scale behavior.")


@dataclass(frozen=True)
class VariantResult:
    variant_id: str
    label: str
    loss_config: str
    discriminator_kind: str
    seed: int
    order_checksum: str
    psnr: float
    dssim: float
    checkpoint: str


@dataclass
class AblationReport:
    variants: list[VariantResult]
    note: str = SCALE_NOTE

    def fairness(self) -> dict:
        seeds = {v.seed for v in self.variants}
        checksums = {v.order_checksum for v in self.variants}
        return {
            "shared_seed": len(seeds) == 1,
            "shared_data_order": len(checksums) == 1,
            "order_checksum": sorted(checksums),
        }

    def format_tables(self) -> str:
        def fmt(v: float) -> str:
            return "inf" if math.isinf(v) else f"{v:.4f}"

        by_id = {v.variant_id: v for v in self.variants}
        lines = [f"{'Loss configuration':<28}{'PSNR':>10}{'DSSIM':>10}"]
        for label, name in LOSS_ROWS:
            v = by_id.get(f"loss:{name}")
            if v is not None:
                lines.append(f"{label:<28}{fmt(v.psnr):>10}{fmt(v.dssim):>10}")
        lines.append("")
        lines.append(f"{'Discriminator':<28}{'PSNR':>10}{'DSSIM':>10}")
        for label, vid in (("image-based", "disc:image"),
                           ("patch-based", "loss:l1+perceptual+cgan")):
            v = by_id.get(vid)
            if v is not None:
                lines.append(f"{label:<28}{fmt(v.psnr):>10}{fmt(v.dssim):>10}")
        lines.append("")
        fair = self.fairness()
        lines.append(f"shared seed: {fair['shared_seed']}; "
                     f"shared data order: {fair['shared_data_order']} "
                     f"(checksum {fair['order_checksum'][0][:12]})")
        lines.append("")
        lines.append(self.note)
        return "\n".join(lines) + "\n"

    def save(self, out_dir: str | os.PathLike) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "report.txt"
        path.write_text(self.format_tables(), encoding="utf-8")
        return path


def _order_checksum(seed: int, epochs: int, n: int, batch_size: int) -> str:
    h = hashlib.sha256()
    h.update(f"n={n} bs={batch_size}".encode())
    for epoch in range(epochs):
        h.update(shuffle_order(seed, epoch, n).tobytes())
    return h.hexdigest()


def variant_configs(base: TrainConfig) -> list[tuple[str, str, TrainConfig]]:
    """(variant_id, label, config) for each unique run."""
    out = []
    for label, name in LOSS_ROWS:
        cfg = dataclasses.replace(base, loss_config=name,
                                  discriminator_kind="patch")
        out.append((f"loss:{name}", label, cfg))
    image_cfg = dataclasses.replace(base, loss_config="l1+perceptual+cgan",
                                    discriminator_kind="image")
    out.append(("disc:image", "image-based", image_cfg))
    return out


def run_ablation(manifest: DatasetManifest, data_dir: str | os.PathLike,
                 base_cfg: TrainConfig, out_dir: str | os.PathLike, *,
                 log_fn: Callable[[str], None] | None = None) -> AblationReport:
    """Train and score every variant; partial results survive an abort.

    Each completed variant appends one line to ``results.jsonl`` before the
    next run starts, and the final report is written at the end.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / "results.jsonl"

    n = len(manifest.train_rows())
    if n == 0:
        raise DataError("manifest has no train rows")
    checksum = _order_checksum(base_cfg.seed, base_cfg.epochs, n,
                               base_cfg.batch_size)

    variants: list[VariantResult] = []
    for variant_id, label, cfg in variant_configs(base_cfg):
        run_dir = out_dir / variant_id.replace(":", "_")
        if log_fn is not None:
            log_fn(f"training variant {variant_id}")
        result: TrainResult = train(manifest, data_dir, cfg, run_dir)
        report: EvalReport = evaluate(result.state, manifest, data_dir,
                                      generator_tag=str(result.checkpoint_path))
        agg = report.aggregate()
        v = VariantResult(
            variant_id=variant_id, label=label, loss_config=cfg.loss_config,
            discriminator_kind=cfg.discriminator_kind, seed=cfg.seed,
            order_checksum=checksum, psnr=agg["psnr_out"],
            dssim=agg["dssim_out"], checkpoint=str(result.checkpoint_path))
        variants.append(v)
        with open(results_path, "a", encoding="utf-8") as sink:
            sink.write(json.dumps(dataclasses.asdict(v)) + "\n")

    report = AblationReport(variants=variants)
    report.save(out_dir)
    return report
