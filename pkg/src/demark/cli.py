"""Command line entry point.

Commands: synthesize, train, remove, evaluate, ablate. All accept
``--config`` (YAML), ``--seed`` and repeated ``--set section.key=value``
overrides. Exit codes: 0 success, 2 configuration error, 3 data error,
4 numeric failure during training.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from .ablate import run_ablation
from .errors import ConfigError, DataError, ImageDecodeError, NumericError, UnsupportedImageError
from .image_core import load_image, resize, save_image
from .trainer import (evaluate, load_checkpoint, remove_watermark,
                      restore_state, train)
from .watermark_synthesis import DatasetManifest, build_dataset, load_watermark_assets

log = logging.getLogger("demark")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_BASE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


def _list_images(directory: str) -> list[str]:
    root = Path(directory)
    if not root.is_dir():
        raise DataError(f"no such image directory: {directory}")
    paths = sorted(str(p) for p in root.iterdir()
                   if p.suffix.lower() in _BASE_EXTENSIONS)
    if not paths:
        raise DataError(f"no images in {directory}")
    return paths


def cmd_synthesize(cfg: dict, args) -> int:
    data = cfg["data"]
    bases = _list_images(cfgmod.require(cfg, "data.bases"))
    assets = load_watermark_assets(cfgmod.require(cfg, "data.watermarks"))
    manifest = build_dataset(
        bases, assets,
        per_watermark=int(data["per_watermark"]),
        split_ratio=float(data["split_ratio"]),
        seed=int(cfg["seed"]),
        out_dir=data["out_dir"],
        scale_range=tuple(data["scale_range"]),
        opacity_range=tuple(data["opacity_range"]),
        image_side=data["image_side"] and int(data["image_side"]),
        workers=int(data["workers"]),
    )
    print(f"wrote {len(manifest.rows)} pairs "
          f"({len(manifest.train_rows())} train / "
          f"{len(manifest.test_rows())} test) to {data['out_dir']}")
    print(f"train watermarks: {sorted(manifest.train_ids())}")
    print(f"test watermarks:  {sorted(manifest.test_ids())}")
    print(f"manifest: {Path(data['out_dir']) / 'manifest.txt'}")
    return EXIT_OK


def cmd_train(cfg: dict, args) -> int:
    manifest_path = Path(cfgmod.require(cfg, "train.manifest"))
    manifest = DatasetManifest.load(manifest_path)
    tcfg = cfgmod.train_config(cfg)
    result = train(manifest, manifest_path.parent, tcfg,
                   cfg["train"]["out_dir"], resume=args.resume,
                   log_fn=lambda msg: print(msg, flush=True))
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics:    {result.metrics_path}")
    return EXIT_OK


def cmd_remove(cfg: dict, args) -> int:
    state = restore_state(load_checkpoint(args.checkpoint))
    side = state.cfg.generator.input_side
    in_path = Path(args.input)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if in_path.is_dir():
        paths = sorted(p for p in in_path.iterdir()
                       if p.suffix.lower() in _BASE_EXTENSIONS)
        if not paths:
            raise DataError(f"no images in {in_path}")
        strict = False
    elif in_path.is_file():
        paths = [in_path]
        strict = True
    else:
        raise DataError(f"no such input: {in_path}")

    written = 0
    for p in paths:
        try:
            img = load_image(p).rgb()
        except (ImageDecodeError, UnsupportedImageError):
            if strict:
                raise
            log.warning("skipping undecodable image %s", p)
            continue
        if img.height != side or img.width != side:
            img = resize(img, side, side)
        out = remove_watermark(state, img)
        target = out_dir / (p.stem + ".png")
        save_image(out, target)
        written += 1
        print(f"{p} -> {target}")
    print(f"restored {written} image(s)")
    return EXIT_OK


def cmd_evaluate(cfg: dict, args) -> int:
    section = cfg["evaluate"]
    manifest_path = Path(args.manifest or cfgmod.require(cfg, "evaluate.manifest"))
    manifest = DatasetManifest.load(manifest_path)
    identity = bool(section["identity"]) or args.identity
    if identity:
        state = None
        tag = "identity"
    else:
        ckpt = args.checkpoint or cfgmod.require(cfg, "evaluate.checkpoint")
        state = restore_state(load_checkpoint(ckpt))
        tag = str(ckpt)
    report = evaluate(state, manifest, manifest_path.parent,
                      split=str(section["split"]),
                      quantized=bool(section["quantized"]),
                      identity=identity, generator_tag=tag)
    jpath, tpath = report.save(section["out_dir"])
    sys.stdout.write(report.format_table())
    print(f"report: {jpath}")
    return EXIT_OK


def cmd_ablate(cfg: dict, args) -> int:
    manifest_path = Path(cfgmod.require(cfg, "ablate.manifest"))
    manifest = DatasetManifest.load(manifest_path)
    tcfg = cfgmod.train_config(cfg)
    epochs = cfg["ablate"]["epochs"]
    if epochs is not None:
        import dataclasses
        tcfg = dataclasses.replace(tcfg, epochs=int(epochs))
    report = run_ablation(manifest, manifest_path.parent, tcfg,
                          cfg["ablate"]["out_dir"],
                          log_fn=lambda msg: print(msg, flush=True))
    sys.stdout.write(report.format_tables())
    print(f"report: {Path(cfg['ablate']['out_dir']) / 'report.txt'}")
    return EXIT_OK


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="YAML run config file")
    sp.add_argument("--seed", type=int, default=None,
                    help="override the config seed")
    sp.add_argument("--set", dest="overrides", action="append", default=[],
                    metavar="KEY=VALUE",
                    help="override one config entry, e.g. train.epochs=5")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="demark",
        description="Visible watermark removal: synthesize paired data, "
                    "train the adversarial restorer, and evaluate it.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synthesize", help="build a paired dataset")
    _add_common(sp)
    sp.set_defaults(fn=cmd_synthesize)

    sp = sub.add_parser("train", help="train the removal generator")
    _add_common(sp)
    sp.add_argument("--resume", help="checkpoint to resume from")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("remove", help="run a checkpoint on new images")
    _add_common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True, help="image file or directory")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(fn=cmd_remove)

    sp = sub.add_parser("evaluate", help="score a checkpoint on a split")
    _add_common(sp)
    sp.add_argument("--checkpoint", help="checkpoint to score")
    sp.add_argument("--manifest", help="dataset manifest to score against")
    sp.add_argument("--identity", action="store_true",
                    help="score the identity baseline instead")
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("ablate", help="compare objective variants")
    _add_common(sp)
    sp.set_defaults(fn=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = cfgmod.load_run_config(args.config, overrides=args.overrides,
                                     seed=args.seed)
        return args.fn(cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
