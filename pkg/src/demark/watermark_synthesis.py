"""Paired dataset synthesis: composite watermark assets onto base images.

A sample is built by scaling an RGBA watermark, placing it at a random
in-bounds position, and source-over blending with a global opacity
multiplier:

    out = (1 - opacity*a) * base + opacity*a * wm_rgb     (inside footprint)
    out = base                                            (elsewhere)

where a is the asset's per-pixel alpha. Pixels outside the footprint are
bit-identical to the base, which the tests rely on. Train/test splits are
disjoint over watermark identities, never over images.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NonInvertibleCompositeError, PlacementError
from .image_core import Image, load_image, resize, save_image
from .rng import RngStream

log = logging.getLogger(__name__)

DEFAULT_SCALE_RANGE = (0.3, 1.0)
DEFAULT_OPACITY_RANGE = (0.3, 1.0)

MANIFEST_HEADER = "# demark-manifest v1"
_MANIFEST_COLUMNS = ("x", "y", "watermark_id", "split", "top", "left", "scale", "opacity")


@dataclass(frozen=True)
class WatermarkAsset:
    """An RGBA watermark with a stable identity."""

    id: str
    image: Image

    def __post_init__(self):
        if self.image.channels != 4:
            raise DataError(f"watermark {self.id!r} must be RGBA (4 channels)")
        if not (self.image.data[:, :, 3] > 0).any():
            raise DataError(f"watermark {self.id!r} has a fully transparent alpha")


@dataclass(frozen=True)
class PlacementSpec:
    """Where and how a watermark lands on a base image.

    ``scale`` is the ratio of the scaled watermark's width to the base
    image's width; the height follows the asset's aspect ratio. The
    scaled footprint must fit fully inside the base.
    """

    top: int
    left: int
    scale: float
    opacity: float

    def __post_init__(self):
        if not (0.0 < self.opacity <= 1.0):
            raise ValueError(f"opacity must be in (0, 1], got {self.opacity}")
        if self.scale <= 0.0:
            raise ValueError(f"scale must be > 0, got {self.scale}")
        if self.top < 0 or self.left < 0:
            raise ValueError("placement offsets must be >= 0")


@dataclass(frozen=True)
class PairedSample:
    x: Image
    y: Image
    watermark_id: str
    placement: PlacementSpec

    def __post_init__(self):
        if self.x.data.shape != self.y.data.shape:
            raise ValueError("x and y must have identical shape")


@dataclass(frozen=True)
class ManifestRow:
    x_path: str
    y_path: str
    watermark_id: str
    split: str
    placement: PlacementSpec


@dataclass
class DatasetManifest:
    """On-disk dataset description; serializes to a diffable text file."""

    rows: list[ManifestRow]
    seed: int
    config: dict = field(default_factory=dict)

    def train_rows(self) -> list[ManifestRow]:
        return [r for r in self.rows if r.split == "train"]

    def test_rows(self) -> list[ManifestRow]:
        return [r for r in self.rows if r.split == "test"]

    def train_ids(self) -> set[str]:
        return {r.watermark_id for r in self.rows if r.split == "train"}

    def test_ids(self) -> set[str]:
        return {r.watermark_id for r in self.rows if r.split == "test"}

    def validate(self) -> None:
        overlap = self.train_ids() & self.test_ids()
        if overlap:
            raise DataError(f"train/test watermark identities overlap: {sorted(overlap)}")

    def save(self, path: str | os.PathLike) -> None:
        lines = [
            MANIFEST_HEADER,
            f"# seed={self.seed}",
            f"# config={json.dumps(self.config, sort_keys=True)}",
            "# columns=" + "\t".join(_MANIFEST_COLUMNS),
        ]
        for r in self.rows:
            p = r.placement
            lines.append(
                "\t".join(
                    (
                        r.x_path,
                        r.y_path,
                        r.watermark_id,
                        r.split,
                        str(p.top),
                        str(p.left),
                        repr(p.scale),
                        repr(p.opacity),
                    )
                )
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"no such manifest: {path}")
        lines = path.read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != MANIFEST_HEADER:
            raise DataError(f"{path} is not a demark dataset manifest")
        seed = None
        config: dict = {}
        rows: list[ManifestRow] = []
        for line in lines[1:]:
            if not line:
                continue
            if line.startswith("# seed="):
                seed = int(line[len("# seed="):])
            elif line.startswith("# config="):
                config = json.loads(line[len("# config="):])
            elif line.startswith("#"):
                continue
            else:
                parts = line.split("\t")
                if len(parts) != len(_MANIFEST_COLUMNS):
                    raise DataError(f"malformed manifest row: {line!r}")
                x, y, wid, split, top, left, scale, opacity = parts
                rows.append(
                    ManifestRow(
                        x_path=x,
                        y_path=y,
                        watermark_id=wid,
                        split=split,
                        placement=PlacementSpec(
                            top=int(top), left=int(left),
                            scale=float(scale), opacity=float(opacity),
                        ),
                    )
                )
        if seed is None:
            raise DataError(f"{path} is missing its seed header")
        return cls(rows=rows, seed=seed, config=config)


def scaled_footprint(base_dims: tuple[int, int], wm_dims: tuple[int, int],
                     scale: float) -> tuple[int, int]:
    """Pixel dims (h, w) of the watermark scaled relative to base width.

    Uses floor so a scale at the fit limit never rounds out of bounds;
    both dims are kept >= 1.
    """
    bh, bw = base_dims
    wh, ww = wm_dims
    sw = max(1, int(scale * bw))
    sh = max(1, int(scale * bw * wh / ww))
    return sh, sw


def composite(base: Image, wm: WatermarkAsset, spec: PlacementSpec) -> Image:
    """Blend a scaled watermark onto an RGB base image."""
    if base.channels != 3:
        raise ValueError("composite expects an RGB base image")
    sh, sw = scaled_footprint((base.height, base.width),
                              (wm.image.height, wm.image.width), spec.scale)
    if spec.top + sh > base.height or spec.left + sw > base.width:
        raise PlacementError(
            f"footprint {sh}x{sw} at ({spec.top},{spec.left}) exceeds "
            f"base {base.height}x{base.width}"
        )
    scaled = resize(wm.image, sh, sw).data
    rgb, alpha = scaled[:, :, :3], scaled[:, :, 3:4]
    eff = spec.opacity * alpha

    out = base.data.copy()
    region = out[spec.top:spec.top + sh, spec.left:spec.left + sw]
    blended = (1.0 - eff) * region + eff * rgb
    out[spec.top:spec.top + sh, spec.left:spec.left + sw] = np.minimum(blended, 1.0)
    return Image(out)


def invert_composite(out: Image, wm: WatermarkAsset, spec: PlacementSpec) -> Image:
    """Analytically recover the base image from an un-quantized composite.

    Solves base = (out - opacity*a*wm_rgb) / (1 - opacity*a) inside the
    footprint; requires opacity*a < 1 everywhere there.
    """
    sh, sw = scaled_footprint((out.height, out.width),
                              (wm.image.height, wm.image.width), spec.scale)
    if spec.top + sh > out.height or spec.left + sw > out.width:
        raise PlacementError("footprint exceeds image bounds")
    scaled = resize(wm.image, sh, sw).data
    rgb, alpha = scaled[:, :, :3], scaled[:, :, 3:4]
    eff = spec.opacity * alpha
    if (eff >= 1.0).any():
        raise NonInvertibleCompositeError(
            "composite has fully opaque pixels; base is unrecoverable there"
        )
    base = out.data.copy()
    region = base[spec.top:spec.top + sh, spec.left:spec.left + sw]
    recovered = (region - eff * rgb) / (1.0 - eff)
    base[spec.top:spec.top + sh, spec.left:spec.left + sw] = np.clip(recovered, 0.0, 1.0)
    return Image(base)


def sample_placement(rng: RngStream, base_dims: tuple[int, int],
                     wm_dims: tuple[int, int],
                     scale_range: tuple[float, float] = DEFAULT_SCALE_RANGE,
                     opacity_range: tuple[float, float] = DEFAULT_OPACITY_RANGE,
                     ) -> PlacementSpec:
    """Draw a uniform random placement that fits inside the base.

    Deterministic given the stream; draw order is scale, opacity, top,
    left. The scale range is capped so the footprint height fits; if the
    cap falls below the range minimum no placement exists.
    """
    bh, bw = base_dims
    wh, ww = wm_dims
    lo, hi = scale_range
    if not (0.0 < lo <= hi):
        raise ConfigError(f"bad scale range {scale_range}")
    olo, ohi = opacity_range
    if not (0.0 < olo <= ohi <= 1.0):
        raise ConfigError(f"bad opacity range {opacity_range}")

    cap = min(hi, 1.0, (bh * ww) / (bw * wh))
    if cap < lo:
        raise PlacementError(
            f"watermark {wh}x{ww} cannot fit base {bh}x{bw} at minimum scale {lo}"
        )
    g = rng.generator()
    scale = lo if cap == lo else float(g.uniform(lo, cap))
    opacity = olo if ohi == olo else float(g.uniform(olo, ohi))
    sh, sw = scaled_footprint(base_dims, wm_dims, scale)
    top = int(g.integers(0, bh - sh + 1))
    left = int(g.integers(0, bw - sw + 1))
    return PlacementSpec(top=top, left=left, scale=scale, opacity=opacity)


def split_identities(ids: list[str], split_ratio: float,
                     rng: RngStream) -> tuple[list[str], list[str]]:
    """Partition watermark identities into disjoint train/test groups."""
    if not (0.0 < split_ratio < 1.0):
        raise ConfigError(f"split_ratio must be in (0, 1), got {split_ratio}")
    ordered = sorted(ids)
    if len(set(ordered)) != len(ordered):
        raise DataError("watermark ids must be unique")
    g = rng.generator()
    perm = g.permutation(len(ordered))
    shuffled = [ordered[i] for i in perm]
    n_train = int(split_ratio * len(ordered) + 0.5)
    n_train = min(max(n_train, 1), max(len(ordered) - 1, 1))
    return sorted(shuffled[:n_train]), sorted(shuffled[n_train:])


def load_watermark_assets(directory: str | os.PathLike) -> list[WatermarkAsset]:
    """Read every RGBA PNG in a directory as a watermark asset (id = stem)."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"no such watermark directory: {directory}")
    assets = []
    for p in sorted(directory.glob("*.png")):
        img = load_image(p)
        if img.channels != 4:
            raise DataError(f"watermark asset {p} must be RGBA")
        assets.append(WatermarkAsset(id=p.stem, image=img))
    if not assets:
        raise DataError(f"no RGBA PNG watermark assets in {directory}")
    return assets


def _build_one(index: int, wm: WatermarkAsset, k: int, split: str,
               bases: list[str], stream: RngStream, out_dir: Path,
               scale_range, opacity_range, image_side, retries: int):
    """Synthesize and write one paired sample; returns its manifest row.

    Pure given its derived stream, so serial and threaded builds produce
    identical bytes.
    """
    for attempt in range(retries):
        sub = stream.derive("attempt", attempt)
        base_idx = int(sub.generator().integers(0, len(bases)))
        base = load_image(bases[base_idx]).rgb()
        if image_side is not None:
            base = resize(base, image_side, image_side)
        try:
            spec = sample_placement(
                sub.derive("placement"),
                (base.height, base.width),
                (wm.image.height, wm.image.width),
                scale_range, opacity_range,
            )
        except PlacementError:
            continue
        x = composite(base, wm, spec)
        name = f"{wm.id}_{k:04d}.png"
        x_rel = f"{split}/x/{name}"
        y_rel = f"{split}/y/{name}"
        save_image(x, out_dir / x_rel)
        save_image(base, out_dir / y_rel)
        return index, ManifestRow(x_rel, y_rel, wm.id, split, spec)
    log.warning("skipping sample %s/%d: no valid placement after %d attempts",
                wm.id, k, retries)
    return index, None


def build_dataset(bases: list[str], watermarks: list[WatermarkAsset],
                  per_watermark: int, split_ratio: float, seed: int,
                  out_dir: str | os.PathLike, *,
                  scale_range: tuple[float, float] = DEFAULT_SCALE_RANGE,
                  opacity_range: tuple[float, float] = DEFAULT_OPACITY_RANGE,
                  image_side: int | None = None,
                  workers: int = 1,
                  retries: int = 10) -> DatasetManifest:
    """Write a full paired dataset plus manifest under ``out_dir``.

    Layout: ``<out_dir>/{train,test}/{x,y}/<wm>_<k>.png`` and
    ``<out_dir>/manifest.txt``. Fully reproducible from the seed; samples
    draw from per-sample derived streams, so ``workers > 1`` changes
    nothing but wall time.
    """
    if not bases:
        raise DataError("no base images supplied")
    if not watermarks:
        raise DataError("no watermark assets supplied")
    if per_watermark < 0:
        raise ConfigError("per_watermark must be >= 0")

    out_dir = Path(out_dir)
    root = RngStream(seed)
    ids = [w.id for w in watermarks]
    train_ids, test_ids = split_identities(ids, split_ratio, root.derive("split"))
    split_of = {i: "train" for i in train_ids}
    split_of.update({i: "test" for i in test_ids})

    for split in ("train", "test"):
        for side in ("x", "y"):
            (out_dir / split / side).mkdir(parents=True, exist_ok=True)

    jobs = []
    for wm in sorted(watermarks, key=lambda w: w.id):
        for k in range(per_watermark):
            jobs.append((len(jobs), wm, k, split_of[wm.id],
                         root.derive("sample", wm.id, k)))

    def run(job):
        index, wm, k, split, stream = job
        return _build_one(index, wm, k, split, bases, stream, out_dir,
                          scale_range, opacity_range, image_side, retries)

    if workers > 1 and jobs:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    rows = [row for _, row in sorted(results, key=lambda r: r[0]) if row is not None]
    config = {
        "per_watermark": per_watermark,
        "split_ratio": split_ratio,
        "scale_range": list(scale_range),
        "opacity_range": list(opacity_range),
        "image_side": image_side,
        "n_watermarks": len(watermarks),
        "n_bases": len(bases),
    }
    manifest = DatasetManifest(rows=rows, seed=seed, config=config)
    manifest.validate()
    manifest.save(out_dir / "manifest.txt")
    return manifest
