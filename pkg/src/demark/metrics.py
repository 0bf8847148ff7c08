"""Restoration quality metrics: PSNR and windowed-SSIM-derived DSSIM.

Conventions, fixed so numbers are comparable across runs: images are float
arrays in [0, 1] with peak 1.0, SSIM uses an 11-tap Gaussian window with
sigma 1.5 and stabilizers C1=1e-4, C2=9e-4, windows are valid-mode (no
padding), statistics are window-weighted and biased, and the score is
averaged over channels and window positions. DSSIM = (1 - SSIM) / 2.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError
from .image_core import Image

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 1e-4  # (0.01 * peak)^2
SSIM_C2 = 9e-4  # (0.03 * peak)^2

CONVENTIONS = {
    "peak": 1.0,
    "ssim_window": SSIM_WINDOW,
    "ssim_sigma": SSIM_SIGMA,
    "ssim_c1": SSIM_C1,
    "ssim_c2": SSIM_C2,
    "ssim_statistics": "window-weighted, biased",
    "ssim_padding": "valid",
    "dssim": "(1 - ssim) / 2",
}


def _dims_equal(a: Image, b: Image) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(
            f"image shape mismatch: {a.data.shape} vs {b.data.shape}")


def psnr(a: Image, b: Image) -> float:
    """10*log10(peak^2 / MSE) with peak 1.0; identical images give inf."""
    _dims_equal(a, b)
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW,
                    sigma: float = SSIM_SIGMA) -> np.ndarray:
    """1-D Gaussian taps, normalized to sum to one."""
    center = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - center
    w = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return w / w.sum()


def _filter_valid(plane: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation of a 2-D plane with 1-D taps."""
    t = sliding_window_view(plane, len(taps), axis=0) @ taps
    return sliding_window_view(t, len(taps), axis=1) @ taps


def ssim(a: Image, b: Image, *, window: int = SSIM_WINDOW,
         sigma: float = SSIM_SIGMA, c1: float = SSIM_C1,
         c2: float = SSIM_C2) -> float:
    """Mean structural similarity over channels and valid window positions."""
    _dims_equal(a, b)
    h, w = a.height, a.width
    if min(h, w) < window:
        raise ValueError(f"image {h}x{w} smaller than SSIM window {window}")
    taps = gaussian_window(window, sigma)

    scores = []
    for c in range(a.channels):
        pa = a.data[:, :, c]
        pb = b.data[:, :, c]
        mu_a = _filter_valid(pa, taps)
        mu_b = _filter_valid(pb, taps)
        # Biased window-weighted moments: E[x^2] - E[x]^2 form.
        var_a = _filter_valid(pa * pa, taps) - mu_a ** 2
        var_b = _filter_valid(pb * pb, taps) - mu_b ** 2
        cov = _filter_valid(pa * pb, taps) - mu_a * mu_b
        num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
        den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def dssim(a: Image, b: Image) -> float:
    return (1.0 - ssim(a, b)) / 2.0


def quantize(img: Image) -> Image:
    """Round-trip through 8-bit levels without touching the filesystem."""
    q = np.floor(img.data * 255.0 + 0.5) / 255.0
    return Image(q)


# --------------------------------------------------------------------------
# dataset-level evaluation


def _jsonable(o):
    if isinstance(o, float) and math.isinf(o):
        return "inf"
    if isinstance(o, dict):
        return {k: _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    return o


@dataclass(frozen=True)
class SampleScore:
    name: str
    watermark_id: str
    psnr_in: float
    dssim_in: float
    psnr_out: float
    dssim_out: float


@dataclass
class EvalReport:
    """Per-sample and aggregate scores for one checkpoint on one split."""

    split: str
    domain: str  # "float" or "quantized-8bit"
    generator: str  # provenance: checkpoint path or "identity"
    samples: list[SampleScore]
    conventions: dict = field(default_factory=lambda: dict(CONVENTIONS))

    def _mean(self, attr: str, rows=None) -> float:
        rows = self.samples if rows is None else rows
        return float(np.mean([getattr(s, attr) for s in rows]))

    def aggregate(self) -> dict:
        agg = {
            "n": len(self.samples),
            "psnr_in": self._mean("psnr_in"),
            "dssim_in": self._mean("dssim_in"),
            "psnr_out": self._mean("psnr_out"),
            "dssim_out": self._mean("dssim_out"),
        }
        return agg

    def per_watermark(self) -> dict[str, dict]:
        out: dict[str, dict] = {}
        for wid in sorted({s.watermark_id for s in self.samples}):
            rows = [s for s in self.samples if s.watermark_id == wid]
            out[wid] = {
                "n": len(rows),
                "psnr_in": self._mean("psnr_in", rows),
                "dssim_in": self._mean("dssim_in", rows),
                "psnr_out": self._mean("psnr_out", rows),
                "dssim_out": self._mean("dssim_out", rows),
            }
        return out

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "domain": self.domain,
            "generator": self.generator,
            "conventions": self.conventions,
            "aggregate": self.aggregate(),
            "per_watermark": self.per_watermark(),
            "samples": [vars(s) for s in self.samples],
        }

    def to_json(self) -> str:
        # Strict JSON has no Infinity literal; encode the sentinel as "inf".
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True)

    def format_table(self) -> str:
        def fmt(v: float) -> str:
            return "inf" if math.isinf(v) else f"{v:.4f}"

        agg = self.aggregate()
        lines = [
            f"split={self.split}  domain={self.domain}  n={agg['n']}",
            f"generator: {self.generator}",
            "",
            f"{'':<24}{'PSNR':>10}{'DSSIM':>10}",
            f"{'input (watermarked)':<24}{fmt(agg['psnr_in']):>10}"
            f"{fmt(agg['dssim_in']):>10}",
            f"{'output (recovered)':<24}{fmt(agg['psnr_out']):>10}"
            f"{fmt(agg['dssim_out']):>10}",
            "",
            f"{'per watermark':<24}{'PSNR':>10}{'DSSIM':>10}",
        ]
        for wid, row in self.per_watermark().items():
            lines.append(f"{wid:<24}{fmt(row['psnr_out']):>10}"
                         f"{fmt(row['dssim_out']):>10}")
        return "\n".join(lines) + "\n"

    def save(self, out_dir: str | os.PathLike) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        jpath = out / "report.json"
        tpath = out / "report.txt"
        jpath.write_text(self.to_json(), encoding="utf-8")
        tpath.write_text(self.format_table(), encoding="utf-8")
        return jpath, tpath


def score_pair(x: Image, y: Image, out: Image) -> tuple[float, float, float, float]:
    """(psnr_in, dssim_in, psnr_out, dssim_out) for one sample triple."""
    return psnr(x, y), dssim(x, y), psnr(out, y), dssim(out, y)


def evaluate_rows(rows, data_dir: str | os.PathLike, restore, *,
                  split: str = "test", domain: str = "float",
                  generator_tag: str = "unknown",
                  quantized: bool = False) -> EvalReport:
    """Score ``restore(x) -> Image`` over manifest rows.

    ``restore`` is any callable; the identity baseline is ``lambda x: x``.
    Rows must be non-empty. Paths resolve relative to ``data_dir``.
    """
    from .image_core import load_image

    rows = list(rows)
    if not rows:
        raise DataError(f"no rows to evaluate in split {split!r}")
    data_dir = Path(data_dir)
    samples = []
    for r in rows:
        x = load_image(data_dir / r.x_path)
        y = load_image(data_dir / r.y_path)
        out = restore(x)
        if quantized:
            out = quantize(out)
        p_in, d_in, p_out, d_out = score_pair(x, y, out)
        samples.append(SampleScore(
            name=Path(r.x_path).name, watermark_id=r.watermark_id,
            psnr_in=p_in, dssim_in=d_in, psnr_out=p_out, dssim_out=d_out))
    return EvalReport(split=split,
                      domain="quantized-8bit" if quantized else domain,
                      generator=generator_tag, samples=samples)
