"""Shared procedural fixtures: no binary assets are checked in; every base
image and watermark is generated from seeded math so tests are hermetic."""

from __future__ import annotations

import numpy as np
import pytest

from demark.image_core import Image, save_image
from demark.rng import RngStream
from demark.watermark_synthesis import WatermarkAsset


def gradient_image(h: int, w: int, seed: int = 0, noise: float = 0.02) -> Image:
    """Smooth two-axis gradient plus a little seeded noise, clipped to range."""
    g = RngStream(seed).derive("gradient").generator()
    yy, xx = np.mgrid[0:h, 0:w]
    yy = yy / max(h - 1, 1)
    xx = xx / max(w - 1, 1)
    phase = g.uniform(0, 2 * np.pi, size=3)
    freq = g.uniform(2.0, 5.0, size=3)
    chans = [
        0.25 + 0.5 * yy,
        0.25 + 0.5 * xx,
        0.5 + 0.25 * np.sin(freq[2] * (xx + yy) * np.pi + phase[2]),
    ]
    rgb = np.stack(chans, axis=-1)
    if noise:
        rgb = rgb + g.normal(0.0, noise, size=rgb.shape)
    return Image(np.clip(rgb, 0.0, 1.0))


def disc_watermark(side: int = 24, color=(0.9, 0.1, 0.1),
                   max_alpha: float = 0.85, wm_id: str = "disc") -> WatermarkAsset:
    """Soft radial blob; alpha < 1 everywhere so composites stay invertible."""
    yy, xx = np.mgrid[0:side, 0:side]
    r = np.sqrt((yy - side / 2 + 0.5) ** 2 + (xx - side / 2 + 0.5) ** 2)
    alpha = np.clip(1.0 - r / (side / 2), 0.0, 1.0) * max_alpha
    rgb = np.zeros((side, side, 3))
    rgb[:] = color
    return WatermarkAsset(id=wm_id,
                          image=Image(np.concatenate([rgb, alpha[..., None]], -1)))


def ring_watermark(side: int = 24, color=(0.1, 0.2, 0.9),
                   max_alpha: float = 0.8, wm_id: str = "ring") -> WatermarkAsset:
    yy, xx = np.mgrid[0:side, 0:side]
    r = np.sqrt((yy - side / 2 + 0.5) ** 2 + (xx - side / 2 + 0.5) ** 2)
    band = np.exp(-((r - side / 3) ** 2) / (2.0 * (side / 10) ** 2))
    alpha = np.clip(band, 0.0, 1.0) * max_alpha
    rgb = np.zeros((side, side, 3))
    rgb[:] = color
    return WatermarkAsset(id=wm_id,
                          image=Image(np.concatenate([rgb, alpha[..., None]], -1)))


def stripe_watermark(side: int = 24, color=(0.1, 0.8, 0.2),
                     max_alpha: float = 0.75, wm_id: str = "stripe") -> WatermarkAsset:
    yy, xx = np.mgrid[0:side, 0:side]
    alpha = (0.5 + 0.5 * np.sin((yy + xx) * np.pi / 4)) * max_alpha
    rgb = np.zeros((side, side, 3))
    rgb[:] = color
    return WatermarkAsset(id=wm_id,
                          image=Image(np.concatenate([rgb, alpha[..., None]], -1)))


def standard_watermarks() -> list[WatermarkAsset]:
    return [disc_watermark(), ring_watermark(), stripe_watermark()]


@pytest.fixture(scope="session")
def bases_dir(tmp_path_factory):
    """Directory of six 48x48 procedural base PNGs."""
    root = tmp_path_factory.mktemp("bases")
    for i in range(6):
        save_image(gradient_image(48, 48, seed=100 + i), root / f"base_{i}.png")
    return root


@pytest.fixture(scope="session")
def base_paths(bases_dir):
    return sorted(str(p) for p in bases_dir.glob("*.png"))


@pytest.fixture()
def watermarks():
    return standard_watermarks()


@pytest.fixture(scope="session")
def watermarks_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("wm")
    for wm in standard_watermarks():
        save_image(wm.image, root / f"{wm.id}.png")
    return root


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory, base_paths):
    """A small on-disk paired dataset shared by trainer/CLI tests."""
    from demark.watermark_synthesis import build_dataset

    out = tmp_path_factory.mktemp("ds")
    manifest = build_dataset(base_paths, standard_watermarks(),
                             per_watermark=4, split_ratio=0.67, seed=11,
                             out_dir=out, image_side=32)
    return manifest, out


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance pass/fail lines after the normal test summary."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "acceptance_lines", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
