"""Image I/O (8-bit PGM and PNG), Gaussian noise synthesis, PSNR/SSIM
metrics, and synthetic test scenes.

Pixel values live in [0, 1] internally; noise levels are quoted on the
0-255 scale and divided by 255. Noisy planes are NOT clipped to [0, 1];
clipping/quantization happens only when saving. Noise sampling uses numpy's
seeded PCG64 generator with the ziggurat standard-normal algorithm, so a
(seed, sigma, shape) triple fully determines the noise field across
platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image
from scipy.ndimage import correlate

PathLike = Union[str, Path]


class FormatError(ValueError):
    pass


class MetricError(ValueError):
    pass


@dataclass
class ImagePlane:
    """An image in [0, 1]: (H, W) grayscale or (H, W, 3) RGB."""

    data: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim not in (2, 3) or (
            self.data.ndim == 3 and self.data.shape[2] != 3
        ):
            raise FormatError(f"unsupported image shape {self.data.shape}")

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3


@dataclass
class NoiseSpec:
    """Additive white Gaussian noise, sigma on the 0-255 scale."""

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")


# ---------------------------------------------------------------------------
# Image files


def _load_pgm(raw: bytes, path: str) -> np.ndarray:
    # P5 header: magic, width, height, maxval, separated by whitespace and
    # optional '#' comments, then one binary byte per pixel.
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    width, height, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise FormatError(f"{path}: PGM maxval {maxval} unsupported (need 255)")
    if len(raw) - pos < width * height:
        raise FormatError(f"{path}: truncated PGM payload")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos)
    return pixels.reshape(height, width) / 255.0


def load_image(path: PathLike) -> ImagePlane:
    path = str(path)
    raw = Path(path).read_bytes()
    if raw[:2] == b"P5":
        return ImagePlane(_load_pgm(raw, path), provenance=path)
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        img = Image.open(path)
        if img.mode == "L":
            arr = np.asarray(img, dtype=np.float64) / 255.0
        elif img.mode == "RGB":
            arr = np.asarray(img, dtype=np.float64) / 255.0
        else:
            raise FormatError(f"{path}: unsupported PNG mode {img.mode!r}")
        return ImagePlane(arr, provenance=path)
    raise FormatError(f"{path}: unrecognized header {raw[:8]!r}")


def quantize(data: np.ndarray) -> np.ndarray:
    """[0,1] floats to 8-bit, rounding half away from zero."""
    clipped = np.clip(data, 0.0, 1.0)
    return np.floor(clipped * 255.0 + 0.5).astype(np.uint8)


def save_image(plane: ImagePlane, path: PathLike) -> None:
    path = str(path)
    q = quantize(plane.data)
    if path.endswith(".pgm"):
        if plane.channels != 1:
            raise FormatError("PGM output supports grayscale only")
        h, w = q.shape
        with open(path, "wb") as f:
            f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            f.write(q.tobytes())
    elif path.endswith(".png"):
        Image.fromarray(q, mode="L" if plane.channels == 1 else "RGB").save(path)
    else:
        raise FormatError(f"{path}: unsupported output format (use .pgm or .png)")


# ---------------------------------------------------------------------------
# Noise


def add_awgn(data: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    return data + rng.standard_normal(data.shape) * (spec.sigma / 255.0)


# ---------------------------------------------------------------------------
# Metrics


def psnr(ref: np.ndarray, test: np.ndarray) -> float:
    """10 log10(1 / MSE) with peak 1.0; +inf when the images match."""
    if ref.shape != test.shape:
        raise MetricError(f"extent mismatch: {ref.shape} vs {test.shape}")
    mse = float(np.mean((ref - test) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(ref: np.ndarray, test: np.ndarray) -> float:
    """Single-scale SSIM, 11x11 Gaussian window sigma 1.5, K1=0.01,
    K2=0.03, dynamic range 1.0; mean over valid (fully interior) windows."""
    if ref.shape != test.shape:
        raise MetricError(f"extent mismatch: {ref.shape} vs {test.shape}")
    if ref.ndim != 2:
        raise MetricError("ssim expects a grayscale plane; use ssim_channels")
    win = _gaussian_window()
    half = win.shape[0] // 2
    if min(ref.shape) < win.shape[0]:
        raise MetricError(
            f"image {ref.shape} smaller than the {win.shape[0]}x{win.shape[0]} window"
        )

    def filt(img):
        return correlate(img, win, mode="constant")[half:-half, half:-half]

    c1 = 0.01**2
    c2 = 0.03**2
    mu1, mu2 = filt(ref), filt(test)
    s11 = filt(ref * ref) - mu1 * mu1
    s22 = filt(test * test) - mu2 * mu2
    s12 = filt(ref * test) - mu1 * mu2
    num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


def ssim_channels(ref: np.ndarray, test: np.ndarray) -> list[float]:
    """Per-channel SSIM for (H, W, 3) images."""
    if ref.ndim != 3:
        return [ssim(ref, test)]
    return [ssim(ref[..., c], test[..., c]) for c in range(ref.shape[2])]


def format_metrics(psnr_value: float, ssim_values: list[float]) -> str:
    lines = [f"PSNR: {psnr_value:.4f} dB"]
    if len(ssim_values) == 1:
        lines.append(f"SSIM: {ssim_values[0]:.4f}")
    else:
        for name, v in zip("RGB", ssim_values):
            lines.append(f"SSIM {name}: {v:.4f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Synthetic scenes (piecewise-smooth stand-ins for natural test images)


def synthetic_scene(height: int, width: int, seed: int = 0) -> np.ndarray:
    """Deterministic piecewise-smooth scene: smooth illumination gradient,
    a few constant-intensity ellipses and rectangles, and a soft texture."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    gx = rng.uniform(-0.3, 0.3)
    gy = rng.uniform(-0.3, 0.3)
    img = 0.5 + gx * (xx / width - 0.5) + gy * (yy / height - 0.5)
    img += 0.08 * np.sin(2 * np.pi * xx / width * rng.uniform(1, 3)) \
        * np.sin(2 * np.pi * yy / height * rng.uniform(1, 3))
    for _ in range(4):
        cy, cx = rng.uniform(0.15, 0.85, 2) * (height, width)
        ry = rng.uniform(0.08, 0.25) * height
        rx = rng.uniform(0.08, 0.25) * width
        level = rng.uniform(0.1, 0.9)
        mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        img[mask] = 0.6 * level + 0.4 * img[mask]
    for _ in range(2):
        r0, c0 = rng.uniform(0.1, 0.6, 2) * (height, width)
        r1 = r0 + rng.uniform(0.1, 0.3) * height
        c1 = c0 + rng.uniform(0.1, 0.3) * width
        level = rng.uniform(0.1, 0.9)
        mask = (yy >= r0) & (yy < r1) & (xx >= c0) & (xx < c1)
        img[mask] = 0.7 * level + 0.3 * img[mask]
    lo, hi = img.min(), img.max()
    return 0.05 + 0.9 * (img - lo) / (hi - lo)
