"""Seeded forward model: blur, then smooth random warp, then additive noise.

Every frame draws from its own Philox (counter-based) stream keyed by
``(seed, frame index)``, so frames are independent and reproducible in
isolation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import BoundaryRule, KernelSizeError, as_image, convolve, warp
from .imageio import save_image, save_kernel, write_flow


@dataclass(frozen=True)
class SimConfig:
    seed: int = 42
    frames: int = 20
    blur_sigma: float = 1.0
    warp_amplitude: float = 2.0
    warp_correlation_length: float = 8.0
    noise_sigma: float = 0.01
    kernel_size: int | None = None

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if self.blur_sigma < 0 or self.warp_amplitude < 0 or self.noise_sigma < 0:
            raise ValueError("blur_sigma, warp_amplitude and noise_sigma must be >= 0")
        if self.warp_correlation_length <= 0:
            raise ValueError("warp_correlation_length must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")


@dataclass
class GroundTruth:
    clean: np.ndarray
    kernel: np.ndarray
    warps: np.ndarray  # (N, 2, H, W)
    degraded: np.ndarray  # (N, H, W)
    config: SimConfig = field(default_factory=SimConfig)


def default_kernel_size(sigma: float) -> int:
    return 2 * int(np.ceil(3.0 * sigma)) + 1


def gaussian_kernel(sigma: float, size: int | None = None) -> np.ndarray:
    """Sampled isotropic Gaussian normalized to unit sum; ``sigma == 0`` gives a delta."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if size is None:
        size = default_kernel_size(sigma)
    if size < 1 or size % 2 == 0:
        raise KernelSizeError(f"kernel size must be odd and positive, got {size}")
    r = size // 2
    if sigma == 0:
        k = np.zeros((size, size))
        k[r, r] = 1.0
        return k
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / (2.0 * sigma**2))
    return g / g.sum()


def frame_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, index + 1]))


def random_warp(rng: np.random.Generator, shape, amplitude: float, correlation_length: float) -> np.ndarray:
    """Gaussian-smoothed white vector noise with zero mean and peak magnitude ``amplitude``."""
    noise = rng.standard_normal((2,) + tuple(shape))
    if amplitude == 0:
        return np.zeros_like(noise)
    smooth = np.stack([ndimage.gaussian_filter(c, correlation_length, mode="reflect") for c in noise])
    smooth -= smooth.mean(axis=(1, 2), keepdims=True)
    peak = np.sqrt((smooth**2).sum(axis=0)).max()
    if peak == 0:
        return np.zeros_like(smooth)
    return smooth * (amplitude / peak)


def simulate(clean, cfg: SimConfig) -> GroundTruth:
    clean = as_image(clean)
    size = cfg.kernel_size if cfg.kernel_size is not None else default_kernel_size(cfg.blur_sigma)
    kernel = gaussian_kernel(cfg.blur_sigma, size)
    blurred = convolve(clean, kernel, BoundaryRule.REFLECT) if size > 1 else clean.copy()
    warps = np.empty((cfg.frames, 2) + clean.shape)
    frames = np.empty((cfg.frames,) + clean.shape)
    for n in range(cfg.frames):
        rng = frame_rng(cfg.seed, n)
        warps[n] = random_warp(rng, clean.shape, cfg.warp_amplitude, cfg.warp_correlation_length)
        frame = warp(blurred, warps[n], BoundaryRule.CLAMP) if cfg.warp_amplitude > 0 else blurred.copy()
        if cfg.noise_sigma > 0:
            frame = frame + cfg.noise_sigma * rng.standard_normal(clean.shape)
        frames[n] = frame
    return GroundTruth(clean=clean, kernel=kernel, warps=warps, degraded=frames, config=cfg)


def write_manifest(path, entries: dict) -> None:
    path = Path(path)
    text = "".join(f"{k}={v}\n" for k, v in entries.items())
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}: malformed line {line!r}")
        out[key.strip()] = value.strip()
    return out


def save_ground_truth(gt: GroundTruth, outdir, extra: dict | None = None) -> None:
    """Persist the simulator layout: clean.png, kernel.pgm, warp_NNNN.flo, frame_NNNN.png, manifest.txt."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_image(gt.clean, outdir / "clean.png")
    save_kernel(gt.kernel, outdir / "kernel.pgm")
    for n, (w, f) in enumerate(zip(gt.warps, gt.degraded)):
        write_flow(w, outdir / f"warp_{n:04d}.flo")
        save_image(f, outdir / f"frame_{n:04d}.png")
    entries = {k: ("" if v is None else v) for k, v in asdict(gt.config).items()}
    entries.update(extra or {})
    write_manifest(outdir / "manifest.txt", entries)


def test_card(size: int = 128, seed: int = 0) -> np.ndarray:
    """Deterministic synthetic scene: shapes, bars and ramps over texture at every pixel.

    The texture is band-limited (features a few pixels wide) so that warps of a
    couple of pixels stay identifiable everywhere.
    """
    rng = np.random.Generator(np.random.Philox(key=[seed, 0]))
    n = size
    s = n / 128
    yy, xx = np.mgrid[0:n, 0:n] / n
    img = 0.3 + 0.25 * xx + 0.1 * yy
    for i, period in enumerate((24, 16, 12)):
        x0 = 0.08 + 0.13 * i
        band = (xx > x0) & (xx < x0 + 0.1) & (yy > 0.08) & (yy < 0.42)
        img[band] = np.where(np.sin(2 * np.pi * yy[band] * 128 / period) > 0, 0.8, 0.2)
    for cx, cy, r, val in ((0.72, 0.25, 0.14, 0.85), (0.25, 0.72, 0.1, 0.15), (0.8, 0.78, 0.06, 0.75)):
        img[(xx - cx) ** 2 + (yy - cy) ** 2 < r**2] = val
    blocks = rng.integers(0, 2, size=(3, 5))
    for r in range(3):
        for c in range(5):
            x0, y0 = 0.45 + c * 0.06, 0.55 + r * 0.07
            m = (xx >= x0) & (xx < x0 + 0.045) & (yy >= y0) & (yy < y0 + 0.05)
            img[m] = 0.1 if blocks[r, c] else 0.9
    img = ndimage.gaussian_filter(img, 0.7 * s, mode="reflect")
    texture = sum(
        w * ndimage.gaussian_filter(rng.standard_normal((n, n)), sig * s, mode="reflect") * sig
        for w, sig in ((1.0, 2.0), (0.7, 4.0))
    )
    img += 0.12 * texture / np.abs(texture).max()
    return np.clip(img, 0.0, 1.0)


test_card.__test__ = False  # not a pytest test
