"""Fidelity metrics against simulator ground truth."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ShapeMismatchError, as_field, as_image

METRIC_KEYS = ("psnr_db", "mean_endpoint_error_px", "kernel_correlation")


def psnr(a, b) -> float:
    """PSNR in dB for unit peak intensity; ``inf`` for identical images."""
    a = as_image(a)
    b = as_image(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def mean_endpoint_error(estimated, truth) -> float:
    e = as_field(estimated)
    t = as_field(truth)
    if e.shape != t.shape:
        raise ShapeMismatchError(f"{e.shape} vs {t.shape}")
    return float(np.sqrt(((e - t) ** 2).sum(axis=0)).mean())


def _embed(k: np.ndarray, shape) -> np.ndarray:
    out = np.zeros(shape)
    oy = (shape[0] - k.shape[0]) // 2
    ox = (shape[1] - k.shape[1]) // 2
    out[oy : oy + k.shape[0], ox : ox + k.shape[1]] = k
    return out


def kernel_correlation(a, b, max_shift: int = 2) -> float:
    """Cosine similarity of two kernels, maximized over integer shifts within ``max_shift``."""
    a = as_image(a)
    b = as_image(b)
    shape = (max(a.shape[0], b.shape[0]) + 2 * max_shift, max(a.shape[1], b.shape[1]) + 2 * max_shift)
    A, B = _embed(a, shape), _embed(b, shape)
    na, nb = np.linalg.norm(A), np.linalg.norm(B)
    if na == 0 or nb == 0:
        return 0.0
    best = -1.0
    for dy in range(-max_shift, max_shift + 1):
        for dx in range(-max_shift, max_shift + 1):
            best = max(best, float(np.sum(A * np.roll(B, (dy, dx), axis=(0, 1)))))
    return float(np.clip(best / (na * nb), -1.0, 1.0))


@dataclass
class MetricReport:
    psnr_db: float
    mean_endpoint_error_px: float | None = None
    kernel_correlation: float | None = None

    def items(self):
        for key in METRIC_KEYS:
            value = getattr(self, key)
            if value is not None:
                yield key, value

    def to_text(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in self.items())

    def append_csv(self, path, extra: dict | None = None) -> None:
        """Append one row; the header is written when the file is new."""
        path = Path(path)
        row = dict(extra or {})
        row.update({k: _fmt(v) for k, v in self.items()})
        new = not path.exists() or path.stat().st_size == 0
        with path.open("a", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(row))
            if new:
                writer.writeheader()
            writer.writerow(row)


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.6f}"
