"""Pixel-wise temporal fusion of a frame sequence."""

from __future__ import annotations

import numpy as np


class EmptySequenceError(ValueError):
    pass


def as_sequence(frames) -> np.ndarray:
    """Stack frames into an ``(N, H, W)`` array, checking that shapes agree."""
    frames = list(frames) if not isinstance(frames, np.ndarray) else frames
    if len(frames) == 0:
        raise EmptySequenceError("sequence has no frames")
    shapes = {np.shape(f) for f in frames}
    if len(shapes) != 1:
        raise ValueError(f"frames differ in shape: {sorted(shapes)}")
    seq = np.asarray(frames, dtype=np.float64)
    if seq.ndim != 3:
        raise ValueError(f"frames must be 2D images, got sequence shape {seq.shape}")
    return seq


def temporal_mean(frames) -> np.ndarray:
    return as_sequence(frames).mean(axis=0)


def temporal_median(frames) -> np.ndarray:
    # even N: mean of the two central order statistics
    return np.median(as_sequence(frames), axis=0)


FILTERS = {"mean": temporal_mean, "median": temporal_median}


def temporal_filter(frames, mode: str = "median") -> np.ndarray:
    try:
        return FILTERS[mode](frames)
    except KeyError:
        raise ValueError(f"unknown temporal filter {mode!r}") from None
