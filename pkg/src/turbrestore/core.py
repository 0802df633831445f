"""Grid primitives shared by every restoration stage.

Images are 2D ``float64`` arrays indexed ``[row, col]`` (``y, x``) with
intensities nominally in [0, 1]. Vector fields are arrays of shape
``(2, H, W)``: channel 0 is the x displacement ``u``, channel 1 the y
displacement ``v``.
"""

from __future__ import annotations

import enum

import numpy as np
from scipy import fft as sfft
from scipy import signal


class ShapeMismatchError(ValueError):
    pass


class KernelSizeError(ValueError):
    pass


class BoundaryRule(str, enum.Enum):
    REFLECT = "reflect"  # half-sample symmetric: ... b a | a b ...
    CLAMP = "clamp"


def as_image(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2D image, got shape {a.shape}")
    return a


def as_field(field) -> np.ndarray:
    f = np.asarray(field, dtype=np.float64)
    if f.ndim != 3 or f.shape[0] != 2:
        raise ValueError(f"expected a (2, H, W) vector field, got shape {f.shape}")
    return f


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if a.shape[-2:] != b.shape[-2:]:
        raise ShapeMismatchError(f"{what} differ in shape: {a.shape[-2:]} vs {b.shape[-2:]}")


# --- boundary index mapping ---


def _map_coords(x: np.ndarray, n: int, rule: BoundaryRule) -> np.ndarray:
    """Map continuous coordinates into [0, n-1] according to ``rule``."""
    if rule is BoundaryRule.REFLECT or rule == "reflect":
        period = 2.0 * n
        x = np.mod(x + 0.5, period)
        x = np.where(x >= n, period - x, x) - 0.5
    return np.clip(x, 0.0, n - 1.0)


def _pad_matrix(n: int, r: int) -> np.ndarray:
    """0/1 matrix of shape (n + 2r, n) that symmetric-pads a length-n axis."""
    idx = np.arange(-r, n + r)
    period = 2 * n
    idx = np.mod(idx, period)
    idx = np.where(idx >= n, period - 1 - idx, idx)
    P = np.zeros((n + 2 * r, n))
    P[np.arange(n + 2 * r), idx] = 1.0
    return P


def pad(img: np.ndarray, ry: int, rx: int, rule: BoundaryRule = BoundaryRule.REFLECT) -> np.ndarray:
    mode = "symmetric" if BoundaryRule(rule) is BoundaryRule.REFLECT else "edge"
    return np.pad(img, ((ry, ry), (rx, rx)), mode=mode)


def pad_adjoint(padded: np.ndarray, ry: int, rx: int, rule: BoundaryRule = BoundaryRule.REFLECT) -> np.ndarray:
    """Exact adjoint of :func:`pad`: folds border values back onto the interior."""
    h = padded.shape[0] - 2 * ry
    w = padded.shape[1] - 2 * rx
    if BoundaryRule(rule) is BoundaryRule.REFLECT:
        Py, Px = _pad_matrix(h, ry), _pad_matrix(w, rx)
    else:
        Py = np.zeros((h + 2 * ry, h))
        Py[np.arange(h + 2 * ry), np.clip(np.arange(-ry, h + ry), 0, h - 1)] = 1.0
        Px = np.zeros((w + 2 * rx, w))
        Px[np.arange(w + 2 * rx), np.clip(np.arange(-rx, w + rx), 0, w - 1)] = 1.0
    return Py.T @ padded @ Px


# --- interpolation and warping ---


def _bilinear_parts(shape, x, y, rule):
    h, w = shape
    xc = _map_coords(np.asarray(x, dtype=np.float64), w, rule)
    yc = _map_coords(np.asarray(y, dtype=np.float64), h, rule)
    x0 = np.clip(np.floor(xc), 0, max(w - 2, 0)).astype(np.intp)
    y0 = np.clip(np.floor(yc), 0, max(h - 2, 0)).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    return x0, x1, y0, y1, fx, fy


def sample_bilinear(img, x, y, rule: BoundaryRule = BoundaryRule.CLAMP):
    """Bilinear interpolation at (possibly out-of-domain) positions.

    ``x`` indexes columns and ``y`` rows; both may be scalars or arrays of
    the same shape.
    """
    img = as_image(img)
    x0, x1, y0, y1, fx, fy = _bilinear_parts(img.shape, x, y, BoundaryRule(rule))
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    return out if np.ndim(out) else float(out)


def identity_grid(shape) -> tuple[np.ndarray, np.ndarray]:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return xx, yy


def warp(img, displacement, rule: BoundaryRule = BoundaryRule.CLAMP) -> np.ndarray:
    """Pull-back warp: ``out(x, y) = img(x + u(x, y), y + v(x, y))``."""
    img = as_image(img)
    d = as_field(displacement)
    check_same_shape(img, d, "image and displacement")
    xx, yy = identity_grid(img.shape)
    return sample_bilinear(img, xx + d[0], yy + d[1], rule)


# --- finite differences ---


def gradient(img) -> np.ndarray:
    """Forward differences; the last column/row is zero (reflective boundary)."""
    img = as_image(img)
    g = np.zeros((2,) + img.shape)
    g[0, :, :-1] = img[:, 1:] - img[:, :-1]
    g[1, :-1, :] = img[1:, :] - img[:-1, :]
    return g


def divergence(field) -> np.ndarray:
    """Backward differences; exact negative adjoint of :func:`gradient`."""
    p = as_field(field)
    px, py = p[0], p[1]
    d = np.zeros(px.shape)
    if px.shape[1] > 1:
        d[:, 0] += px[:, 0]
        d[:, 1:-1] += px[:, 1:-1] - px[:, :-2]
        d[:, -1] -= px[:, -2]
    if py.shape[0] > 1:
        d[0, :] += py[0, :]
        d[1:-1, :] += py[1:-1, :] - py[:-2, :]
        d[-1, :] -= py[-2, :]
    return d


def laplacian(img) -> np.ndarray:
    """Neumann 5-point Laplacian, ``divergence(gradient(img))``."""
    return divergence(gradient(img))


# --- convolution ---


def _check_kernel(img: np.ndarray, kernel: np.ndarray) -> None:
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise KernelSizeError(f"kernel sides must be odd, got {kernel.shape}")
    if kh > img.shape[0] or kw > img.shape[1]:
        raise KernelSizeError(f"kernel {kernel.shape} larger than image {img.shape}")


def convolve(img, kernel, rule: BoundaryRule = BoundaryRule.REFLECT) -> np.ndarray:
    """True (flipped-kernel) convolution with ``rule`` padding, same-size output."""
    img = as_image(img)
    kernel = as_image(kernel)
    _check_kernel(img, kernel)
    ry, rx = kernel.shape[0] // 2, kernel.shape[1] // 2
    return signal.fftconvolve(pad(img, ry, rx, rule), kernel, mode="valid")


def convolve_adjoint(img, kernel, rule: BoundaryRule = BoundaryRule.REFLECT) -> np.ndarray:
    """Exact adjoint of ``convolve(., kernel, rule)`` with respect to the image."""
    img = as_image(img)
    kernel = as_image(kernel)
    _check_kernel(img, kernel)
    ry, rx = kernel.shape[0] // 2, kernel.shape[1] // 2
    full = signal.fftconvolve(img, kernel[::-1, ::-1], mode="full")
    return pad_adjoint(full, ry, rx, rule)


# --- transforms (orthonormal) ---


def dct2(img) -> np.ndarray:
    return sfft.dctn(as_image(img), type=2, norm="ortho")


def idct2(coeffs) -> np.ndarray:
    return sfft.idctn(np.asarray(coeffs, dtype=np.float64), type=2, norm="ortho")


def fft2_real(img) -> np.ndarray:
    """Full complex spectrum of a real image, unitary scaling."""
    return np.fft.fft2(as_image(img), norm="ortho")


def ifft2_real(spectrum) -> np.ndarray:
    return np.fft.ifft2(spectrum, norm="ortho").real


def neumann_laplacian_symbol(shape, spacing: float = 1.0) -> np.ndarray:
    """Eigenvalues of ``-laplacian`` in the DCT-II basis (nonnegative)."""
    h, w = shape
    ky = 2.0 - 2.0 * np.cos(np.pi * np.arange(h) / h)
    kx = 2.0 - 2.0 * np.cos(np.pi * np.arange(w) / w)
    return (ky[:, None] + kx[None, :]) / spacing**2


def periodic_laplacian_symbol(shape, spacing: float = 1.0) -> np.ndarray:
    """Eigenvalues of the periodic ``-laplacian`` in the DFT basis."""
    h, w = shape
    ky = 2.0 - 2.0 * np.cos(2 * np.pi * np.arange(h) / h)
    kx = 2.0 - 2.0 * np.cos(2 * np.pi * np.arange(w) / w)
    return (ky[:, None] + kx[None, :]) / spacing**2
