"""Total-variation blind deconvolution by alternating minimization.

The energy is

    E(u, h) = 1/2 ||h * u - f||^2 + alpha1 TV_eps(u) + alpha2 TV_eps(h)

with ``TV_eps(u) = sum sqrt(|grad u|^2 + eps^2)``. Each half-step freezes
the TV diffusivity ``1 / |grad|_eps`` at the current iterate (lagged
diffusivity) and solves the resulting symmetric positive definite system.
Freezing the diffusivity gives a quadratic majorizer of the energy, so any
descent on the linear system also lowers ``E``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import (
    BoundaryRule,
    ShapeMismatchError,
    as_image,
    convolve,
    convolve_adjoint,
    dct2,
    divergence,
    gradient,
    idct2,
    neumann_laplacian_symbol,
    pad,
)

log = logging.getLogger(__name__)


class SolverDivergedError(RuntimeError):
    pass


class DegenerateProjectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class DeconvConfig:
    alpha1: float = 1e-5
    alpha2: float = 1e-3
    epsilon_tv: float = 1e-3
    kernel_size: int = 15
    outer_iterations: int = 10
    fixed_point_iterations: int = 3
    solver_tolerance: float = 1e-6
    max_solver_iterations: int = 100
    energy_tolerance: float = 1e-6
    rule: BoundaryRule = BoundaryRule.REFLECT

    def __post_init__(self):
        if not (self.alpha1 > 0 and self.alpha2 > 0 and self.epsilon_tv > 0):
            raise ValueError("alpha1, alpha2 and epsilon_tv must be > 0")
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and >= 3")
        if self.outer_iterations < 1 or self.fixed_point_iterations < 1:
            raise ValueError("iteration counts must be >= 1")


@dataclass
class DeconvResult:
    image: np.ndarray
    kernel: np.ndarray
    energy_trace: list[float] = field(default_factory=list)
    projection_backtracks: int = 0


class KernelUpdate(NamedTuple):
    kernel: np.ndarray
    degenerate: bool
    backtracked: bool


def delta_kernel(size: int) -> np.ndarray:
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


def check_kernel(kernel, atol: float = 1e-10) -> np.ndarray:
    k = as_image(kernel)
    if k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
        raise ValueError(f"kernel sides must be odd, got {k.shape}")
    if (k < 0).any():
        raise ValueError("kernel has negative weights")
    if abs(k.sum() - 1.0) > atol:
        raise ValueError(f"kernel sums to {k.sum()!r}, expected 1")
    return k


def tv_smoothed(u: np.ndarray, eps: float) -> float:
    g = gradient(u)
    return float(np.sqrt(g[0] ** 2 + g[1] ** 2 + eps**2).sum())


def _diffusivity(u: np.ndarray, eps: float) -> np.ndarray:
    g = gradient(u)
    return 1.0 / np.sqrt(g[0] ** 2 + g[1] ** 2 + eps**2)


def _tv_operator(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``-div(w grad x)``: positive semidefinite."""
    return -divergence(w * gradient(x))


def energy(img, kernel, observed, cfg: DeconvConfig) -> float:
    img = as_image(img)
    observed = as_image(observed)
    kernel = as_image(kernel)
    if img.shape != observed.shape:
        raise ShapeMismatchError(f"image {img.shape} vs observed {observed.shape}")
    r = convolve(img, kernel, cfg.rule) - observed
    return float(
        0.5 * np.sum(r * r)
        + cfg.alpha1 * tv_smoothed(img, cfg.epsilon_tv)
        + cfg.alpha2 * tv_smoothed(kernel, cfg.epsilon_tv)
    )


# --- DCT-diagonal solves ---


def solve_quadratic_dct(coeff_spectrum, rhs) -> np.ndarray:
    """Solve ``A x = rhs`` for an operator ``A`` diagonal in the DCT-II basis."""
    spec = np.asarray(coeff_spectrum, dtype=np.float64)
    if not (spec > 0).all():
        raise ValueError("coefficient spectrum must be strictly positive")
    return idct2(dct2(rhs) / spec)


def kernel_dct_symbol(kernel: np.ndarray, shape) -> np.ndarray:
    """DCT eigenvalues of reflective convolution by the symmetrized ``kernel``.

    Exact when the kernel is centro-symmetric; otherwise the symmetric part's
    spectrum, which is what the preconditioner needs.
    """
    sym = 0.5 * (kernel + kernel[::-1, ::-1])
    sym = 0.5 * (sym + sym[::-1, :])
    sym = 0.5 * (sym + sym[:, ::-1])
    e0 = np.zeros(shape)
    e0[0, 0] = 1.0
    return dct2(convolve(e0, sym, BoundaryRule.REFLECT)) / dct2(e0)


def pcg(apply_A, b, x0, precond, tol: float, max_iter: int):
    """Preconditioned conjugate gradients. Returns ``(x, relative residual, iterations)``."""
    x = x0.copy()
    r = b - apply_A(x)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        bnorm = 1.0
    res = np.linalg.norm(r) / bnorm
    if res <= tol:
        return x, res, 0
    z = precond(r)
    p = z.copy()
    rz = np.vdot(r, z)
    it = 0
    for it in range(1, max_iter + 1):
        Ap = apply_A(p)
        pAp = np.vdot(p, Ap)
        if pAp <= 0:
            break
        step = rz / pAp
        x += step * p
        r -= step * Ap
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            break
        z = precond(r)
        rz_new = np.vdot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, res, it


# --- image half-step ---


def image_operator(kernel: np.ndarray, weights: np.ndarray, alpha1: float, rule=BoundaryRule.REFLECT):
    """Linearized image operator ``H^T H + alpha1 (-div w grad)``."""

    def apply(x):
        return convolve_adjoint(convolve(x, kernel, rule), kernel, rule) + alpha1 * _tv_operator(x, weights)

    return apply


def image_step(kernel, observed, current, cfg: DeconvConfig) -> np.ndarray:
    kernel = as_image(kernel)
    observed = as_image(observed)
    x = as_image(current).copy()
    if x.shape != observed.shape:
        raise ShapeMismatchError(f"current {x.shape} vs observed {observed.shape}")
    b = convolve_adjoint(observed, kernel, cfg.rule)
    h_sym = kernel_dct_symbol(kernel, x.shape) ** 2
    lam = neumann_laplacian_symbol(x.shape)
    for _ in range(cfg.fixed_point_iterations):
        w = _diffusivity(x, cfg.epsilon_tv)
        apply_A = image_operator(kernel, w, cfg.alpha1, cfg.rule)
        spec = h_sym + cfg.alpha1 * np.median(w) * lam
        spec = np.maximum(spec, 1e-3 * spec.max())
        start = np.linalg.norm(b - apply_A(x))
        x, res, its = pcg(apply_A, b, x, lambda r: solve_quadratic_dct(spec, r), cfg.solver_tolerance, cfg.max_solver_iterations)
        if not np.isfinite(x).all() or res * max(np.linalg.norm(b), 1.0) > start * (1 + 1e-12) + 1e-300:
            raise SolverDivergedError(f"image solve residual grew (relative residual {res:.3g})")
        log.debug("image_step: %d PCG iterations, relative residual %.2e", its, res)
    return x


# --- kernel half-step ---


def convolution_matrix(img: np.ndarray, ksize: int, rule=BoundaryRule.REFLECT) -> np.ndarray:
    """Matrix ``B`` with ``B @ h.ravel() == convolve(img, h).ravel()`` for ksize x ksize ``h``."""
    r = ksize // 2
    windows = sliding_window_view(pad(img, r, r, rule), (ksize, ksize))
    return windows[:, :, ::-1, ::-1].reshape(img.size, ksize * ksize)


def _normal_equations(img, observed, ksize, rule, chunk_rows: int = 64):
    r = ksize // 2
    windows = sliding_window_view(pad(img, r, r, rule), (ksize, ksize))[:, :, ::-1, ::-1]
    n = ksize * ksize
    BtB = np.zeros((n, n))
    Btf = np.zeros(n)
    for i in range(0, img.shape[0], chunk_rows):
        B = windows[i : i + chunk_rows].reshape(-1, n)
        BtB += B.T @ B
        Btf += B.T @ observed[i : i + chunk_rows].ravel()
    return BtB, Btf


def gradient_matrix(shape) -> np.ndarray:
    """Dense matrix form of :func:`gradient` on images of ``shape`` (rows: x part, then y part)."""
    n = shape[0] * shape[1]
    eye = np.eye(n).reshape(n, *shape)
    return np.concatenate([np.stack([gradient(e)[c].ravel() for e in eye], axis=1) for c in (0, 1)])


def kernel_step(img, observed, current, cfg: DeconvConfig) -> KernelUpdate:
    img = as_image(img)
    observed = as_image(observed)
    current = as_image(current)
    if img.shape != observed.shape:
        raise ShapeMismatchError(f"image {img.shape} vs observed {observed.shape}")
    if np.ptp(img) < 1e-12:
        return KernelUpdate(current.copy(), True, False)
    k = current.shape[0]
    BtB, Btf = _normal_equations(img, observed, k, cfg.rule)
    D = gradient_matrix(current.shape)
    half = k * k
    h = current.ravel().copy()
    for _ in range(cfg.fixed_point_iterations):
        w = _diffusivity(h.reshape(k, k), cfg.epsilon_tv).ravel()
        A = BtB + cfg.alpha2 * (D[:half].T * w) @ D[:half] + cfg.alpha2 * (D[half:].T * w) @ D[half:]
        h_new = np.linalg.solve(A, Btf)
        if not np.isfinite(h_new).all():
            raise SolverDivergedError("kernel solve produced non-finite weights")
        h = h_new
    projected = np.clip(h.reshape(k, k), 0.0, None)
    total = projected.sum()
    if total <= 0:
        raise DegenerateProjectionError("all kernel weights clipped to zero")
    projected /= total

    # projection can raise the energy: backtrack along the feasible segment
    e_cur = energy(img, current, observed, cfg)
    candidate, t = projected, 1.0
    for _ in range(30):
        if energy(img, candidate, observed, cfg) <= e_cur:
            return KernelUpdate(candidate, False, t < 1.0)
        t *= 0.5
        candidate = (1 - t) * current + t * projected
    return KernelUpdate(current.copy(), False, True)


# --- alternation ---


def blind_deconvolve(observed, cfg: DeconvConfig | None = None) -> DeconvResult:
    cfg = cfg or DeconvConfig()
    observed = as_image(observed)
    if cfg.kernel_size > min(observed.shape):
        k = min(observed.shape) if min(observed.shape) % 2 else min(observed.shape) - 1
        warnings.warn(f"kernel_size {cfg.kernel_size} exceeds image; using {k}", stacklevel=2)
        cfg = replace(cfg, kernel_size=max(k, 3))
    img = observed.copy()
    kernel = delta_kernel(cfg.kernel_size)
    trace = [energy(img, kernel, observed, cfg)]
    backtracks = 0
    for it in range(cfg.outer_iterations):
        update = kernel_step(img, observed, kernel, cfg)
        kernel = update.kernel
        backtracks += update.backtracked
        img = image_step(kernel, observed, img, cfg)
        trace.append(energy(img, kernel, observed, cfg))
        log.info("deconv iteration %d: energy %.6g", it + 1, trace[-1])
        if trace[-1] > trace[-2] + 1e-8:
            log.warning("energy increased by %.3g at iteration %d", trace[-1] - trace[-2], it + 1)
        if abs(trace[-2] - trace[-1]) <= cfg.energy_tolerance * abs(trace[-2]):
            break
    return DeconvResult(image=img, kernel=kernel, energy_trace=trace, projection_backtracks=backtracks)
