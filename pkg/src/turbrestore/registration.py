"""Large-deformation diffeomorphic registration of a moving image onto a reference.

A time-varying velocity ``v`` (``T`` steps, ``dt = 1/T``) generates the
flow ``d phi_t / dt = v_t(phi_t)``. The energy is

    E(v) = 1/2 sum_t dt ||v_t||_V^2 + C/2 ||I0 o phi_{1,0} - I1||^2

with ``||f||_V = ||L f||`` and ``L = -alpha Lap + gamma``. ``L`` is applied
spectrally in the DCT-II basis, which diagonalizes the Neumann Laplacian.

Flows are integrated semi-Lagrangianly with bilinear, clamp-to-edge
interpolation. The energy gradient is the exact reverse-mode derivative of
that discrete scheme, mapped into V by ``K = (L^T L)^-1``; in the continuum
limit it is the usual ``v_t - K(|D phi_{t,1}| grad J0_t (J0_t - J1_t))``
up to the data weight.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BoundaryRule,
    ShapeMismatchError,
    _bilinear_parts,
    as_field,
    as_image,
    dct2,
    idct2,
    identity_grid,
    neumann_laplacian_symbol,
    warp,
)

log = logging.getLogger(__name__)

RECOMMENDED_ALPHA = (0.01, 0.3)
RECOMMENDED_GAMMA = (0.1, 1.0)


class RegistrationError(RuntimeError):
    pass


class ParameterWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CauchyNavierParams:
    """Weights of ``L = -alpha Lap + gamma``.

    ``spacing`` is the grid step used by the Laplacian. ``None`` measures
    the domain so that its longer side has unit length, which keeps the
    smoothing scale of a given ``(alpha, gamma)`` tied to the field of view.
    """

    alpha: float = 0.01
    gamma: float = 0.7
    spacing: float | None = None

    def __post_init__(self):
        if self.alpha < 0 or self.gamma <= 0:
            raise ValueError("need alpha >= 0 and gamma > 0")

    def box_violations(self) -> list[str]:
        msgs = []
        lo, hi = RECOMMENDED_ALPHA
        if not lo <= self.alpha <= hi:
            msgs.append(f"alpha={self.alpha} outside recommended [{lo}, {hi}]")
        lo, hi = RECOMMENDED_GAMMA
        if not lo <= self.gamma <= hi:
            msgs.append(f"gamma={self.gamma} outside recommended [{lo}, {hi}]")
        if not self.alpha < self.gamma:
            msgs.append(f"alpha={self.alpha} should be smaller than gamma={self.gamma}")
        return msgs

    def symbol(self, shape) -> np.ndarray:
        """Per-frequency multiplier of ``L`` in the DCT-II basis."""
        h = self.spacing if self.spacing is not None else 1.0 / max(shape)
        return self.gamma + self.alpha * neumann_laplacian_symbol(shape, h)


@dataclass(frozen=True)
class RegistrationConfig:
    params: CauchyNavierParams = field(default_factory=CauchyNavierParams)
    data_weight: float = 1e5
    time_steps: int = 5
    step_size: float = 0.05
    max_iterations: int = 200
    convergence_tol: float = 1e-6
    max_halvings: int = 20
    diffeo_tolerance: float = 0.1

    def __post_init__(self):
        if self.data_weight < 0 or self.time_steps < 1 or self.step_size <= 0:
            raise ValueError("need data_weight >= 0, time_steps >= 1, step_size > 0")


@dataclass
class RegistrationResult:
    velocity: np.ndarray  # (T, 2, H, W)
    forward_map: np.ndarray  # displacement of phi_{0,1}
    inverse_map: np.ndarray  # displacement of phi_{1,0}
    warped: np.ndarray
    energy_trace: list[float]
    iterations: int = 0
    converged: bool = False


def _check_velocity(vel) -> np.ndarray:
    v = np.asarray(vel, dtype=np.float64)
    if v.ndim != 4 or v.shape[1] != 2 or v.shape[0] < 1:
        raise ValueError(f"expected a (T, 2, H, W) velocity, got shape {v.shape}")
    return v


def _warn_params(params: CauchyNavierParams) -> None:
    for msg in params.box_violations():
        warnings.warn(msg, ParameterWarning, stacklevel=3)


# --- V-space operators ---


def apply_L(f, params: CauchyNavierParams) -> np.ndarray:
    f = as_field(f)
    m = params.symbol(f.shape[1:])
    return np.stack([idct2(m * dct2(c)) for c in f])


def cn_inner_product(f, g, params: CauchyNavierParams) -> float:
    f = as_field(f)
    g = as_field(g)
    if f.shape != g.shape:
        raise ShapeMismatchError(f"fields differ in shape: {f.shape} vs {g.shape}")
    m2 = params.symbol(f.shape[1:]) ** 2
    return float(sum(np.sum(m2 * dct2(a) * dct2(b)) for a, b in zip(f, g)))


def smooth_gradient(raw_gradient, params: CauchyNavierParams) -> np.ndarray:
    """Apply ``K = (L^T L)^-1``, mapping an L2 gradient to its V-space representative."""
    f = as_field(raw_gradient)
    m2 = params.symbol(f.shape[1:]) ** 2
    return np.stack([idct2(dct2(c) / m2) for c in f])


def velocity_inner_product(a, b, params: CauchyNavierParams) -> float:
    """Time-integrated V inner product ``sum_t dt <a_t, b_t>_V``."""
    a = _check_velocity(a)
    b = _check_velocity(b)
    dt = 1.0 / a.shape[0]
    return dt * sum(cn_inner_product(x, y, params) for x, y in zip(a, b))


# --- flow integration ---


def _interp(field: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    x0, x1, y0, y1, fx, fy = _bilinear_parts(field.shape[-2:], X, Y, BoundaryRule.CLAMP)
    w00, w01, w10, w11 = (1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy
    return field[..., y0, x0] * w00 + field[..., y0, x1] * w01 + field[..., y1, x0] * w10 + field[..., y1, x1] * w11


def _interp_grad(field: np.ndarray, X: np.ndarray, Y: np.ndarray):
    """Partial derivatives of the bilinear interpolant with respect to the sample position."""
    h, w = field.shape[-2:]
    x0, x1, y0, y1, fx, fy = _bilinear_parts((h, w), X, Y, BoundaryRule.CLAMP)
    in_x = (X >= 0) & (X <= w - 1)
    in_y = (Y >= 0) & (Y <= h - 1)
    f00, f01, f10, f11 = field[..., y0, x0], field[..., y0, x1], field[..., y1, x0], field[..., y1, x1]
    dx = ((1 - fy) * (f01 - f00) + fy * (f11 - f10)) * in_x
    dy = ((1 - fx) * (f10 - f00) + fx * (f11 - f01)) * in_y
    return dx, dy


def _interp_adjoint(g: np.ndarray, X: np.ndarray, Y: np.ndarray, shape) -> np.ndarray:
    """Adjoint of ``_interp`` in its field argument (scatter with bilinear weights)."""
    h, w = shape
    x0, x1, y0, y1, fx, fy = _bilinear_parts(shape, X, Y, BoundaryRule.CLAMP)
    idx = np.concatenate([(y0 * w + x0).ravel(), (y0 * w + x1).ravel(), (y1 * w + x0).ravel(), (y1 * w + x1).ravel()])
    wts = np.concatenate([((1 - fx) * (1 - fy)).ravel(), (fx * (1 - fy)).ravel(), ((1 - fx) * fy).ravel(), (fx * fy).ravel()])
    lead = g.shape[:-2]
    g2 = g.reshape(-1, h * w)
    out = np.stack([np.bincount(idx, weights=wts * np.tile(row, 4), minlength=h * w) for row in g2])
    return out.reshape(lead + (h, w))


def integrate_flow(vel, direction: str = "forward") -> np.ndarray:
    """Displacement of ``phi_{0,1}`` (forward) or ``phi_{1,0}`` (backward)."""
    v = _check_velocity(vel)
    T = v.shape[0]
    dt = 1.0 / T
    X, Y = identity_grid(v.shape[2:])
    d = np.zeros(v.shape[1:])
    if direction == "backward":
        for t in range(T):
            step = dt * v[t]
            d = -step + _interp(d, X - step[0], Y - step[1])
    elif direction == "forward":
        for t in reversed(range(T)):
            step = dt * v[t]
            d = step + _interp(d, X + step[0], Y + step[1])
    else:
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    return d


def compose(outer, inner) -> np.ndarray:
    """Displacement of ``(x -> x + outer) o (x -> x + inner)``."""
    outer = as_field(outer)
    inner = as_field(inner)
    X, Y = identity_grid(inner.shape[1:])
    return inner + _interp(outer, X + inner[0], Y + inner[1])


def jacobian_determinant(displacement) -> np.ndarray:
    """Central-difference Jacobian determinant of ``x -> x + d(x)`` on interior pixels."""
    d = as_field(displacement)
    u, v = d
    ux = (u[1:-1, 2:] - u[1:-1, :-2]) / 2
    uy = (u[2:, 1:-1] - u[:-2, 1:-1]) / 2
    vx = (v[1:-1, 2:] - v[1:-1, :-2]) / 2
    vy = (v[2:, 1:-1] - v[:-2, 1:-1]) / 2
    return (1 + ux) * (1 + vy) - uy * vx


# --- energy and gradient ---


def _check_pair(moving, reference):
    moving = as_image(moving)
    reference = as_image(reference)
    if moving.shape != reference.shape:
        raise ShapeMismatchError(f"moving {moving.shape} vs reference {reference.shape}")
    return moving, reference


def registration_energy(vel, moving, reference, cfg: RegistrationConfig) -> float:
    v = _check_velocity(vel)
    moving, reference = _check_pair(moving, reference)
    if v.shape[2:] != moving.shape:
        raise ShapeMismatchError(f"velocity {v.shape[2:]} vs images {moving.shape}")
    reg = 0.5 * velocity_inner_product(v, v, cfg.params)
    r = warp(moving, integrate_flow(v, "backward"), BoundaryRule.CLAMP) - reference
    return float(reg + 0.5 * cfg.data_weight * np.sum(r * r))


def _energy_and_gradient(v, moving, reference, cfg: RegistrationConfig):
    T = v.shape[0]
    dt = 1.0 / T
    shape = moving.shape
    X, Y = identity_grid(shape)
    # forward sweep, keeping the trajectory for the reverse pass
    ds = [np.zeros((2,) + shape)]
    pos = []
    for t in range(T):
        step = dt * v[t]
        Xs, Ys = X - step[0], Y - step[1]
        pos.append((Xs, Ys))
        ds.append(-step + _interp(ds[-1], Xs, Ys))
    d = ds[-1]
    Xw, Yw = X + d[0], Y + d[1]
    warped = _interp(moving, Xw, Yw)
    r = warped - reference
    m2 = cfg.params.symbol(shape) ** 2
    v_hat = np.stack([[dct2(c) for c in vt] for vt in v])
    reg = 0.5 * dt * float(np.sum(m2 * v_hat * v_hat))
    E = reg + 0.5 * cfg.data_weight * float(np.sum(r * r))

    # reverse sweep
    gw = cfg.data_weight * r
    ix, iy = _interp_grad(moving, Xw, Yw)
    gd = np.stack([gw * ix, gw * iy])
    grad_l2 = np.empty_like(v)
    for t in reversed(range(T)):
        Xs, Ys = pos[t]
        px, py = _interp_grad(ds[t], Xs, Ys)
        grad_l2[t, 0] = -dt * (gd[0] + gd[0] * px[0] + gd[1] * px[1])
        grad_l2[t, 1] = -dt * (gd[1] + gd[0] * py[0] + gd[1] * py[1])
        gd = _interp_adjoint(gd, Xs, Ys, shape)
    grad = np.stack([[v[t, c] + idct2(dct2(grad_l2[t, c]) / m2) / dt for c in (0, 1)] for t in range(T)])
    return E, grad, warped, d


def energy_gradient(vel, moving, reference, cfg: RegistrationConfig) -> np.ndarray:
    """Gradient of :func:`registration_energy` in the time-integrated V metric."""
    v = _check_velocity(vel)
    moving, reference = _check_pair(moving, reference)
    if v.shape[2:] != moving.shape:
        raise ShapeMismatchError(f"velocity {v.shape[2:]} vs images {moving.shape}")
    return _energy_and_gradient(v, moving, reference, cfg)[1]


# --- steepest descent ---


def register(moving, reference, cfg: RegistrationConfig | None = None, initial_velocity=None) -> RegistrationResult:
    cfg = cfg or RegistrationConfig()
    moving, reference = _check_pair(moving, reference)
    _warn_params(cfg.params)
    T = cfg.time_steps
    if initial_velocity is None:
        v = np.zeros((T, 2) + moving.shape)
    else:
        v = _check_velocity(initial_velocity).copy()
    E, grad, warped, _ = _energy_and_gradient(v, moving, reference, cfg)
    trace = [E]
    step = cfg.step_size
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        gnorm2 = velocity_inner_product(grad, grad, cfg.params)
        if gnorm2 == 0.0:
            converged = True
            break
        accepted = False
        for _ in range(cfg.max_halvings + 1):
            trial = v - step * grad
            E_new, grad_new, warped_new, _ = _energy_and_gradient(trial, moving, reference, cfg)
            if E_new < E:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if it == 1:
                raise RegistrationError("no energy decrease from the initial velocity after backtracking")
            converged = True
            break
        rel = (E - E_new) / max(abs(E), 1e-300)
        log.debug("iter %d step %.3g energy %.6g rel %.2e", it, step, E_new, rel)
        v, E, grad, warped = trial, E_new, grad_new, warped_new
        trace.append(E)
        step = min(2.0 * step, cfg.step_size)
        if rel < cfg.convergence_tol:
            converged = True
            break
    log.debug("register: %d iterations, energy %.6g -> %.6g", it, trace[0], trace[-1])
    return RegistrationResult(
        velocity=v,
        forward_map=integrate_flow(v, "forward"),
        inverse_map=integrate_flow(v, "backward"),
        warped=warped,
        energy_trace=trace,
        iterations=it,
        converged=converged,
    )
