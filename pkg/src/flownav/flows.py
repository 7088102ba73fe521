"""Analytic steady flows: Taylor-Green vortex lattice (2D) and Arnold-Beltrami-Childress (3D).

Both flows are 2*pi-periodic in every direction, incompressible and zero-mean.
Velocity gradients are returned in closed form with the repo-wide convention

    grad[i, j] = d u_i / d x_j

All samplers broadcast over leading axes: positions of shape (..., d) yield
velocities (..., d) and gradients (..., d, d).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, InvalidPositionError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TgvConfig:
    """Taylor-Green vortex lattice, amplitude U."""

    amplitude: float = 0.5

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ValueError("TGV amplitude must be positive")


@dataclass(frozen=True)
class AbcConfig:
    """Arnold-Beltrami-Childress coefficients."""

    a: float = math.sqrt(3.0)
    b: float = math.sqrt(2.0)
    c: float = 1.0


def wrap_periodic(pos):
    """Wrap coordinates into the canonical box [0, 2*pi)^d."""
    p = np.asarray(pos, dtype=float)
    if not np.all(np.isfinite(p)):
        raise InvalidPositionError(f"non-finite position: {pos!r}")
    return np.mod(p, TWO_PI)


def _check_dim(pos, dim, flow):
    if pos.shape[-1] != dim:
        raise DimensionMismatchError(
            f"{flow} expects {dim}-dimensional positions, got shape {pos.shape}"
        )


def tgv_velocity(pos, cfg: TgvConfig):
    """Velocity only; hot path for trajectory integration.

    Coordinates are (x, z) with z the vertical (target) direction.
    """
    u = cfg.amplitude
    x = pos[..., 0]
    z = pos[..., 1]
    vel = np.empty_like(pos)
    vel[..., 0] = -u * np.cos(x) * np.sin(z)
    vel[..., 1] = u * np.sin(x) * np.cos(z)
    return vel


def tgv_sample(pos, cfg: TgvConfig = TgvConfig()):
    """Velocity and gradient of the vortex lattice at `pos` (wrapped internally)."""
    p = wrap_periodic(pos)
    _check_dim(p, 2, "TGV")
    u = cfg.amplitude
    sx, cx = np.sin(p[..., 0]), np.cos(p[..., 0])
    sz, cz = np.sin(p[..., 1]), np.cos(p[..., 1])
    vel = np.stack([-u * cx * sz, u * sx * cz], axis=-1)
    # du_x/dx = U sx sz, du_x/dz = -U cx cz, du_z/dx = U cx cz, du_z/dz = -U sx sz
    a = u * sx * sz
    b = u * cx * cz
    grad = np.stack(
        [np.stack([a, -b], axis=-1), np.stack([b, -a], axis=-1)], axis=-2
    )
    return vel, grad


def abc_velocity(pos, cfg: AbcConfig):
    """Velocity only; hot path for trajectory integration."""
    a, b, c = cfg.a, cfg.b, cfg.c
    x = pos[..., 0]
    y = pos[..., 1]
    z = pos[..., 2]
    vel = np.empty_like(pos)
    vel[..., 0] = a * np.sin(z) + c * np.cos(y)
    vel[..., 1] = b * np.sin(x) + a * np.cos(z)
    vel[..., 2] = c * np.sin(y) + b * np.cos(x)
    return vel


def abc_sample(pos, cfg: AbcConfig = AbcConfig()):
    """Velocity and gradient of the ABC flow at `pos` (wrapped internally)."""
    p = wrap_periodic(pos)
    _check_dim(p, 3, "ABC")
    a, b, c = cfg.a, cfg.b, cfg.c
    sx, cx = np.sin(p[..., 0]), np.cos(p[..., 0])
    sy, cy = np.sin(p[..., 1]), np.cos(p[..., 1])
    sz, cz = np.sin(p[..., 2]), np.cos(p[..., 2])
    zero = np.zeros_like(sx)
    vel = np.stack([a * sz + c * cy, b * sx + a * cz, c * sy + b * cx], axis=-1)
    grad = np.stack(
        [
            np.stack([zero, -c * sy, a * cz], axis=-1),
            np.stack([b * cx, zero, -a * sz], axis=-1),
            np.stack([-b * sx, c * cy, zero], axis=-1),
        ],
        axis=-2,
    )
    return vel, grad


def vorticity_from_gradient(grad):
    """Curl components from a (..., 3, 3) gradient under grad[i,j] = du_i/dx_j."""
    wx = grad[..., 2, 1] - grad[..., 1, 2]
    wy = grad[..., 0, 2] - grad[..., 2, 0]
    wz = grad[..., 1, 0] - grad[..., 0, 1]
    return np.stack([wx, wy, wz], axis=-1)
