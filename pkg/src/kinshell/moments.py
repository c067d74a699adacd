"""Velocity moments of the phase density and the split bounds controlling them.

Spatial L^r norms are discrete: cell-volume-weighted power sums on the lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .grid import DistributionField, phase_integral_values

__all__ = [
    "MomentSet",
    "compute_moments",
    "radial_moment",
    "energy_functional",
    "interpolation_bound",
    "moment_norm_bound",
    "BALL_VOLUME_COEFF",
    "spatial_norm",
]

# Volume of the unit ball in velocity space: the explicit constant in the
# density split bound (N = 3 always).
BALL_VOLUME_COEFF = 4.0 * math.pi / 3.0


@dataclass
class MomentSet:
    """Per-spatial-cell number density, current vector and m-th absolute moment."""

    order: float
    density: np.ndarray
    current: np.ndarray
    radial: np.ndarray

    def validate(self, s_max: float, tol: float = 1e-12) -> None:
        scale = max(float(self.density.max(initial=0.0)), 1e-300)
        if self.density.min() < -tol * scale:
            raise ValueError("number density has a negative entry")
        if self.radial.min() < -tol * scale * max(1.0, s_max**self.order):
            raise ValueError("radial moment has a negative entry")
        speed = np.linalg.norm(self.current, axis=-1)
        if np.any(speed > s_max * self.density + tol * scale * s_max):
            raise ValueError("current exceeds s_max * density")


def compute_moments(f: DistributionField, m: float = 2.0) -> MomentSet:
    """Velocity quadrature of f, xi*f and |xi|^m*f per spatial cell."""
    if m < 0:
        raise ValueError(f"moment order must be >= 0, got {m}")
    vg = f.grid.velocity
    nw = vg.node_weights()
    density = np.einsum("...sa,sa->...", f.values, nw)
    current = np.einsum("...sa,sad->...d", f.values, nw[:, :, None] * vg.xi_vectors())
    radial = np.einsum("...sa,sa->...", f.values, nw * vg.speeds[:, None] ** m)
    return MomentSet(order=m, density=density, current=current, radial=radial)


def radial_moment(f: DistributionField, p: float) -> np.ndarray:
    """Per-cell integral of |xi|^p * f over velocity space."""
    vg = f.grid.velocity
    return np.einsum("...sa,sa->...", f.values, vg.node_weights() * vg.speeds[:, None] ** p)


def energy_functional(f: DistributionField, m: float) -> float:
    """E_m = integral of (1 + |xi|^m) f over the whole phase space."""
    if m < 0:
        raise ValueError(f"moment order must be >= 0, got {m}")
    speeds = f.grid.velocity.speeds
    weight = np.broadcast_to(
        (1.0 + speeds**m)[:, None], (speeds.size, f.grid.velocity.n_angles)
    )
    return phase_integral_values(f.grid, f.values, weight)


def interpolation_bound(
    f: DistributionField, p: float, R: Union[float, np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """Density vs its split bound (4/3)pi R^3 ||f||_inf + R^-p M_p, per cell.

    ``R`` may be a scalar or a per-cell array (the latter supports evaluating
    the bound at the per-cell optimal cutoff).  Returns (lhs, rhs) arrays.
    """
    if p < 1:
        raise ValueError(f"moment exponent must be >= 1, got {p}")
    R = np.asarray(R, dtype=float)
    if np.any(R <= 0):
        raise ValueError("cutoff R must be > 0")
    sup_f = float(f.values.max(initial=0.0))
    lhs = compute_moments(f, 0.0).density
    rhs = BALL_VOLUME_COEFF * R**3 * sup_f + R ** (-p) * radial_moment(f, p)
    return lhs, np.broadcast_to(rhs, lhs.shape).copy()


def spatial_norm(values: np.ndarray, cell_volume: float, r: float) -> float:
    """Discrete L^r norm over the spatial lattice: (sum |v|^r * cell_volume)^(1/r)."""
    if r < 1:
        raise ValueError(f"norm exponent must be >= 1, got {r}")
    return float(np.sum(np.abs(values) ** r) * cell_volume) ** (1.0 / r)


def moment_norm_bound(f: DistributionField, m: float, p: float) -> tuple[float, float]:
    """Spatial L^((3+p)/(3+m)) norm of the m-th moment vs its global moment bound.

    The bound constant comes from the same cutoff optimization as the density
    split, applied to the |xi|^m-weighted ball: max(1, 4*pi/(3+m)).
    At m = 0 this reduces to the norm version of the density bound.
    """
    if not (p > m >= 0):
        raise ValueError(f"need p > m >= 0, got m={m}, p={p}")
    Mm = radial_moment(f, m)
    r = (3.0 + p) / (3.0 + m)
    lhs = spatial_norm(Mm, f.grid.spatial.cell_volume, r)
    sup_f = float(f.values.max(initial=0.0))
    c_t = max(1.0, 4.0 * math.pi / (3.0 + m))
    total_p = phase_integral_values(
        f.grid,
        f.values,
        np.broadcast_to(
            (f.grid.velocity.speeds**p)[:, None],
            (f.grid.velocity.n_shells, f.grid.velocity.n_angles),
        ),
    )
    rhs = c_t * (sup_f + 1.0) * total_p ** ((m + 3.0) / (3.0 + p))
    return lhs, float(rhs)
