"""Speed-preserving reorientation kernels and the jump operator they drive.

A kernel acts within each speed shell only (reorientation never changes the
speed), so it is represented by one angular redistribution matrix shared by
all shells.  Columns are normalized against the angular quadrature, making
every radial function of the velocity an exact collision invariant of the
discrete operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import DistributionField, VelocityGrid, phase_integral_values

__all__ = [
    "KernelError",
    "AngularProfile",
    "ScatteringKernel",
    "isotropic",
    "forward_peaked",
    "custom_profile",
    "build_kernel",
    "self_similar_H",
    "reverse_mass_bound",
    "apply_Q2",
    "collision_invariant_defect",
]


class KernelError(ValueError):
    """Raised for invalid kernel construction or mismatched grids."""


@dataclass(frozen=True)
class AngularProfile:
    """Nonnegative function of the scattering cosine c = u . u' in [-1, 1]."""

    name: str
    g: Callable[[np.ndarray], np.ndarray]


def isotropic() -> AngularProfile:
    return AngularProfile("isotropic", lambda c: np.ones_like(np.asarray(c, dtype=float)))


def forward_peaked(kappa: float) -> AngularProfile:
    """exp(kappa * (c - 1)): peaked around no deflection, normalized at build time."""
    if kappa <= 0:
        raise KernelError(f"forward peaking exponent must be > 0, got {kappa}")
    return AngularProfile(
        f"forward_peaked(kappa={kappa:g})",
        lambda c: np.exp(kappa * (np.asarray(c, dtype=float) - 1.0)),
    )


def custom_profile(name: str, g: Callable[[np.ndarray], np.ndarray]) -> AngularProfile:
    return AngularProfile(name, g)


@dataclass(frozen=True, eq=False)
class ScatteringKernel:
    """Angular redistribution matrix G[a, a'] shared across shells, plus the jump rate.

    Invariants checked at construction: G >= 0 and every column satisfies
    sum_a w_a G[a, a'] = 1 within 1e-12 (the discrete normalization law).
    """

    grid: VelocityGrid
    matrix: np.ndarray
    lam: float

    def __post_init__(self):
        G = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", G)
        A = self.grid.n_angles
        if G.shape != (A, A):
            raise KernelError(f"kernel matrix must be ({A}, {A}), got {G.shape}")
        if not np.all(np.isfinite(G)) or np.any(G < 0):
            raise KernelError("kernel matrix entries must be finite and nonnegative")
        if self.lam < 0 or not math.isfinite(self.lam):
            raise KernelError(f"jump rate must be >= 0 and finite, got {self.lam}")
        defect = self.normalization_defect()
        if defect > 1e-12:
            raise KernelError(f"kernel columns are not normalized (defect {defect:.3e})")

    def normalization_defect(self) -> float:
        col = self.grid.angular_weights @ self.matrix
        return float(np.max(np.abs(col - 1.0)))

    def gain_matrix(self) -> np.ndarray:
        """G * diag(w): applying it along the angle axis integrates the gain term."""
        return self.matrix * self.grid.angular_weights[None, :]


def build_kernel(profile: AngularProfile, grid: VelocityGrid, lam: float) -> ScatteringKernel:
    """Normalize the profile on the angular rule: G[a,a'] = g(c) / sum_b w_b g(c_b,a').

    The jump rate may be zero (transport-only runs); the profile must give
    every column positive mass under the quadrature.
    """
    cosines = np.clip(grid.directions @ grid.directions.T, -1.0, 1.0)
    raw = np.asarray(profile.g(cosines), dtype=float)
    if raw.shape != cosines.shape:
        raise KernelError("profile must evaluate elementwise on the cosine matrix")
    if not np.all(np.isfinite(raw)) or np.any(raw < 0):
        raise KernelError(f"profile {profile.name!r} must be finite and nonnegative")
    col = grid.angular_weights @ raw
    if np.any(col <= 0):
        a_bad = int(np.argmin(col))
        raise KernelError(
            f"profile {profile.name!r} vanishes on all nodes reachable from angle "
            f"{a_bad} (direction {grid.directions[a_bad]})"
        )
    return ScatteringKernel(grid=grid, matrix=raw / col[None, :], lam=float(lam))


def self_similar_H(speed: float) -> float:
    """Scaling factor 1/s^3 that maps the kernel to the unit sphere."""
    if not (speed > 0):
        raise KernelError(f"speed must be > 0, got {speed}")
    return float(speed) ** -3.0


def reverse_mass_bound(kernel: ScatteringKernel) -> float:
    """max_a sum_a' w_a' G[a, a']: the concrete bound on outgoing redistribution mass."""
    return float(np.max(kernel.matrix @ kernel.grid.angular_weights))


def _check_match(f: DistributionField, kernel: ScatteringKernel) -> None:
    if f.grid.velocity is kernel.grid:
        return
    if not f.grid.velocity.same_rule(kernel.grid):
        raise KernelError("field and kernel are defined on different velocity grids")


def apply_Q2(f: DistributionField, kernel: ScatteringKernel) -> np.ndarray:
    """Jump-process rate lam * (gain - f) per phase node; shells never mix.

    Returns a rate array shaped like ``f.values`` (it is signed, not a density).
    """
    _check_match(f, kernel)
    gain = np.einsum("ab,...b->...a", kernel.gain_matrix(), f.values)
    return kernel.lam * (gain - f.values)


def collision_invariant_defect(f: DistributionField, kernel: ScatteringKernel, m: float) -> float:
    """|integral of Q2(f) * (1 + |xi|^m)|: zero up to rounding by construction."""
    if m < 0:
        raise KernelError(f"moment order must be >= 0, got {m}")
    rate = apply_Q2(f, kernel)
    speeds = f.grid.velocity.speeds
    weight = (1.0 + speeds**m)[:, None] * np.ones((1, f.grid.velocity.n_angles))
    return abs(phase_integral_values(f.grid, rate, weight))
