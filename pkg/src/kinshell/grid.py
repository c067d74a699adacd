"""Phase-space discretization: periodic spatial lattice x (speed shells x angular nodes).

The velocity space is always three-dimensional and discretized as a tensor
product of speed shells (midpoint rule for the radial s^2 ds measure) and
unit directions on the sphere (Gauss nodes in cos(theta) x uniform azimuths).
The angular node set is antipodally symmetric by construction: every
direction is paired with its exact floating-point negation, so odd velocity
moments cancel to rounding.

The spatial box is periodic in 1, 2 or 3 dimensions; transport uses the
first ``dim`` components of the velocity vector.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Union

import numpy as np

__all__ = [
    "GridError",
    "SpatialGrid",
    "VelocityGrid",
    "PhaseGrid",
    "DistributionField",
    "build_velocity_grid",
    "phase_integral",
    "phase_integral_values",
    "save_snapshot",
    "load_snapshot",
    "NEGATIVITY_FLOOR",
]

# Hard assert threshold for density values; entries below this are rejected,
# entries in [NEGATIVITY_FLOOR, 0) are tolerated but never clamped.
NEGATIVITY_FLOOR = -1e-14

SNAPSHOT_FORMAT = "kinshell-snapshot-1"


class GridError(ValueError):
    """Raised for invalid grid parameters or inconsistent field data."""


def _as_tuple(values, n, name, cast):
    if np.isscalar(values):
        values = [values] * n
    values = tuple(cast(v) for v in values)
    if len(values) != n:
        raise GridError(f"{name} must have {n} entries, got {len(values)}")
    return values


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform periodic lattice covering the box [0, L_1) x ... x [0, L_dim)."""

    dim: int
    extent: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise GridError(f"spatial dimension must be 1, 2 or 3, got {self.dim}")
        object.__setattr__(self, "extent", _as_tuple(self.extent, self.dim, "extent", float))
        object.__setattr__(self, "cells", _as_tuple(self.cells, self.dim, "cells", int))
        for L in self.extent:
            if not (L > 0.0 and math.isfinite(L)):
                raise GridError(f"box extent must be positive and finite, got {L}")
        for N in self.cells:
            if N < 2:
                raise GridError(f"cell count per axis must be >= 2, got {N}")

    @property
    def widths(self) -> tuple[float, ...]:
        return tuple(L / N for L, N in zip(self.extent, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    def axis_coordinates(self, axis: int) -> np.ndarray:
        """Cell-center coordinates along one axis."""
        h = self.widths[axis]
        return (np.arange(self.cells[axis]) + 0.5) * h

    def meshgrid(self) -> np.ndarray:
        """Cell-center coordinates, shape (*cells, dim)."""
        axes = [self.axis_coordinates(d) for d in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def wrap(self, points: np.ndarray) -> np.ndarray:
        """Map positions into the periodic box (componentwise modulo L)."""
        points = np.asarray(points, dtype=float)
        return np.mod(points, np.asarray(self.extent))


@dataclass(frozen=True, eq=False)
class VelocityGrid:
    """Speed shells with radial weights plus an antipodally symmetric direction set.

    ``radial_weights`` approximate integration against s^2 ds on (0, s_max];
    ``angular_weights`` sum to 4*pi.  Shell and angle quadratures factorize, so
    the measure of velocity node (i, a) is radial_weights[i] * angular_weights[a].
    """

    speeds: np.ndarray
    radial_weights: np.ndarray
    directions: np.ndarray
    angular_weights: np.ndarray
    s_max: float

    def __post_init__(self):
        speeds = np.asarray(self.speeds, dtype=float)
        rho = np.asarray(self.radial_weights, dtype=float)
        dirs = np.asarray(self.directions, dtype=float)
        w = np.asarray(self.angular_weights, dtype=float)
        object.__setattr__(self, "speeds", speeds)
        object.__setattr__(self, "radial_weights", rho)
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "angular_weights", w)

        if speeds.ndim != 1 or speeds.size < 1:
            raise GridError("need at least one speed shell")
        if np.any(speeds <= 0) or np.any(np.diff(speeds) <= 0):
            raise GridError("shell speeds must be strictly increasing and positive")
        if speeds[-1] > self.s_max + 1e-12:
            raise GridError("shell speeds must not exceed s_max")
        if rho.shape != speeds.shape or np.any(rho <= 0):
            raise GridError("radial weights must be positive, one per shell")
        if dirs.ndim != 2 or dirs.shape[1] != 3 or dirs.shape[0] < 2:
            raise GridError("directions must be an (A, 3) array with A >= 2")
        if w.shape != (dirs.shape[0],) or np.any(w <= 0):
            raise GridError("angular weights must be positive, one per direction")

        norms = np.linalg.norm(dirs, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-12:
            raise GridError("angular nodes must be unit vectors (|u| = 1 within 1e-12)")
        if abs(w.sum() - 4.0 * math.pi) > 1e-10 * 4.0 * math.pi:
            raise GridError("angular weights must sum to 4*pi within 1e-10 relative")
        self._check_antipodal(dirs, w)

        # Radial rule must reproduce s_max^3/3 at its order of accuracy.
        target = self.s_max**3 / 3.0
        if abs(rho.sum() - target) > max(1e-12, target / max(1.0, speeds.size**2)):
            raise GridError(
                "radial weights do not integrate s^2 ds over (0, s_max] at the rule's accuracy"
            )

    @staticmethod
    def _check_antipodal(dirs: np.ndarray, w: np.ndarray) -> None:
        # Pairing must be exact: nodes are constructed as u / -u pairs bitwise.
        index = {d.tobytes(): a for a, d in enumerate(dirs)}
        for a, d in enumerate(dirs):
            partner = index.get((-d).tobytes())
            if partner is None:
                raise GridError(f"direction set is not antipodally symmetric at node {a}")
            if w[partner] != w[a]:
                raise GridError(f"antipodal nodes {a}/{partner} carry unequal weights")

    @property
    def n_shells(self) -> int:
        return int(self.speeds.size)

    @property
    def n_angles(self) -> int:
        return int(self.directions.shape[0])

    def xi_vectors(self) -> np.ndarray:
        """Velocity vectors per (shell, angle), shape (S, A, 3)."""
        return self.speeds[:, None, None] * self.directions[None, :, :]

    def node_weights(self) -> np.ndarray:
        """Quadrature weight rho_i * w_a per velocity node, shape (S, A)."""
        return self.radial_weights[:, None] * self.angular_weights[None, :]

    def rotated(self, rotation: np.ndarray) -> "VelocityGrid":
        """Same rule with every direction rotated by the 3x3 matrix ``rotation``."""
        R = np.asarray(rotation, dtype=float)
        if R.shape != (3, 3):
            raise GridError("rotation must be a 3x3 matrix")
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-12:
            raise GridError("rotation matrix must be orthogonal")
        return VelocityGrid(
            speeds=self.speeds.copy(),
            radial_weights=self.radial_weights.copy(),
            directions=self.directions @ R.T,
            angular_weights=self.angular_weights.copy(),
            s_max=self.s_max,
        )

    def same_rule(self, other: "VelocityGrid") -> bool:
        return (
            self.n_shells == other.n_shells
            and self.n_angles == other.n_angles
            and np.array_equal(self.speeds, other.speeds)
            and np.array_equal(self.radial_weights, other.radial_weights)
            and np.array_equal(self.directions, other.directions)
            and np.array_equal(self.angular_weights, other.angular_weights)
        )


def _factor_angles(n_angles: int) -> tuple[int, int]:
    """Split A into polar x azimuthal counts with an even azimuth count.

    Picks the largest polar count <= sqrt(A) dividing A with even quotient, so
    the antipode map (mu, phi) -> (-mu, phi + pi) stays inside the node set.
    """
    for n_mu in range(int(math.isqrt(n_angles)), 0, -1):
        if n_angles % n_mu == 0 and (n_angles // n_mu) % 2 == 0:
            return n_mu, n_angles // n_mu
    raise GridError(
        f"angle count {n_angles} admits no symmetric product rule "
        "(need A = n_mu * n_phi with n_phi even)"
    )


def build_velocity_grid(shells: int, angles: int, s_max: float) -> VelocityGrid:
    """Midpoint speed shells on (0, s_max] x symmetric product rule on the sphere.

    Shell speeds are midpoints of ``shells`` equal subintervals with weights
    s_i^2 * ds; directions come from Gauss-Legendre nodes in cos(theta) crossed
    with uniform azimuths, assembled in exact antipodal pairs.
    """
    if shells < 1:
        raise GridError(f"shell count must be >= 1, got {shells}")
    if angles < 2:
        raise GridError(f"angle count must be >= 2, got {angles}")
    if not (s_max > 0 and math.isfinite(s_max)):
        raise GridError(f"s_max must be positive and finite, got {s_max}")

    ds = s_max / shells
    speeds = (np.arange(shells) + 0.5) * ds
    radial_weights = speeds**2 * ds

    n_mu, n_phi = _factor_angles(angles)
    mu, mu_w = np.polynomial.legendre.leggauss(n_mu)
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    phi_w = 2.0 * math.pi / n_phi

    reps = []
    rep_w = []
    for k in range(n_mu):
        if mu[k] > 0:
            sin_t = math.sqrt(max(0.0, 1.0 - mu[k] * mu[k]))
            for j in range(n_phi):
                reps.append((sin_t * math.cos(phi[j]), sin_t * math.sin(phi[j]), mu[k]))
                rep_w.append(mu_w[k] * phi_w)
        elif mu[k] == 0.0:
            for j in range(n_phi // 2):
                reps.append((math.cos(phi[j]), math.sin(phi[j]), 0.0))
                rep_w.append(mu_w[k] * phi_w)
    reps = np.asarray(reps, dtype=float)
    rep_w = np.asarray(rep_w, dtype=float)
    directions = np.concatenate([reps, -reps], axis=0)
    angular_weights = np.concatenate([rep_w, rep_w])

    return VelocityGrid(
        speeds=speeds,
        radial_weights=radial_weights,
        directions=directions,
        angular_weights=angular_weights,
        s_max=float(s_max),
    )


@dataclass(frozen=True, eq=False)
class PhaseGrid:
    """Product of a periodic spatial lattice and a velocity rule.

    The measure of phase node (x-cell, shell, angle) is
    cell_volume * radial_weights[shell] * angular_weights[angle] > 0.
    """

    spatial: SpatialGrid
    velocity: VelocityGrid

    @property
    def shape(self) -> tuple[int, ...]:
        return (*self.spatial.cells, self.velocity.n_shells, self.velocity.n_angles)

    def velocity_measures(self) -> np.ndarray:
        """Phase measure per (shell, angle) including the spatial cell volume."""
        return self.spatial.cell_volume * self.velocity.node_weights()

    def same_rule(self, other: "PhaseGrid") -> bool:
        return (
            self.spatial.dim == other.spatial.dim
            and self.spatial.extent == other.spatial.extent
            and self.spatial.cells == other.spatial.cells
            and self.velocity.same_rule(other.velocity)
        )


@dataclass
class DistributionField:
    """Nonnegative phase-space density at one time instant.

    ``values`` is indexed (x-cells..., shell, angle) in units of number per
    unit phase volume.  Entries below NEGATIVITY_FLOOR are rejected outright;
    values are never clamped.
    """

    grid: PhaseGrid
    values: np.ndarray
    time_tag: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise GridError(
                f"field shape {values.shape} does not match grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise GridError(f"field contains a non-finite entry at node {tuple(bad)}")
        vmin = values.min()
        if vmin < NEGATIVITY_FLOOR:
            bad = np.unravel_index(int(np.argmin(values)), values.shape)
            raise GridError(
                f"field has negative entry {vmin:.3e} at node {bad} "
                f"(floor {NEGATIVITY_FLOOR:.0e}; values are never clamped)"
            )
        self.values = values

    @classmethod
    def zeros(cls, grid: PhaseGrid, time_tag: float = 0.0) -> "DistributionField":
        return cls(grid, np.zeros(grid.shape), time_tag)

    def copy(self) -> "DistributionField":
        return DistributionField(self.grid, self.values.copy(), self.time_tag)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


WeightLike = Union[None, float, np.ndarray, Callable[[np.ndarray, np.ndarray], float]]


def _weight_array(grid: PhaseGrid, weight: WeightLike) -> np.ndarray:
    shape = grid.shape
    if weight is None:
        return np.ones(shape)
    if callable(weight):
        coords = grid.spatial.meshgrid().reshape(-1, grid.spatial.dim)
        xi = grid.velocity.xi_vectors()
        S, A = grid.velocity.n_shells, grid.velocity.n_angles
        out = np.empty((coords.shape[0], S, A))
        for c in range(coords.shape[0]):
            x = coords[c]
            for i in range(S):
                for a in range(A):
                    out[c, i, a] = weight(x, xi[i, a])
        return out.reshape(shape)
    arr = np.asarray(weight, dtype=float)
    return np.broadcast_to(arr, shape)


def phase_integral_values(grid: PhaseGrid, values: np.ndarray, weight: WeightLike = None) -> float:
    """Quadrature sum(weight * values * dmu) with a fixed, compensated reduction.

    The reduction runs over the C-ordered (x-major, shell, angle) flattening
    with exact compensated accumulation, so results are bit-reproducible and
    independent of threading.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise GridError(f"values shape {values.shape} does not match grid {grid.shape}")
    warr = _weight_array(grid, weight)
    if not np.all(np.isfinite(warr)):
        bad = np.argwhere(~np.isfinite(np.asarray(warr)))[0]
        coords = grid.spatial.meshgrid()
        xnode = coords[tuple(bad[: grid.spatial.dim])]
        raise GridError(
            f"weight evaluated non-finite at node {tuple(bad)} (x = {xnode}, "
            f"shell {bad[-2]}, angle {bad[-1]})"
        )
    product = values * warr * grid.velocity_measures()
    return math.fsum(product.ravel(order="C"))


def phase_integral(f: DistributionField, weight: WeightLike = None) -> float:
    """Integral of weight(x, xi) * f over the whole phase space."""
    return phase_integral_values(f.grid, f.values, weight)


# ---------------------------------------------------------------------------
# Snapshot persistence: raw little-endian float64 payload + JSON sidecar.
# ---------------------------------------------------------------------------

def save_snapshot(f: DistributionField, base_path: Union[str, Path]) -> tuple[Path, Path]:
    """Write ``<base>.f64`` (raw LE doubles, x-major/shell/angle order) and ``<base>.json``."""
    base = Path(base_path)
    raw_path = base.with_suffix(".f64")
    meta_path = base.with_suffix(".json")
    payload = np.ascontiguousarray(f.values, dtype="<f8").tobytes(order="C")
    sg, vg = f.grid.spatial, f.grid.velocity
    meta = {
        "format": SNAPSHOT_FORMAT,
        "dim": sg.dim,
        "cells": list(sg.cells),
        "extent": list(sg.extent),
        "shells": vg.n_shells,
        "angles": vg.n_angles,
        "s_max": vg.s_max,
        "time_tag": f.time_tag,
        "dtype": "<f8",
        "index_order": "x-cell-major,shell,angle",
        "checksum_sha256": hashlib.sha256(payload).hexdigest(),
    }
    raw_path.parent.mkdir(parents=True, exist_ok=True)
    raw_path.write_bytes(payload)
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return raw_path, meta_path


def load_snapshot(base_path: Union[str, Path]) -> DistributionField:
    """Read a snapshot pair back; verifies the payload checksum and rebuilds the grid."""
    base = Path(base_path)
    raw_path = base.with_suffix(".f64")
    meta_path = base.with_suffix(".json")
    meta = json.loads(meta_path.read_text())
    if meta.get("format") != SNAPSHOT_FORMAT:
        raise GridError(f"unsupported snapshot format {meta.get('format')!r}")
    payload = raw_path.read_bytes()
    digest = hashlib.sha256(payload).hexdigest()
    if digest != meta["checksum_sha256"]:
        raise GridError(f"snapshot payload checksum mismatch for {raw_path}")
    spatial = SpatialGrid(meta["dim"], tuple(meta["extent"]), tuple(meta["cells"]))
    velocity = build_velocity_grid(meta["shells"], meta["angles"], meta["s_max"])
    grid = PhaseGrid(spatial, velocity)
    values = np.frombuffer(payload, dtype="<f8").astype(float).reshape(grid.shape)
    return DistributionField(grid, values, time_tag=float(meta["time_tag"]))
