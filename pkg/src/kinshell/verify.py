"""Certification passes over computed trajectories: the energy ledger, the
distributional-identity residual, and spatial mollification laws.

Everything here is a pure analysis of immutable trajectories; nothing feeds
back into the solvers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.ndimage

from .grid import DistributionField, GridError, PhaseGrid, SpatialGrid, phase_integral_values
from .kernel import ScatteringKernel, apply_Q2
from .dynamics import DampingModel, Trajectory
from .moments import energy_functional

__all__ = [
    "EnergyLedger",
    "energy_ledger",
    "high_moment_cap",
    "TestFunction",
    "separable_test_function",
    "default_battery",
    "WeakFormResult",
    "weak_form_residual",
    "Mollifier",
    "build_mollifier",
    "mollify",
    "mollify_values",
    "commutation_defect",
    "InitialDataReport",
    "initial_data_limit",
]


# ---------------------------------------------------------------------------
# Energy conservation ledger
# ---------------------------------------------------------------------------

@dataclass
class EnergyLedger:
    """Time series of E_m, the accumulated removal integral, and their sum defect.

    residual[j] = E_m(t_j) + D_m(t_j) - E_m(0); exact conservation means the
    residual vanishes, discretization leaves a second-order drift.
    """

    moment_order: float
    times: np.ndarray
    energy: np.ndarray
    damping: np.ndarray
    residual: np.ndarray

    def __post_init__(self):
        scale = max(float(self.energy[0]), 1e-300)
        if np.any(np.diff(self.damping) < -1e-12 * scale):
            raise ValueError("accumulated removal integral must be nondecreasing")
        if np.any(self.energy < -1e-12 * scale):
            raise ValueError("moment energy must be nonnegative")

    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual)))


def energy_ledger(traj: Trajectory, mu: DampingModel, m: float) -> EnergyLedger:
    """Trapezoid accumulation of the removal term against (1 + |xi|^m)."""
    grid = traj.grid
    nw = grid.velocity.node_weights()
    speeds = grid.velocity.speeds
    weight_m = np.broadcast_to((1.0 + speeds**m)[:, None], nw.shape)

    energy = np.array([energy_functional(f, m) for f in traj.fields])
    removal = np.empty_like(energy)
    for j, f in enumerate(traj.fields):
        n = np.einsum("...sa,sa->...", f.values, nw)
        warr = mu.rate(n)[..., None, None] * weight_m
        removal[j] = math.fsum((f.values * warr * grid.velocity_measures()).ravel())
    dt = traj.dt
    damping = np.concatenate([[0.0], np.cumsum(0.5 * dt * (removal[1:] + removal[:-1]))])
    residual = energy + damping - energy[0]
    return EnergyLedger(
        moment_order=m, times=traj.times.copy(), energy=energy,
        damping=damping, residual=residual,
    )


def high_moment_cap(traj: Trajectory, m: float) -> float:
    """sup over time nodes of the (3+m)-th absolute moment; always finite on a
    truncated velocity grid, reported as the constant entering the
    conservation hypothesis."""
    speeds = traj.grid.velocity.speeds
    weight = np.broadcast_to(
        (speeds ** (3.0 + m))[:, None],
        (speeds.size, traj.grid.velocity.n_angles),
    )
    return max(
        phase_integral_values(traj.grid, f.values, weight) for f in traj.fields
    )


# ---------------------------------------------------------------------------
# Weak-formulation residual
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    """Smooth test function with analytic time derivative and transport term.

    Each evaluator maps (t, grid) to a full phase array; ``xi_dot_grad`` is
    xi . grad_x phi assembled in closed form.
    """

    name: str
    phi: Callable[[float, PhaseGrid], np.ndarray]
    dphi_dt: Callable[[float, PhaseGrid], np.ndarray]
    xi_dot_grad: Callable[[float, PhaseGrid], np.ndarray]


def separable_test_function(
    name: str,
    time_part: Callable[[float], float],
    time_deriv: Callable[[float], float],
    space_part: Callable[[np.ndarray], np.ndarray],
    space_grad: Callable[[np.ndarray], np.ndarray],
    velocity_part: Callable[[np.ndarray, np.ndarray], np.ndarray],
) -> TestFunction:
    """Assemble psi(t) * chi(x) * g(xi) with analytic derivatives.

    ``space_part`` maps cell coordinates (*cells, dim) to (*cells,);
    ``space_grad`` to (*cells, dim); ``velocity_part`` maps (speeds,
    directions) to an (S, A) array.
    """

    def _vel(grid: PhaseGrid) -> np.ndarray:
        return np.asarray(
            velocity_part(grid.velocity.speeds, grid.velocity.directions), dtype=float
        )

    def _phi(t: float, grid: PhaseGrid) -> np.ndarray:
        x = grid.spatial.meshgrid()
        return time_part(t) * space_part(x)[..., None, None] * _vel(grid)[None, ...]

    def _dphi(t: float, grid: PhaseGrid) -> np.ndarray:
        x = grid.spatial.meshgrid()
        return time_deriv(t) * space_part(x)[..., None, None] * _vel(grid)[None, ...]

    def _adv(t: float, grid: PhaseGrid) -> np.ndarray:
        x = grid.spatial.meshgrid()
        gradx = np.asarray(space_grad(x), dtype=float)  # (*cells, dim)
        xi = grid.velocity.xi_vectors()[..., : grid.spatial.dim]  # (S, A, dim)
        advection = np.einsum("...d,sad->...sa", gradx, xi)
        return time_part(t) * advection * _vel(grid)[None, ...]

    return TestFunction(name=name, phi=_phi, dphi_dt=_dphi, xi_dot_grad=_adv)


def default_battery(horizon: float) -> list[TestFunction]:
    """Five closed-form separable test functions vanishing at t = horizon.

    Spatial parts depend on the first axis only so the battery works in any
    spatial dimension; velocity parts cover constants, even and odd weights.
    """
    T = float(horizon)

    def bump(t: float) -> float:
        return (1.0 - (t / T) ** 2) ** 2

    def bump_dt(t: float) -> float:
        return -4.0 * (t / T) * (1.0 - (t / T) ** 2) / T

    def cospi(t: float) -> float:
        return math.cos(math.pi * t / (2.0 * T))

    def cospi_dt(t: float) -> float:
        return -math.pi / (2.0 * T) * math.sin(math.pi * t / (2.0 * T))

    def make_wave(kcells: float, L: float):
        k = 2.0 * math.pi * kcells / L

        def chi(x):
            return np.sin(k * x[..., 0])

        def grad(x):
            g = np.zeros_like(x)
            g[..., 0] = k * np.cos(k * x[..., 0])
            return g

        return chi, grad

    def chi_const(x):
        return np.ones(x.shape[:-1])

    def grad_const(x):
        return np.zeros_like(x)

    battery: list[TestFunction] = []
    battery.append(
        separable_test_function(
            "mass", cospi, cospi_dt, chi_const, grad_const,
            lambda s, d: np.ones((s.size, d.shape[0])),
        )
    )

    def _with_wave(name, tp, td, kcells, L, vel):
        chi, grad = make_wave(kcells, L)
        return separable_test_function(name, tp, td, chi, grad, vel)

    battery.append(
        _with_wave(
            "wave1", bump, bump_dt, 1.0, 1.0,
            lambda s, d: np.ones((s.size, d.shape[0])),
        )
    )
    battery.append(
        _with_wave(
            "wave1_speed2", cospi, cospi_dt, 1.0, 1.0,
            lambda s, d: np.broadcast_to((s**2)[:, None], (s.size, d.shape[0])).copy(),
        )
    )
    battery.append(
        _with_wave(
            "wave1_xi1", bump, bump_dt, 1.0, 1.0,
            lambda s, d: s[:, None] * d[None, :, 0],
        )
    )
    battery.append(
        _with_wave(
            "wave2_speed3", bump, bump_dt, 2.0, 1.0,
            lambda s, d: np.broadcast_to((1.0 + s**3)[:, None], (s.size, d.shape[0])).copy(),
        )
    )
    return battery


@dataclass
class WeakFormResult:
    name: str
    residual: float
    scale: float


def weak_form_residual(
    traj: Trajectory,
    kernel: ScatteringKernel,
    mu: DampingModel,
    battery: Sequence[TestFunction],
) -> list[WeakFormResult]:
    """Residual of the distributional identity for each test function.

        r(phi) = <f0, phi(0)> + int_t <f, phi_t + xi . grad phi>
                 - int_t <mu(n) f, phi> + int_t <Q2(f), phi>

    Every phi must vanish at the final time so the boundary term drops.
    The reported scale is the largest of the same four terms assembled with
    absolute integrands, i.e. the magnitude the terms carry before any
    cancellation (symmetry can annihilate the signed terms outright).
    """
    grid = traj.grid
    dt = traj.dt
    results = []
    nw = grid.velocity.node_weights()

    n_per_node = [
        np.einsum("...sa,sa->...", f.values, nw) for f in traj.fields
    ]
    q2_per_node = [apply_Q2(f, kernel) for f in traj.fields]

    for tf in battery:
        phi_T = tf.phi(traj.horizon, grid)
        if np.max(np.abs(phi_T)) > 1e-12:
            raise ValueError(
                f"test function {tf.name!r} does not vanish at t = {traj.horizon}"
            )
        transport_nodes = np.empty(traj.times.size)
        damping_nodes = np.empty(traj.times.size)
        scatter_nodes = np.empty(traj.times.size)
        abs_nodes = np.zeros((3, traj.times.size))
        for j, f in enumerate(traj.fields):
            t = float(traj.times[j])
            phi_j = tf.phi(t, grid)
            adv_j = tf.dphi_dt(t, grid) + tf.xi_dot_grad(t, grid)
            mu_phi_j = mu.rate(n_per_node[j])[..., None, None] * phi_j
            transport_nodes[j] = phase_integral_values(grid, f.values, adv_j)
            damping_nodes[j] = phase_integral_values(grid, f.values, mu_phi_j)
            scatter_nodes[j] = phase_integral_values(grid, q2_per_node[j], phi_j)
            abs_nodes[0, j] = phase_integral_values(grid, f.values, np.abs(adv_j))
            abs_nodes[1, j] = phase_integral_values(grid, f.values, np.abs(mu_phi_j))
            abs_nodes[2, j] = phase_integral_values(grid, np.abs(q2_per_node[j]), np.abs(phi_j))

        def trapz(vals: np.ndarray) -> float:
            return float(np.sum(0.5 * dt * (vals[1:] + vals[:-1])))

        initial_term = phase_integral_values(
            grid, traj.fields[0].values, tf.phi(0.0, grid)
        )
        abs_initial = phase_integral_values(
            grid, traj.fields[0].values, np.abs(tf.phi(0.0, grid))
        )
        residual = initial_term + trapz(transport_nodes) - trapz(damping_nodes) + trapz(
            scatter_nodes
        )
        scale = max(
            abs_initial, trapz(abs_nodes[0]), trapz(abs_nodes[1]), trapz(abs_nodes[2]),
            1e-300,
        )
        results.append(WeakFormResult(name=tf.name, residual=residual, scale=scale))
    return results


# ---------------------------------------------------------------------------
# Mollification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mollifier:
    """Compactly supported bump stencil on the spatial lattice, summing to one."""

    epsilon: float
    stencil: np.ndarray

    def __post_init__(self):
        st = np.asarray(self.stencil, dtype=float)
        object.__setattr__(self, "stencil", st)
        if np.any(st < 0):
            raise ValueError("mollifier stencil entries must be nonnegative")
        if abs(st.sum() - 1.0) > 1e-14:
            raise ValueError("mollifier stencil must sum to one")


def build_mollifier(spatial: SpatialGrid, eps: float) -> Mollifier:
    """Discrete bump (1 - (r/eps)^2)^2 truncated at r = eps, normalized on the lattice."""
    if eps < 0:
        raise ValueError(f"mollifier width must be >= 0, got {eps}")
    if eps == 0.0:
        return Mollifier(0.0, np.ones((1,) * spatial.dim))
    if eps > min(spatial.extent) / 2.0:
        raise ValueError(
            f"mollifier width {eps} exceeds half the smallest box extent"
        )
    radii = [int(math.floor(eps / h)) for h in spatial.widths]
    axes = [np.arange(-r, r + 1) * h for r, h in zip(radii, spatial.widths)]
    mesh = np.meshgrid(*axes, indexing="ij")
    r2 = sum(m**2 for m in mesh) / eps**2
    stencil = np.where(r2 < 1.0, (1.0 - np.minimum(r2, 1.0)) ** 2, 0.0)
    total = stencil.sum()
    if total <= 0:
        stencil = np.zeros_like(stencil)
        stencil[tuple(r for r in radii)] = 1.0
        total = 1.0
    return Mollifier(float(eps), stencil / total)


def mollify_values(values: np.ndarray, spatial: SpatialGrid, eps: float) -> np.ndarray:
    """Periodic convolution of a spatial array (trailing axes pass through)."""
    moll = build_mollifier(spatial, eps)
    if eps == 0.0:
        return np.array(values, dtype=float)
    extra = values.ndim - spatial.dim
    weights = moll.stencil.reshape(moll.stencil.shape + (1,) * extra)
    return scipy.ndimage.convolve(np.asarray(values, dtype=float), weights, mode="wrap")


def mollify(
    obj: Union[DistributionField, np.ndarray],
    eps: float,
    spatial: Optional[SpatialGrid] = None,
) -> Union[DistributionField, np.ndarray]:
    """Smooth in x only; preserves total mass (stencil sums to 1) and nonnegativity."""
    if isinstance(obj, DistributionField):
        out = mollify_values(obj.values, obj.grid.spatial, eps)
        return DistributionField(obj.grid, out, obj.time_tag)
    if spatial is None:
        raise ValueError("mollifying a bare array requires the spatial grid")
    return mollify_values(obj, spatial, eps)


def commutation_defect(
    f: DistributionField,
    h: Callable[[np.ndarray], np.ndarray],
    eps: float,
) -> float:
    """max over cells of |int mollify(f) h dxi - mollify(int f h dxi)|.

    Both sides are linear and the convolution acts on x only, so the defect is
    pure floating-point noise.
    """
    vg = f.grid.velocity
    h_arr = np.asarray(h(vg.xi_vectors()), dtype=float)
    if h_arr.shape != (vg.n_shells, vg.n_angles):
        raise GridError("velocity weight must evaluate to an (S, A) array")
    weights = vg.node_weights() * h_arr
    lhs = np.einsum(
        "...sa,sa->...", mollify_values(f.values, f.grid.spatial, eps), weights
    )
    rhs = mollify_values(
        np.einsum("...sa,sa->...", f.values, weights), f.grid.spatial, eps
    )
    return float(np.max(np.abs(lhs - rhs)))


@dataclass
class InitialDataReport:
    """Moment energies of mollified initial data across a widths sequence."""

    moment_order: float
    widths: list[float]
    energies: list[float]
    defects: list[float]
    reference_energy: float

    @property
    def max_defect(self) -> float:
        return max(self.defects) if self.defects else 0.0


def initial_data_limit(
    f0: DistributionField, m: float, eps_sequence: Sequence[float]
) -> InitialDataReport:
    """E_m of mollified initial data per width; the defect against E_m(f0).

    The moment weight depends on xi alone while the mollifier acts on x, so the
    defect is zero up to rounding for every width.
    """
    widths = [float(e) for e in eps_sequence]
    if any(b > a for a, b in zip(widths, widths[1:])):
        raise ValueError("mollifier widths must be nonincreasing")
    reference = energy_functional(f0, m)
    energies = []
    defects = []
    for eps in widths:
        e = energy_functional(mollify(f0, eps), m)
        energies.append(e)
        defects.append(abs(e - reference))
    return InitialDataReport(
        moment_order=m, widths=widths, energies=energies,
        defects=defects, reference_energy=reference,
    )
