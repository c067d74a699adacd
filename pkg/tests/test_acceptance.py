"""Acceptance suite: every criterion runs at its stated tolerance and prints
one PASS/FAIL line.  Shared module-scoped fixtures hold the solver runs so
the expensive scenarios execute once.
"""

import dataclasses
import math
import time
from pathlib import Path

import numpy as np
import pytest

import kinshell.cli as cli
from kinshell.config import load_config
from kinshell.dynamics import damping_linear, damping_zero, run_splitting
from kinshell.grid import (
    DistributionField,
    NEGATIVITY_FLOOR,
    PhaseGrid,
    SpatialGrid,
    build_velocity_grid,
    phase_integral_values,
)
from kinshell.initial import homogeneous_anisotropic
from kinshell.kernel import (
    apply_Q2,
    build_kernel,
    custom_profile,
    forward_peaked,
    isotropic,
    reverse_mass_bound,
    self_similar_H,
)
from kinshell.moments import (
    BALL_VOLUME_COEFF,
    compute_moments,
    energy_functional,
    interpolation_bound,
    moment_norm_bound,
    radial_moment,
)
from kinshell.picard import (
    PicardConfig,
    check_gronwall_trace,
    gronwall_envelope,
    run_picard,
)
from kinshell.verify import (
    commutation_defect,
    default_battery,
    energy_ledger,
    initial_data_limit,
    mollify,
    weak_form_residual,
)

REPO = Path(__file__).resolve().parent.parent
CONFIGS = REPO / "configs"

LEVELS = ((16, 25), (32, 50), (64, 100))  # finest = shipped default resolution


def report(num, name, ok, detail):
    print(f"ACCEPTANCE {num:02d} {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {num} {name}: {detail}"


@pytest.fixture(scope="module")
def beam_levels():
    """Default nonlinear scenario at three joint space-time refinement levels."""
    cfg0 = load_config(CONFIGS / "beam_relaxation.toml")
    runs = []
    t0 = time.monotonic()
    for cells, steps in LEVELS:
        cfg = dataclasses.replace(cfg0, cells=(cells,), steps=steps)
        grid = cfg.make_grid()
        kernel = cfg.make_kernel(grid)
        mu = cfg.make_damping()
        f0 = cfg.make_initial_field(grid)
        pcfg = cfg.make_picard()
        traj, trace = run_picard(f0, kernel, mu, pcfg)
        traj_split = run_splitting(f0, kernel, mu, pcfg.horizon, pcfg.steps)
        runs.append(
            dict(cfg=cfg, grid=grid, kernel=kernel, mu=mu, f0=f0, pcfg=pcfg,
                 traj=traj, trace=trace, traj_split=traj_split)
        )
    return {"runs": runs, "elapsed": time.monotonic() - t0}


@pytest.fixture(scope="module")
def beam_levels_undamped():
    """Same ladder with the removal term switched off (pure conservation)."""
    cfg0 = load_config(CONFIGS / "beam_relaxation.toml")
    runs = []
    for cells, steps in LEVELS:
        cfg = dataclasses.replace(
            cfg0, cells=(cells,), steps=steps, damping_kind="zero", damping_c=0.0
        )
        grid = cfg.make_grid()
        kernel = cfg.make_kernel(grid)
        f0 = cfg.make_initial_field(grid)
        pcfg = cfg.make_picard()
        traj, trace = run_picard(f0, kernel, damping_zero(), pcfg)
        runs.append(dict(cfg=cfg, kernel=kernel, f0=f0, pcfg=pcfg, traj=traj, trace=trace))
    return runs


@pytest.fixture(scope="module")
def homogeneous_ladder():
    """Uniform-in-space decay runs used for the closed-form density oracle."""
    spatial = SpatialGrid(1, (1.0,), (4,))
    velocity = build_velocity_grid(6, 16, 1.0)
    grid = PhaseGrid(spatial, velocity)
    f0 = homogeneous_anisotropic(grid, amplitude=1.0, anisotropy=0.6).on_grid(grid)
    kernel = build_kernel(isotropic(), velocity, 0.5)
    c = 0.5
    out = {}
    t0 = time.monotonic()
    for steps in (50, 100, 200):
        cfg = PicardConfig(horizon=1.0, steps=steps, tol_abs=1e-13, tol_rel=1e-11)
        traj, trace = run_picard(f0, kernel, damping_linear(c), cfg)
        out[steps] = (traj, trace, cfg)
    return dict(grid=grid, f0=f0, kernel=kernel, c=c, runs=out,
                elapsed=time.monotonic() - t0)


@pytest.fixture(scope="module")
def default_grid():
    return PhaseGrid(SpatialGrid(1, (1.0,), (64,)), build_velocity_grid(6, 32, 1.0))


def test_criterion_01_kernel_laws():
    t0 = time.monotonic()
    velocity = build_velocity_grid(6, 32, 1.0)
    problems = []

    kernel_iso = build_kernel(isotropic(), velocity, 1.0)
    kernel_fp = build_kernel(forward_peaked(3.0), velocity, 1.0)

    for label, kern in (("isotropic", kernel_iso), ("forward_peaked", kernel_fp)):
        defect = kern.normalization_defect()
        if defect >= 1e-12:
            problems.append(f"{label} normalization defect {defect:.2e}")

    # outgoing-mass bound equals one where discrete rotation invariance is
    # exact: the isotropic kernel, and any profile the angular rule
    # integrates exactly (low-degree polynomial in the cosine)
    k_iso = reverse_mass_bound(kernel_iso)
    if abs(k_iso - 1.0) >= 1e-10:
        problems.append(f"isotropic reverse mass {k_iso!r}")
    kernel_poly = build_kernel(
        custom_profile("poly", lambda c: 1.0 + 0.5 * c + c**2), velocity, 1.0
    )
    k_poly = reverse_mass_bound(kernel_poly)
    if abs(k_poly - 1.0) >= 1e-10:
        problems.append(f"polynomial-profile reverse mass {k_poly!r}")
    # the peaked profile is integrated only approximately, so its bound is a
    # recorded constant rather than exactly one
    k_fp = reverse_mass_bound(kernel_fp)
    if not (math.isfinite(k_fp) and k_fp > 0):
        problems.append(f"forward-peaked reverse mass {k_fp!r}")

    rotation = cli._fixed_rotation()
    for label, profile in (("isotropic", isotropic()), ("forward_peaked", forward_peaked(3.0))):
        base = reverse_mass_bound(build_kernel(profile, velocity, 1.0))
        rot = reverse_mass_bound(build_kernel(profile, velocity.rotated(rotation), 1.0))
        if abs(rot - base) >= 1e-10:
            problems.append(f"{label} rotation residual {abs(rot - base):.2e}")

    h_worst = 0.0
    for s in (0.5, 1.0, 2.0, *velocity.speeds):
        h_worst = max(h_worst, abs(self_similar_H(float(s)) - 1.0 / float(s) ** 3)
                      / (1.0 / float(s) ** 3))
    if h_worst > 1e-14:
        problems.append(f"H-law relative error {h_worst:.2e}")

    elapsed = time.monotonic() - t0
    if elapsed >= 1.0:
        problems.append(f"runtime {elapsed:.2f}s")
    report(
        1, "kernel laws", not problems,
        problems or f"K_bar(fp3)={k_fp - 1.0:+.3e}+1, runtime {elapsed * 1e3:.0f} ms",
    )


def test_criterion_02_collision_invariants(default_grid):
    t0 = time.monotonic()
    kernel = build_kernel(forward_peaked(3.0), default_grid.velocity, 0.8)
    rng = np.random.default_rng(2024)
    speeds = default_grid.velocity.speeds
    A = default_grid.velocity.n_angles
    worst = 0.0
    for _ in range(100):
        f = DistributionField(default_grid, rng.random(default_grid.shape))
        rate = apply_Q2(f, kernel)
        for m in (0, 1, 2, 3):
            weight = np.broadcast_to((1.0 + speeds**m)[:, None], (speeds.size, A))
            defect = abs(phase_integral_values(default_grid, rate, weight))
            scale = kernel.lam * phase_integral_values(default_grid, f.values, weight)
            worst = max(worst, defect / (1e-12 * scale))
    elapsed = time.monotonic() - t0
    ok = worst < 1.0 and elapsed < 10.0
    report(2, "collision invariants", ok,
           f"worst defect at {worst:.3f} of the 1e-12*scale budget, {elapsed:.1f}s")


def test_criterion_03_gronwall(beam_levels, beam_levels_undamped, homogeneous_ladder):
    rng = np.random.default_rng(99)
    formula_worst = 0.0
    for _ in range(12):
        A, B, a0 = rng.uniform(0.0, 4.0, size=3)
        t = rng.uniform(0.0, 2.5)
        K = max(A, B, a0)
        want = K * math.exp(K * t)
        got = gronwall_envelope(A, B, a0, t)
        formula_worst = max(formula_worst, abs(got - want) / max(want, 1.0))

    violations = []
    margins = []
    traced_runs = (
        [(r["trace"], r["pcfg"], r["kernel"]) for r in beam_levels["runs"]]
        + [(r["trace"], r["pcfg"], r["kernel"]) for r in beam_levels_undamped]
        + [
            (trace, cfg, homogeneous_ladder["kernel"])
            for (_, trace, cfg) in homogeneous_ladder["runs"].values()
        ]
    )
    for trace, pcfg, kernel in traced_runs:
        rep = check_gronwall_trace(trace, pcfg, reverse_mass_bound(kernel), kernel.lam)
        margins.append(min(rep.sup_worst_margin, rep.energy_worst_margin))
        if not rep.all_pass:
            violations.append(rep)
    ok = formula_worst <= 1e-14 and not violations
    report(3, "gronwall envelopes", ok,
           f"formula err {formula_worst:.1e}, {len(traced_runs)} runs, "
           f"worst margin {min(margins):.3e}")


def test_criterion_04_constructive_scheme(homogeneous_ladder):
    t0 = time.monotonic()
    problems = []

    # (a) transport limit: one productive sweep, exact translation on a grid
    # where every per-node shift is a whole number of cells
    grid = PhaseGrid(SpatialGrid(1, (1.0,), (64,)), build_velocity_grid(1, 2, 2.0))
    rng = np.random.default_rng(5)
    f0 = DistributionField(grid, rng.random(grid.shape))
    kernel0 = build_kernel(isotropic(), grid.velocity, 0.0)
    cfg = PicardConfig(horizon=0.5, steps=32)
    traj, trace = run_picard(f0, kernel0, damping_zero(), cfg)
    if trace.diffs[1] != 0.0:
        problems.append(f"second-sweep residual {trace.diffs[1]!r}")
    translation_err = 0.0
    for j in range(cfg.steps + 1):
        for a in range(2):
            shift = int(round(j * grid.velocity.directions[a, 0]))
            expected = np.roll(f0.values[:, 0, a], shift)
            translation_err = max(
                translation_err,
                float(np.max(np.abs(traj.fields[j].values[:, 0, a] - expected))),
            )
    if translation_err != 0.0:
        problems.append(f"translation error {translation_err:.2e}")

    # (b) closed-form density decay, second-order in the step size
    c = homogeneous_ladder["c"]
    f0h = homogeneous_ladder["f0"]
    n0 = float(compute_moments(f0h, 0).density.reshape(-1)[0])
    n_exact = n0 / (1 + c * n0 * 1.0)
    errors = []
    for steps in (50, 100, 200):
        traj_h, _, _ = homogeneous_ladder["runs"][steps]
        n_T = float(compute_moments(traj_h.fields[-1], 0).density.reshape(-1)[0])
        errors.append(abs(n_T - n_exact) / n_exact)
    if errors[-1] >= 1e-3:
        problems.append(f"decay error {errors[-1]:.2e} at 200 steps")
    orders = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
    if not all(abs(o - 2.0) <= 0.3 for o in orders):
        problems.append(f"decay orders {orders}")

    # (c) isotropic-kernel angular relaxation at the jump rate
    lam = 0.9
    gridr = homogeneous_ladder["grid"]
    f0r = homogeneous_anisotropic(gridr, amplitude=1.0, anisotropy=0.8).on_grid(gridr)
    kern = build_kernel(isotropic(), gridr.velocity, lam)
    traj_r, _ = run_picard(f0r, kern, damping_zero(), PicardConfig(horizon=1.0, steps=100))
    w = gridr.velocity.angular_weights
    norms = []
    for f in traj_r.fields:
        mean = np.einsum("...sa,a->...s", f.values, w) / (4 * math.pi)
        norms.append(float(np.max(np.abs(f.values - mean[..., None]))))
    slope = np.polyfit(traj_r.times, np.log(norms), 1)[0]
    rate_err = abs(-slope - lam) / lam
    if rate_err >= 0.02:
        problems.append(f"relaxation rate off by {rate_err:.3%}")

    elapsed = time.monotonic() - t0 + homogeneous_ladder["elapsed"]
    if elapsed >= 120.0:
        problems.append(f"runtime {elapsed:.0f}s")
    report(4, "constructive scheme", not problems,
           problems or f"decay orders {['%.3f' % o for o in orders]}, "
                       f"rate err {rate_err:.2%}, runtime {elapsed:.0f}s")


def test_criterion_05_dual_solver_cross_validation(beam_levels):
    gaps = []
    for run in beam_levels["runs"]:
        gaps.append(cli._l1_gap(run["traj"], run["traj_split"]))
    shrinking = all(gaps[i + 1] < gaps[i] for i in range(len(gaps) - 1))
    elapsed = beam_levels["elapsed"]
    ok = gaps[-1] < 5e-3 and shrinking and elapsed < 600.0
    report(5, "dual-solver cross-validation", ok,
           f"gaps {['%.3e' % g for g in gaps]}, runtime {elapsed:.0f}s")


def test_criterion_06_energy_conservation(beam_levels, beam_levels_undamped):
    problems = []
    details = []
    for label, runs, mu_of in (
        ("damped", beam_levels["runs"], lambda r: r["mu"]),
        ("undamped", beam_levels_undamped, lambda r: damping_zero()),
    ):
        for m in (0, 2, 3):
            residuals = []
            for run in runs:
                ledger = energy_ledger(run["traj"], mu_of(run), m)
                residuals.append(ledger.max_residual() / ledger.energy[0])
            if residuals[-1] >= 1e-3:
                problems.append(f"{label} m={m} residual {residuals[-1]:.2e}")
            orders = [
                math.log2(residuals[i] / residuals[i + 1])
                for i in range(len(residuals) - 1)
            ]
            if not all(o > 1.5 for o in orders):
                problems.append(f"{label} m={m} orders {orders}")
            details.append(f"{label} m={m}: r={residuals[-1]:.1e} ord={orders[-1]:.2f}")
    report(6, "energy conservation ledger", not problems, problems or "; ".join(details))


def test_criterion_07_weak_formulation(beam_levels):
    worst_by_level = []
    for run in beam_levels["runs"]:
        results = weak_form_residual(
            run["traj"], run["kernel"], run["mu"], default_battery(run["pcfg"].horizon)
        )
        assert len(results) >= 5
        worst_by_level.append(max(abs(r.residual) / r.scale for r in results))
    orders = [
        math.log2(worst_by_level[i] / worst_by_level[i + 1])
        for i in range(len(worst_by_level) - 1)
    ]
    ok = worst_by_level[-1] < 1e-3 and all(o >= 1.0 for o in orders)
    report(7, "weak formulation", ok,
           f"residuals {['%.2e' % w for w in worst_by_level]}, orders "
           f"{['%.2f' % o for o in orders]}")


def test_criterion_08_moment_interpolation(default_grid):
    rng = np.random.default_rng(512)
    slack = 1e-10
    pointwise_bad = 0
    collapse_bad = 0
    norm_bad = 0
    for _ in range(100):
        f = DistributionField(default_grid, rng.random(default_grid.shape)
                              * rng.uniform(0.2, 5.0))
        p = int(rng.integers(1, 7))
        for _ in range(10):
            R = float(rng.uniform(0.05, 1.5))
            lhs, rhs = interpolation_bound(f, p, R)
            if np.any(lhs > rhs * (1 + slack)):
                pointwise_bad += 1
        Mp = radial_moment(f, p)
        R_star = Mp ** (1.0 / (3.0 + p))
        lhs, rhs = interpolation_bound(f, p, R_star)
        collapse = BALL_VOLUME_COEFF * (f.values.max() + 1.0) * Mp ** (3.0 / (3.0 + p))
        if np.any(rhs > collapse * (1 + slack)) or np.any(lhs > collapse * (1 + slack)):
            collapse_bad += 1
        m = int(rng.integers(0, 3))
        lhs_n, rhs_n = moment_norm_bound(f, m, p if p > m else m + 1)
        if lhs_n > rhs_n * (1 + slack):
            norm_bad += 1
    ok = pointwise_bad == 0 and collapse_bad == 0 and norm_bad == 0
    report(8, "moment interpolation bounds", ok,
           f"violations: pointwise {pointwise_bad}, collapse {collapse_bad}, "
           f"norm {norm_bad} (100 fields x 10 cutoffs)")


def test_criterion_09_mollification(default_grid):
    rng = np.random.default_rng(77)
    h = lambda xi: 1.0 + np.linalg.norm(xi, axis=-1) ** 3
    eps = 3.0 * default_grid.spatial.widths[0]
    commutation_worst = 0.0
    mass_worst = 0.0
    energy_worst = 0.0
    for _ in range(50):
        f = DistributionField(default_grid, rng.random(default_grid.shape))
        weighted = radial_moment(f, 3) + compute_moments(f, 0).density
        scale = float(np.max(np.abs(weighted)))
        commutation_worst = max(commutation_worst, commutation_defect(f, h, eps) / scale)
        smoothed = mollify(f, eps)
        mass_worst = max(
            mass_worst,
            abs(smoothed.values.sum() - f.values.sum()) / f.values.sum(),
        )
        for m in (0, 3):
            e0 = energy_functional(f, m)
            e1 = energy_functional(smoothed, m)
            energy_worst = max(energy_worst, abs(e1 - e0) / e0)
    ok = commutation_worst < 1e-13 and mass_worst < 1e-13 and energy_worst < 1e-13
    report(9, "mollification laws", ok,
           f"worst: commutation {commutation_worst:.1e}, mass {mass_worst:.1e}, "
           f"energy {energy_worst:.1e}")


def test_criterion_10_positivity_and_determinism(
    beam_levels, beam_levels_undamped, homogeneous_ladder, tmp_path
):
    min_entry = math.inf
    n_fields = 0
    for run in beam_levels["runs"]:
        for traj in (run["traj"], run["traj_split"]):
            for f in traj.fields:
                min_entry = min(min_entry, float(f.values.min()))
                n_fields += 1
    for run in beam_levels_undamped:
        for f in run["traj"].fields:
            min_entry = min(min_entry, float(f.values.min()))
            n_fields += 1
    for traj, _, _ in homogeneous_ladder["runs"].values():
        for f in traj.fields:
            min_entry = min(min_entry, float(f.values.min()))
            n_fields += 1
    positive = min_entry >= NEGATIVITY_FLOOR

    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    rc_a = cli.main(["run", "--config", str(CONFIGS / "homogeneous_decay.toml"),
                     "--out", str(out_a)])
    rc_b = cli.main(["run", "--config", str(CONFIGS / "homogeneous_decay.toml"),
                     "--out", str(out_b)])
    identical = rc_a == 0 and rc_b == 0
    compared = []
    for name in ("summary.csv", "energy_ledger.csv", "iterate_trace.csv",
                 "moments.csv", "manifest.json"):
        same = (out_a / name).read_bytes() == (out_b / name).read_bytes()
        compared.append((name, same))
        identical = identical and same
    ok = positive and identical
    report(10, "positivity and determinism", ok,
           f"min entry {min_entry:.1e} over {n_fields} fields, "
           f"reruns identical: {all(s for _, s in compared)}")
