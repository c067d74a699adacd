"""Batch command-line interface.

Subcommands: run, verify-kernel, convergence, energy-report, weak-form.
All outputs are CSV tables (floats as shortest round-trip decimals) plus
matplotlib figures rendered alongside; a fixed config yields byte-identical
CSVs on rerun.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import plots
from .config import ConfigError, RunConfig, load_config, load_config_text
from .dynamics import StepSizeError, Trajectory, damping_linear, damping_zero, run_splitting
from .grid import GridError, load_snapshot, phase_integral_values, save_snapshot
from .initial import make_initial_data
from .kernel import KernelError, build_kernel, isotropic, reverse_mass_bound, self_similar_H
from .moments import compute_moments, spatial_norm
from .picard import (
    PicardNonConvergence,
    check_gronwall_trace,
    gronwall_envelope,
    run_picard,
)
from .reports import write_csv, write_manifest
from .verify import default_battery, energy_ledger, weak_form_residual

MEMORY_BUDGET_BYTES = 4 << 30

# Fixed rotation used for the kernel rotation-invariance report (axis-angle
# 0.6 rad about a skew axis); deterministic by construction.
_ROT_AXIS = np.array([1.0, 2.0, 3.0]) / math.sqrt(14.0)
_ROT_ANGLE = 0.6


def _fixed_rotation() -> np.ndarray:
    k = _ROT_AXIS
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(_ROT_ANGLE) * K + (1 - math.cos(_ROT_ANGLE)) * (K @ K)


def _l1_gap(traj_a: Trajectory, traj_b: Trajectory) -> float:
    num = 0.0
    den = 0.0
    for fa, fb in zip(traj_a.fields, traj_b.fields):
        num += phase_integral_values(fa.grid, np.abs(fa.values - fb.values))
        den += phase_integral_values(fa.grid, np.abs(fa.values))
    return num / max(den, 1e-300)


def _write_trajectory(traj: Trajectory, directory: Path) -> list[Path]:
    paths = []
    for j, f in enumerate(traj.fields):
        raw, meta = save_snapshot(f, directory / f"node_{j:04d}")
        paths.extend([raw, meta])
    return paths


def _load_trajectory(directory: Path) -> Trajectory:
    metas = sorted(directory.glob("node_*.json"))
    if len(metas) < 2:
        raise GridError(f"no trajectory snapshots found under {directory}")
    fields = [load_snapshot(m.with_suffix("")) for m in metas]
    times = np.array([f.time_tag for f in fields])
    return Trajectory(grid=fields[0].grid, times=times, fields=fields)


def _moment_rows(traj: Trajectory, m: float, checksum: str):
    for j, f in enumerate(traj.fields):
        ms = compute_moments(f, m)
        n_flat = ms.density.reshape(-1)
        j_flat = ms.current.reshape(-1, 3)
        mm_flat = ms.radial.reshape(-1)
        for cell in range(n_flat.size):
            yield (
                checksum[:12], traj.times[j], cell, n_flat[cell],
                j_flat[cell, 0], j_flat[cell, 1], j_flat[cell, 2], mm_flat[cell],
            )


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.out or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ck = cfg.checksum[:12]

    grid = cfg.make_grid()
    kernel = cfg.make_kernel(grid)
    mu = cfg.make_damping()
    f0 = cfg.make_initial_field(grid)
    pcfg = cfg.make_picard()

    artifacts: list[Path] = []
    trace = None
    status = 0
    try:
        traj, trace = run_picard(f0, kernel, mu, pcfg)
    except PicardNonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        trace = exc.trace
        traj = exc.trajectory
        status = 3

    k_bar = reverse_mass_bound(kernel)
    gronwall = check_gronwall_trace(trace, pcfg, k_bar, kernel.lam)
    env_sup = gronwall_envelope(trace.sup_f0, kernel.lam * k_bar, trace.sup_f0, trace.times)

    trace_rows = []
    for k in range(trace.n_sweeps):
        trace_rows.append(
            (
                ck, k + 1, trace.diffs[k], float(np.max(trace.sup_norms[k])),
                float(env_sup[-1]), int(gronwall.sup_pass), int(gronwall.energy_pass),
            )
        )
    artifacts.append(
        write_csv(
            out_dir / "iterate_trace.csv",
            ["config", "k", "diff_sup", "sup_norm", "envelope_at_T", "sup_pass", "energy_pass"],
            trace_rows,
        )
    )

    traj_split = run_splitting(f0, kernel, mu, pcfg.horizon, pcfg.steps)
    gap = _l1_gap(traj, traj_split)

    ledger = energy_ledger(traj, mu, pcfg.moment_order)
    artifacts.append(
        write_csv(
            out_dir / "energy_ledger.csv",
            ["config", "t", "E_m", "D_m", "residual"],
            (
                (ck, ledger.times[j], ledger.energy[j], ledger.damping[j], ledger.residual[j])
                for j in range(ledger.times.size)
            ),
        )
    )
    if "moments" in cfg.reports:
        artifacts.append(
            write_csv(
                out_dir / "moments.csv",
                ["config", "t", "cell", "n", "j1", "j2", "j3", "M_m"],
                _moment_rows(traj, pcfg.moment_order, cfg.checksum),
            )
        )

    ledger_ok = ledger.max_residual() <= 1e-3 * max(ledger.energy[0], 1e-300)
    artifacts.append(
        write_csv(
            out_dir / "summary.csv",
            ["config", "quantity", "value"],
            [
                (ck, "converged", int(trace.converged)),
                (ck, "sweeps", trace.n_sweeps),
                (ck, "reverse_mass", k_bar),
                (ck, "picard_vs_splitting_l1_gap", gap),
                (ck, "ledger_max_residual", ledger.max_residual()),
                (ck, "ledger_pass", int(ledger_ok)),
                (ck, "gronwall_sup_pass", int(gronwall.sup_pass)),
                (ck, "gronwall_energy_pass", int(gronwall.energy_pass)),
                (ck, "energy_initial", ledger.energy[0]),
            ],
        )
    )

    snap_dir = out_dir / "snapshots"
    artifacts.extend(_write_trajectory(traj, snap_dir / "picard"))
    artifacts.extend(_write_trajectory(traj_split, snap_dir / "splitting"))

    if "figures" in cfg.reports:
        plots.render_energy_ledger(ledger, out_dir / "energy_ledger.png")
        plots.render_iterate_trace(trace, env_sup, out_dir / "iterate_trace.png")
        density = np.stack(
            [compute_moments(f, 0.0).density.reshape(-1) for f in traj.fields]
        )
        plots.render_moments(traj.times, density, out_dir / "moments.png")

    write_manifest(out_dir, cfg.raw_text, cfg.checksum, artifacts)
    if not (gronwall.all_pass and ledger_ok):
        status = max(status, 1)
    return status


def cmd_verify_kernel(args) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.out or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ck = cfg.checksum[:12]

    grid = cfg.make_grid()
    kernel = cfg.make_kernel(grid)
    norm_defect = kernel.normalization_defect()
    k_bar = reverse_mass_bound(kernel)

    rotated = grid.velocity.rotated(_fixed_rotation())
    kernel_rot = cfg.make_kernel(type(grid)(grid.spatial, rotated))
    rot_residual = abs(reverse_mass_bound(kernel_rot) - k_bar)

    sample_speeds = sorted(set(list(grid.velocity.speeds) + [0.5, 1.0, 2.0]))
    h_rows = []
    h_worst = 0.0
    for s in sample_speeds:
        got = self_similar_H(float(s))
        expected = 1.0 / float(s) ** 3
        rel = abs(got - expected) / expected
        h_worst = max(h_worst, rel)
        h_rows.append((ck, s, expected, got, rel))

    checks = [
        ("normalization_defect", norm_defect, 1e-12, norm_defect < 1e-12),
        ("reverse_mass", k_bar, float("nan"), True),
        ("rotation_invariance_residual", rot_residual, 1e-10, rot_residual < 1e-10),
        ("h_law_worst_error", h_worst, 1e-14, h_worst <= 1e-14),
    ]
    artifacts = [
        write_csv(
            out_dir / "kernel_report.csv",
            ["config", "check", "value", "threshold", "pass"],
            ((ck, name, value, thr, int(ok)) for name, value, thr, ok in checks),
        ),
        write_csv(
            out_dir / "h_law.csv",
            ["config", "speed", "expected", "computed", "error"],
            h_rows,
        ),
    ]
    plots.render_kernel_report(kernel.matrix, grid.velocity.speeds, out_dir / "kernel_report.png")
    write_manifest(out_dir, cfg.raw_text, cfg.checksum, artifacts)

    failed = [name for name, _, _, ok in checks if not ok]
    if failed:
        print(f"error: kernel check(s) failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def _transport_error(cfg: RunConfig) -> float:
    """Relative L2 error of pure transport against the exact translated data."""
    grid = cfg.make_grid()
    data = make_initial_data(grid, cfg.generator, cfg.generator_params)
    f0 = data.on_grid(grid)
    kernel = build_kernel(isotropic(), grid.velocity, 0.0)
    traj = run_splitting(f0, kernel, damping_zero(), cfg.horizon, cfg.steps)
    exact = data.translated_values(grid, cfg.horizon)
    err = spatial_norm(
        np.sqrt(np.einsum("...sa,sa->...", (traj.fields[-1].values - exact) ** 2,
                          grid.velocity.node_weights())),
        grid.spatial.cell_volume, 2.0,
    )
    ref = spatial_norm(
        np.sqrt(np.einsum("...sa,sa->...", exact**2, grid.velocity.node_weights())),
        grid.spatial.cell_volume, 2.0,
    )
    return err / max(ref, 1e-300)


def _homogeneous_decay_error(cfg: RunConfig) -> float:
    """n(T) of the iterative scheme vs the closed form for mu = c*n."""
    grid = cfg.make_grid()
    c = cfg.damping_c if cfg.damping_kind == "linear" and cfg.damping_c > 0 else 1.0
    f0 = make_initial_data(grid, "homogeneous-anisotropic", {"anisotropy": 0.6}).on_grid(grid)
    kernel = cfg.make_kernel(grid)
    pcfg = cfg.make_picard()
    traj, _ = run_picard(f0, kernel, damping_linear(c), pcfg)
    n0 = float(compute_moments(f0, 0.0).density.reshape(-1)[0])
    n_exact = n0 / (1.0 + c * n0 * cfg.horizon)
    n_T = float(compute_moments(traj.fields[-1], 0.0).density.reshape(-1)[0])
    return abs(n_T - n_exact) / n_exact


def cmd_convergence(args) -> int:
    cfg = load_config(args.config)
    levels = args.levels
    if levels < 2:
        print("error: at least 2 levels required", file=sys.stderr)
        return 2
    if cfg.generator == "from-snapshot":
        print("error: convergence studies need an analytic initial-data generator",
              file=sys.stderr)
        return 2
    finest = cfg.refined(2 ** (levels - 1))
    estimate = finest.memory_estimate_bytes()
    if estimate > MEMORY_BUDGET_BYTES:
        print(
            f"error: finest level needs about {estimate / 2**30:.1f} GiB "
            f"(budget {MEMORY_BUDGET_BYTES / 2**30:.0f} GiB); reduce the base "
            "resolution or the level count",
            file=sys.stderr,
        )
        return 2
    out_dir = Path(args.out or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ck = cfg.checksum[:12]

    metrics: dict[str, list[float]] = {
        "transport": [], "homogeneous_decay": [], "ledger_residual": [],
        "weak_form": [], "picard_vs_splitting_gap": [],
    }
    level_shapes = []
    for lv in range(levels):
        lcfg = cfg.refined(2**lv)
        level_shapes.append((lcfg.cells, lcfg.steps))
        metrics["transport"].append(_transport_error(lcfg))
        metrics["homogeneous_decay"].append(_homogeneous_decay_error(lcfg))

        grid = lcfg.make_grid()
        kernel = lcfg.make_kernel(grid)
        mu = lcfg.make_damping()
        f0 = lcfg.make_initial_field(grid)
        pcfg = lcfg.make_picard()
        traj, _ = run_picard(f0, kernel, mu, pcfg)
        ledger = energy_ledger(traj, mu, pcfg.moment_order)
        metrics["ledger_residual"].append(
            ledger.max_residual() / max(ledger.energy[0], 1e-300)
        )
        battery = default_battery(pcfg.horizon)
        results = weak_form_residual(traj, kernel, mu, battery)
        metrics["weak_form"].append(max(abs(r.residual) / r.scale for r in results))
        traj_split = run_splitting(f0, kernel, mu, pcfg.horizon, pcfg.steps)
        metrics["picard_vs_splitting_gap"].append(_l1_gap(traj, traj_split))

    rows = []
    last_orders = {}
    for name, errors in metrics.items():
        for lv, err in enumerate(errors):
            order = (
                math.log2(errors[lv - 1] / err) if lv > 0 and err > 0 else float("nan")
            )
            if lv == levels - 1:
                last_orders[name] = order
            cells, steps = level_shapes[lv]
            rows.append((ck, name, lv, "x".join(map(str, cells)), steps, err, order))
    artifacts = [
        write_csv(
            out_dir / "convergence.csv",
            ["config", "metric", "level", "cells", "steps", "error", "order"],
            rows,
        )
    ]
    plots.render_convergence(list(range(levels)), metrics, out_dir / "convergence.png")
    write_manifest(out_dir, cfg.raw_text, cfg.checksum, artifacts)

    gates = {
        "transport": 0.9, "homogeneous_decay": 1.5, "ledger_residual": 1.5,
        "weak_form": 0.9, "picard_vs_splitting_gap": 0.3,
    }
    failed = [
        name for name, floor in gates.items()
        if not (last_orders.get(name, float("nan")) >= floor)
    ]
    for name, errors in metrics.items():
        print(f"{name}: errors {['%.3e' % e for e in errors]}, "
              f"last order {last_orders[name]:.2f}")
    if failed:
        print(f"error: observed order below gate for: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def _config_from_run_dir(run_dir: Path) -> RunConfig:
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no manifest.json under {run_dir}")
    manifest = json.loads(manifest_path.read_text())
    return load_config_text(manifest["config"], source=str(manifest_path))


def cmd_energy_report(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = _config_from_run_dir(run_dir)
    out_dir = Path(args.out) if args.out else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    ck = cfg.checksum[:12]
    traj = _load_trajectory(run_dir / "snapshots" / "picard")
    mu = cfg.make_damping()

    orders = sorted({0.0, 2.0, 3.0, cfg.moment_order})
    rows = []
    ok = True
    main_ledger = None
    for m in orders:
        ledger = energy_ledger(traj, mu, m)
        if m == cfg.moment_order:
            main_ledger = ledger
        tol = 1e-3 * max(ledger.energy[0], 1e-300)
        ok = ok and ledger.max_residual() <= tol
        for j in range(ledger.times.size):
            rows.append(
                (ck, m, ledger.times[j], ledger.energy[j], ledger.damping[j],
                 ledger.residual[j])
            )
    write_csv(out_dir / "energy_report.csv",
              ["config", "m", "t", "E_m", "D_m", "residual"], rows)
    plots.render_energy_ledger(main_ledger, out_dir / "energy_report.png")
    if not ok:
        print("error: conservation residual exceeds 1e-3 * E_m(0)", file=sys.stderr)
        return 1
    return 0


def cmd_weak_form(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = _config_from_run_dir(run_dir)
    out_dir = Path(args.out) if args.out else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    ck = cfg.checksum[:12]
    traj = _load_trajectory(run_dir / "snapshots" / "picard")
    kernel = cfg.make_kernel(traj.grid)
    mu = cfg.make_damping()
    results = weak_form_residual(traj, kernel, mu, default_battery(traj.horizon))
    write_csv(
        out_dir / "weak_form.csv",
        ["config", "test_function", "residual", "scale", "relative"],
        ((ck, r.name, r.residual, r.scale, abs(r.residual) / r.scale) for r in results),
    )
    plots.render_weak_form(results, out_dir / "weak_form.png")
    worst = max(abs(r.residual) / r.scale for r in results)
    if worst > 1e-3:
        print(f"error: worst relative residual {worst:.3e} exceeds 1e-3", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="kinshell",
        description="Deterministic kinetic phase-space solver and verification harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--out", help="output directory (default: config's output.directory)")
        p.add_argument(
            "--threads", type=int, default=None,
            help="worker pool size hint; outputs never depend on it",
        )

    p_run = sub.add_parser("run", help="solve a scenario and write all reports")
    p_run.add_argument("--config", required=True)
    add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_vk = sub.add_parser("verify-kernel", help="check kernel normalization and scaling laws")
    p_vk.add_argument("--config", required=True)
    add_common(p_vk)
    p_vk.set_defaults(func=cmd_verify_kernel)

    p_cv = sub.add_parser("convergence", help="joint space-time refinement study")
    p_cv.add_argument("--config", required=True)
    p_cv.add_argument("--levels", type=int, default=3)
    add_common(p_cv)
    p_cv.set_defaults(func=cmd_convergence)

    p_er = sub.add_parser("energy-report", help="conservation ledger of a finished run")
    p_er.add_argument("run_dir")
    add_common(p_er)
    p_er.set_defaults(func=cmd_energy_report)

    p_wf = sub.add_parser("weak-form", help="distributional-identity residuals of a finished run")
    p_wf.add_argument("run_dir")
    add_common(p_wf)
    p_wf.set_defaults(func=cmd_weak_form)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, GridError, KernelError, StepSizeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
