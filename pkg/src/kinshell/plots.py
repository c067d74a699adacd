"""Figure rendering for the report paths; every figure lands next to its CSV."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "render_energy_ledger",
    "render_iterate_trace",
    "render_moments",
    "render_weak_form",
    "render_convergence",
    "render_kernel_report",
]


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_energy_ledger(ledger, path: Path) -> Path:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(ledger.times, ledger.energy, label=f"E_m (m={ledger.moment_order:g})")
    ax1.plot(ledger.times, ledger.damping, label="D_m (removal)")
    ax1.plot(ledger.times, ledger.energy + ledger.damping, "--", label="E_m + D_m")
    ax1.set_xlabel("t")
    ax1.legend(fontsize=8)
    ax1.set_title("energy ledger")
    resid = np.abs(ledger.residual)
    ax2.plot(ledger.times, resid)
    if np.any(resid > 0):
        ax2.set_yscale("log")
    ax2.set_xlabel("t")
    ax2.set_title("|conservation residual|")
    return _save(fig, path)


def render_iterate_trace(trace, env_sup, path: Path) -> Path:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.semilogy(range(1, trace.n_sweeps + 1), trace.diffs, "o-")
    ax1.set_xlabel("sweep k")
    ax1.set_title("sup-norm difference d_k")
    for k, sups in enumerate(trace.sup_norms):
        ax2.plot(trace.times, sups, color="C0", alpha=0.5, lw=0.8)
    ax2.plot(trace.times, env_sup, "r--", label="envelope K e^{Kt}")
    ax2.set_xlabel("t")
    ax2.set_title("sup-norm per sweep vs envelope")
    ax2.legend(fontsize=8)
    return _save(fig, path)


def render_moments(times, density_by_node, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.4))
    arr = np.asarray(density_by_node)
    if arr.ndim == 2 and arr.shape[1] > 1:
        im = ax.imshow(
            arr.T, aspect="auto", origin="lower",
            extent=[times[0], times[-1], 0, arr.shape[1]],
        )
        fig.colorbar(im, ax=ax, label="n(t, cell)")
        ax.set_ylabel("cell")
    else:
        ax.plot(times, arr[:, 0])
        ax.set_ylabel("n(t)")
    ax.set_xlabel("t")
    ax.set_title("number density")
    return _save(fig, path)


def render_weak_form(results, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.4))
    names = [r.name for r in results]
    vals = [abs(r.residual) / r.scale for r in results]
    ax.bar(names, vals)
    ax.set_yscale("log")
    ax.set_ylabel("|residual| / scale")
    ax.set_title("distributional-identity residuals")
    ax.tick_params(axis="x", rotation=30)
    return _save(fig, path)


def render_convergence(levels, table, path: Path) -> Path:
    """table: mapping metric -> list of errors, one per level."""
    fig, ax = plt.subplots(figsize=(6, 3.8))
    for metric, errors in table.items():
        ax.loglog([2**lv for lv in levels], errors, "o-", label=metric)
    ax.set_xlabel("refinement factor")
    ax.set_ylabel("error")
    ax.legend(fontsize=8)
    ax.set_title("joint space-time refinement")
    return _save(fig, path)


def render_kernel_report(matrix, speeds, path: Path) -> Path:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    im = ax1.imshow(matrix, origin="lower")
    fig.colorbar(im, ax=ax1)
    ax1.set_title("angular redistribution matrix")
    ax1.set_xlabel("incoming angle")
    ax1.set_ylabel("outgoing angle")
    s = np.asarray(speeds)
    ax2.loglog(s, s**-3.0, "o-")
    ax2.set_xlabel("speed s")
    ax2.set_ylabel("scaling factor")
    ax2.set_title("sphere-scaling law s^-3")
    return _save(fig, path)
