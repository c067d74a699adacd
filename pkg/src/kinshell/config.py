"""Run configuration: one TOML file describing grid, kernel, damping,
iteration, initial data and outputs.

Loading re-validates every numeric constraint the builders enforce, so a bad
config fails at parse time with a field-path diagnostic rather than mid-run.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .grid import DistributionField, PhaseGrid, SpatialGrid, build_velocity_grid
from .kernel import ScatteringKernel, build_kernel, forward_peaked, isotropic
from .dynamics import DampingModel
from .picard import PicardConfig
from .initial import GENERATORS, from_snapshot, make_initial_data
from .verify import mollify

__all__ = ["ConfigError", "RunConfig", "load_config", "load_config_text"]

KNOWN_REPORTS = ("energy", "weak-form", "moments", "figures")


class ConfigError(ValueError):
    """Configuration file is missing, malformed, or violates a constraint."""


def _get(table: dict, section: str, key: str, kind, default=None, required=True):
    if key not in table:
        if required and default is None:
            raise ConfigError(f"missing field {section}.{key}")
        return default
    value = table[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(
            f"field {section}.{key}: expected {kind.__name__}, got {type(value).__name__}"
        )
    return value


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


@dataclass
class RunConfig:
    """Validated scenario description plus the raw config text and its checksum."""

    dim: int
    cells: tuple[int, ...]
    extent: tuple[float, ...]
    shells: int
    angles: int
    s_max: float

    profile: str
    kappa: Optional[float]
    lam: float

    damping_kind: str
    damping_c: float

    horizon: float
    steps: int
    tol_abs: float
    tol_rel: float
    max_iter: int
    moment_order: float

    generator: str
    generator_params: dict[str, Any]
    snapshot_path: Optional[str]
    mollify_eps: float

    out_dir: str
    reports: tuple[str, ...]

    raw_text: str = ""
    checksum: str = ""

    # ---- builders -------------------------------------------------------

    def make_grid(self) -> PhaseGrid:
        spatial = SpatialGrid(self.dim, self.extent, self.cells)
        velocity = build_velocity_grid(self.shells, self.angles, self.s_max)
        return PhaseGrid(spatial, velocity)

    def make_kernel(self, grid: PhaseGrid) -> ScatteringKernel:
        if self.profile == "isotropic":
            prof = isotropic()
        elif self.profile == "forward_peaked":
            prof = forward_peaked(self.kappa)
        else:
            raise ConfigError(f"field kernel.profile: unknown profile {self.profile!r}")
        return build_kernel(prof, grid.velocity, self.lam)

    def make_damping(self) -> DampingModel:
        return DampingModel(self.damping_kind, self.damping_c)

    def make_picard(self) -> PicardConfig:
        return PicardConfig(
            horizon=self.horizon,
            steps=self.steps,
            tol_abs=self.tol_abs,
            tol_rel=self.tol_rel,
            max_iter=self.max_iter,
            moment_order=self.moment_order,
        )

    def make_initial_field(self, grid: PhaseGrid) -> DistributionField:
        if self.generator == "from-snapshot":
            f0 = from_snapshot(grid, self.snapshot_path)
        else:
            f0 = make_initial_data(grid, self.generator, self.generator_params).on_grid(grid)
        if self.mollify_eps > 0.0:
            f0 = mollify(f0, self.mollify_eps)
        return f0

    def refined(self, factor: int) -> "RunConfig":
        """Joint space-time refinement: cells and steps scaled by ``factor``."""
        import dataclasses

        return dataclasses.replace(
            self,
            cells=tuple(n * factor for n in self.cells),
            steps=self.steps * factor,
        )

    def memory_estimate_bytes(self) -> int:
        field_bytes = 8 * int(math.prod(self.cells)) * self.shells * self.angles
        # previous + current trajectories + gain slices + transients
        return int(3.5 * (self.steps + 1) * field_bytes)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return load_config_text(path.read_bytes().decode("utf-8"), source=str(path))


def load_config_text(text: str, source: str = "<config>") -> RunConfig:
    raw = text.encode("utf-8")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    known_sections = {"grid", "kernel", "damping", "picard", "initial", "output"}
    unknown = set(data) - known_sections
    _require(not unknown, f"unknown config section(s): {sorted(unknown)}")

    g = data.get("grid", {})
    dim = _get(g, "grid", "dim", int)
    cells = _get(g, "grid", "cells", list)
    extent = _get(g, "grid", "extent", list)
    shells = _get(g, "grid", "shells", int)
    angles = _get(g, "grid", "angles", int)
    s_max = _get(g, "grid", "s_max", float)
    _require(dim in (1, 2, 3), f"field grid.dim: must be 1, 2 or 3, got {dim}")
    _require(len(cells) == dim, f"field grid.cells: need {dim} entries")
    _require(len(extent) == dim, f"field grid.extent: need {dim} entries")
    _require(all(isinstance(n, int) and n >= 2 for n in cells), "field grid.cells: integers >= 2")
    _require(all(float(L) > 0 for L in extent), "field grid.extent: positive lengths")
    _require(shells >= 1, f"field grid.shells: must be >= 1, got {shells}")
    _require(angles >= 2, f"field grid.angles: must be >= 2, got {angles}")
    _require(s_max > 0, f"field grid.s_max: must be > 0, got {s_max}")

    k = data.get("kernel", {})
    profile = _get(k, "kernel", "profile", str)
    _require(
        profile in ("isotropic", "forward_peaked"),
        f"field kernel.profile: unknown profile {profile!r}",
    )
    kappa = _get(k, "kernel", "kappa", float, required=(profile == "forward_peaked"))
    if profile == "forward_peaked":
        _require(kappa is not None and kappa > 0, "field kernel.kappa: must be > 0")
    lam = _get(k, "kernel", "lambda", float)
    _require(lam >= 0, f"field kernel.lambda: must be >= 0, got {lam}")

    d = data.get("damping", {})
    damping_kind = _get(d, "damping", "kind", str)
    _require(
        damping_kind in ("zero", "constant", "linear", "saturating"),
        f"field damping.kind: unknown kind {damping_kind!r}",
    )
    damping_c = _get(d, "damping", "c", float, default=0.0, required=(damping_kind != "zero"))
    _require(damping_c >= 0, f"field damping.c: must be >= 0, got {damping_c}")

    p = data.get("picard", {})
    horizon = _get(p, "picard", "horizon", float)
    steps = _get(p, "picard", "steps", int)
    tol_abs = _get(p, "picard", "tol_abs", float, default=1e-11, required=False)
    tol_rel = _get(p, "picard", "tol_rel", float, default=1e-9, required=False)
    max_iter = _get(p, "picard", "max_iter", int, default=60, required=False)
    moment_order = _get(p, "picard", "moment_order", float, default=2.0, required=False)
    _require(horizon > 0, f"field picard.horizon: must be > 0, got {horizon}")
    _require(steps >= 1, f"field picard.steps: must be >= 1, got {steps}")
    _require(tol_abs > 0 and tol_rel > 0, "field picard.tol_abs/tol_rel: must be > 0")
    _require(max_iter >= 1, f"field picard.max_iter: must be >= 1, got {max_iter}")
    _require(moment_order >= 0, "field picard.moment_order: must be >= 0")

    i = data.get("initial", {})
    generator = _get(i, "initial", "generator", str)
    _require(
        generator in set(GENERATORS) | {"from-snapshot"},
        f"field initial.generator: unknown generator {generator!r}",
    )
    snapshot_path = _get(i, "initial", "snapshot", str, required=(generator == "from-snapshot"))
    mollify_eps = _get(i, "initial", "mollify_eps", float, default=0.0, required=False)
    _require(mollify_eps >= 0, "field initial.mollify_eps: must be >= 0")
    params = i.get("params", {})
    _require(isinstance(params, dict), "field initial.params: must be a table")

    o = data.get("output", {})
    out_dir = _get(o, "output", "directory", str, default="out", required=False)
    reports = tuple(_get(o, "output", "reports", list, default=list(KNOWN_REPORTS), required=False))
    bad = [r for r in reports if r not in KNOWN_REPORTS]
    _require(not bad, f"field output.reports: unknown report(s) {bad}")

    cfg = RunConfig(
        dim=dim,
        cells=tuple(int(n) for n in cells),
        extent=tuple(float(L) for L in extent),
        shells=shells,
        angles=angles,
        s_max=float(s_max),
        profile=profile,
        kappa=None if kappa is None else float(kappa),
        lam=float(lam),
        damping_kind=damping_kind,
        damping_c=float(damping_c),
        horizon=float(horizon),
        steps=steps,
        tol_abs=float(tol_abs),
        tol_rel=float(tol_rel),
        max_iter=max_iter,
        moment_order=float(moment_order),
        generator=generator,
        generator_params=dict(params),
        snapshot_path=snapshot_path,
        mollify_eps=float(mollify_eps),
        out_dir=out_dir,
        reports=reports,
        raw_text=raw.decode("utf-8"),
        checksum=hashlib.sha256(raw).hexdigest(),
    )

    # Cross-checks the builders would only hit mid-run.
    try:
        build_velocity_grid(cfg.shells, cfg.angles, cfg.s_max)
    except Exception as exc:
        raise ConfigError(f"field grid.angles/shells: {exc}") from exc
    _require(
        cfg.mollify_eps <= min(cfg.extent) / 2.0,
        "field initial.mollify_eps: exceeds half the smallest box extent",
    )
    return cfg
