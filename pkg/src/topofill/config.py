"""Run configuration: TOML schema, validation, and effective-config echo.

A run config is a single TOML file. Minimal example::

    [mesh.box]
    nx = 20
    ny = 2
    nz = 2
    dims = [10.0, 1.0, 1.0]

    [materials]
    strong = "E-glass"
    weak = "PMMA"

    [[dirichlet]]
    set = "x-"
    components = "xyz"

    [[loads]]
    facet_set = "x+"
    force = [0.0, 0.0, -150.0]

    [optimization]
    mass_fraction = 0.3

See the README for the full schema. Every command echoes the fully
defaulted configuration to ``effective_config.toml`` in its output
directory; re-running from that echo reproduces the outputs.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .material import Material, MaterialError, catalog
from .mesh import Mesh, generate_box_mesh, load_mesh, tag_passive_box
from .serialize import dumps_toml

MESH_FORMATS = ("native_json", "gmsh_ascii_v2")

_OPT_DEFAULTS = {
    "p": 3.0,
    "filter_radius": 0.0,
    "move_limit": 0.2,
    "theta_min": 1e-3,
    "max_iterations": 100,
    "change_tolerance": 0.01,
    "cg_tol": 1e-8,
    "ersatz_ratio": 1e-3,
    "oc_damping": 0.5,
}


class ConfigError(ValueError):
    pass


@dataclass
class BoxSpec:
    nx: int
    ny: int
    nz: int
    dims: tuple[float, float, float]
    passive: tuple[float, ...] | None = None


@dataclass
class MeshSource:
    path: str | None = None
    format: str | None = None
    box: BoxSpec | None = None

    def load(self, base_dir: Path) -> Mesh:
        if self.box is not None:
            mesh = generate_box_mesh(self.box.nx, self.box.ny, self.box.nz, self.box.dims)
            if self.box.passive is not None:
                mesh = tag_passive_box(mesh, self.box.passive)
            return mesh
        return load_mesh(base_dir / self.path, self.format)

    def refined(self, level: int) -> "MeshSource":
        if self.box is None:
            raise ConfigError("convergence levels require a box-generated mesh")
        box = BoxSpec(
            self.box.nx * level,
            self.box.ny * level,
            self.box.nz * level,
            self.box.dims,
            self.box.passive,
        )
        return MeshSource(box=box)


@dataclass
class RunConfig:
    mesh: MeshSource
    strong: Material
    weak: Material
    dirichlet: list[tuple[str, str]]
    loads: list[tuple[str, tuple[float, float, float]]]
    analysis_material: str = "weak"
    mass_fraction: float | None = None
    optimization: dict = field(default_factory=lambda: dict(_OPT_DEFAULTS))
    solver_tol: float = 1e-8
    solver_max_iter: int = 0  # 0 means 10x DOF count
    output_directory: str = "out"
    histogram_bins: int = 30
    threshold_cutoff: float = 0.5
    base_dir: Path = field(default_factory=Path)

    def load_mesh(self) -> Mesh:
        return self.mesh.load(self.base_dir)

    def analysis_stiffness(self):
        mat = self.strong if self.analysis_material == "strong" else self.weak
        return mat.stiffness()

    def require_mass_fraction(self) -> float:
        if self.mass_fraction is None:
            raise ConfigError(
                "optimization.mass_fraction is required for this command"
            )
        return self.mass_fraction


def _expect_table(doc: dict, key: str) -> dict:
    value = doc.get(key)
    if value is None:
        raise ConfigError(f"missing required section [{key}]")
    if not isinstance(value, dict):
        raise ConfigError(f"[{key}] must be a table")
    return value


def _as_float(section: str, key: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
    return float(value)


def _as_int(section: str, key: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
    return int(value)


def _parse_material(section: str, value) -> Material:
    if isinstance(value, str):
        try:
            return catalog(value)
        except MaterialError as exc:
            raise ConfigError(f"{section}: {exc}") from exc
    if isinstance(value, dict):
        try:
            return Material(
                name=str(value.get("name", "custom")),
                youngs_modulus=_as_float(section, "youngs_modulus", value["youngs_modulus"]),
                poisson_ratio=_as_float(section, "poisson_ratio", value["poisson_ratio"]),
                density=_as_float(section, "density", value["density"]),
            )
        except KeyError as exc:
            raise ConfigError(
                f"{section}: explicit material needs youngs_modulus, "
                f"poisson_ratio, and density (missing {exc})"
            ) from exc
        except MaterialError as exc:
            raise ConfigError(f"{section}: {exc}") from exc
    raise ConfigError(f"{section} must be a material name or a table of constants")


def _parse_mesh(doc: dict) -> MeshSource:
    table = _expect_table(doc, "mesh")
    has_path = "path" in table
    has_box = "box" in table
    if has_path == has_box:
        raise ConfigError("mesh: specify exactly one of 'path' or 'box'")
    if has_path:
        fmt = table.get("format")
        if fmt not in MESH_FORMATS:
            raise ConfigError(
                f"mesh.format must be one of {MESH_FORMATS}, got {fmt!r}"
            )
        return MeshSource(path=str(table["path"]), format=fmt)
    box = table["box"]
    if not isinstance(box, dict):
        raise ConfigError("mesh.box must be a table")
    try:
        dims = tuple(_as_float("mesh.box", "dims", v) for v in box["dims"])
        spec = BoxSpec(
            nx=_as_int("mesh.box", "nx", box["nx"]),
            ny=_as_int("mesh.box", "ny", box["ny"]),
            nz=_as_int("mesh.box", "nz", box["nz"]),
            dims=dims,
        )
    except KeyError as exc:
        raise ConfigError(f"mesh.box needs nx, ny, nz, dims (missing {exc})") from exc
    if len(spec.dims) != 3:
        raise ConfigError("mesh.box.dims must have three entries")
    if "passive" in box:
        passive = tuple(_as_float("mesh.box", "passive", v) for v in box["passive"])
        if len(passive) != 6:
            raise ConfigError("mesh.box.passive must be [x0, y0, z0, x1, y1, z1]")
        spec.passive = passive
    return MeshSource(box=spec)


def parse_config(path) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    known = {"mesh", "materials", "dirichlet", "loads", "analysis",
             "optimization", "solver", "output"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")

    mesh_source = _parse_mesh(doc)

    materials = _expect_table(doc, "materials")
    strong = _parse_material("materials.strong", materials.get("strong", "E-glass"))
    weak = _parse_material("materials.weak", materials.get("weak", "PMMA"))

    dirichlet = []
    for i, entry in enumerate(doc.get("dirichlet", [])):
        if not isinstance(entry, dict) or "set" not in entry:
            raise ConfigError(f"dirichlet[{i}] needs a 'set' key")
        comps = str(entry.get("components", "xyz"))
        if not comps or set(comps) - set("xyz"):
            raise ConfigError(
                f"dirichlet[{i}].components must be a subset of 'xyz', got {comps!r}"
            )
        dirichlet.append((str(entry["set"]), comps))
    if not dirichlet:
        raise ConfigError("at least one [[dirichlet]] entry is required")

    loads = []
    for i, entry in enumerate(doc.get("loads", [])):
        if not isinstance(entry, dict) or "facet_set" not in entry or "force" not in entry:
            raise ConfigError(f"loads[{i}] needs 'facet_set' and 'force' keys")
        force = [_as_float(f"loads[{i}]", "force", v) for v in entry["force"]]
        if len(force) != 3:
            raise ConfigError(f"loads[{i}].force must have three components")
        loads.append((str(entry["facet_set"]), tuple(force)))
    if not loads:
        raise ConfigError("at least one [[loads]] entry is required")

    analysis = doc.get("analysis", {})
    analysis_material = str(analysis.get("material", "weak"))
    if analysis_material not in ("weak", "strong"):
        raise ConfigError(
            f"analysis.material must be 'weak' or 'strong', got {analysis_material!r}"
        )

    opt_in = doc.get("optimization", {})
    optimization = dict(_OPT_DEFAULTS)
    mass_fraction = None
    for key, value in opt_in.items():
        if key == "mass_fraction":
            mass_fraction = _as_float("optimization", key, value)
            if not 0.0 < mass_fraction <= 1.0:
                raise ConfigError(
                    f"optimization.mass_fraction out of range (0, 1]: {mass_fraction}"
                )
        elif key in ("max_iterations",):
            optimization[key] = _as_int("optimization", key, value)
        elif key in _OPT_DEFAULTS:
            optimization[key] = _as_float("optimization", key, value)
        else:
            raise ConfigError(f"unknown optimization key {key!r}")

    solver = doc.get("solver", {})
    solver_tol = _as_float("solver", "tol", solver.get("tol", 1e-8))
    solver_max_iter = _as_int("solver", "max_iter", solver.get("max_iter", 0))

    output = doc.get("output", {})
    bins = _as_int("output", "histogram_bins", output.get("histogram_bins", 30))
    if bins < 1:
        raise ConfigError(f"output.histogram_bins must be >= 1, got {bins}")
    cutoff = _as_float("output", "threshold_cutoff", output.get("threshold_cutoff", 0.5))
    if not 0.0 < cutoff < 1.0:
        raise ConfigError(f"output.threshold_cutoff must be in (0, 1), got {cutoff}")

    return RunConfig(
        mesh=mesh_source,
        strong=strong,
        weak=weak,
        dirichlet=dirichlet,
        loads=loads,
        analysis_material=analysis_material,
        mass_fraction=mass_fraction,
        optimization=optimization,
        solver_tol=solver_tol,
        solver_max_iter=solver_max_iter,
        output_directory=str(output.get("directory", "out")),
        histogram_bins=bins,
        threshold_cutoff=cutoff,
        base_dir=path.parent,
    )


def _material_table(mat: Material) -> dict:
    return {
        "name": mat.name,
        "youngs_modulus": mat.youngs_modulus,
        "poisson_ratio": mat.poisson_ratio,
        "density": mat.density,
    }


def effective_config(cfg: RunConfig) -> dict:
    """Fully defaulted view of a RunConfig, ready for the TOML echo."""
    mesh: dict = {}
    if cfg.mesh.box is not None:
        box = {
            "nx": cfg.mesh.box.nx,
            "ny": cfg.mesh.box.ny,
            "nz": cfg.mesh.box.nz,
            "dims": list(cfg.mesh.box.dims),
        }
        if cfg.mesh.box.passive is not None:
            box["passive"] = list(cfg.mesh.box.passive)
        mesh["box"] = box
    else:
        mesh["path"] = str((cfg.base_dir / cfg.mesh.path).resolve())
        mesh["format"] = cfg.mesh.format
    optimization = dict(cfg.optimization)
    if cfg.mass_fraction is not None:
        optimization = {"mass_fraction": cfg.mass_fraction, **optimization}
    return {
        "mesh": mesh,
        "materials": {
            "strong": _material_table(cfg.strong),
            "weak": _material_table(cfg.weak),
        },
        "dirichlet": [
            {"set": tag, "components": comps} for tag, comps in cfg.dirichlet
        ],
        "loads": [
            {"facet_set": tag, "force": list(force)} for tag, force in cfg.loads
        ],
        "analysis": {"material": cfg.analysis_material},
        "optimization": optimization,
        "solver": {"tol": cfg.solver_tol, "max_iter": cfg.solver_max_iter},
        "output": {
            "directory": cfg.output_directory,
            "histogram_bins": cfg.histogram_bins,
            "threshold_cutoff": cfg.threshold_cutoff,
        },
    }


def write_effective_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(dumps_toml(effective_config(cfg)), encoding="utf-8")
