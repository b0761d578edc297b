"""Command-line surface: analyze, optimize, reinforce, and convergence runs.

Every command reads one TOML config (see config.py and the README), writes
its artifacts into an output directory together with an
``effective_config.toml`` echo, and exits 0 on success, 1 on configuration
errors, or 2 on numerical failures. JSON/CSV artifacts are byte-identical
across repeated runs of the same config.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fem, reinforce, topopt
from .config import ConfigError, RunConfig, parse_config, write_effective_config
from .material import MaterialError
from .mesh import Mesh, MeshError, export_vtk
from .serialize import write_csv, write_json

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name for reporting."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def _solver_max_iter(cfg: RunConfig) -> int | None:
    return cfg.solver_max_iter if cfg.solver_max_iter > 0 else None


def _build_case(cfg: RunConfig, mesh: Mesh) -> fem.LoadCase:
    return fem.LoadCase.build(mesh, cfg.dirichlet, cfg.loads)


def _analyze_mesh(cfg: RunConfig, mesh: Mesh) -> tuple[fem.SolveResult, fem.StressResult]:
    case = _build_case(cfg, mesh)
    stiffness = cfg.analysis_stiffness()
    result = reinforce.analyze_design(
        mesh, stiffness, case, tol=cfg.solver_tol, max_iter=_solver_max_iter(cfg)
    )
    stress = fem.recover_stress(mesh, stiffness, result.displacement)
    return result, stress


def _solve_summary(result: fem.SolveResult) -> dict:
    mags = result.magnitudes
    return {
        "max_displacement_mm": float(mags.max()),
        "mean_displacement_mm": float(mags.mean()),
        "compliance_nmm": result.compliance,
        "cg_iterations": result.cg_iterations,
        "final_residual": result.final_residual,
    }


def cmd_analyze(cfg: RunConfig, outdir: Path) -> dict:
    """Single linear analysis of the configured material; writes VTK + JSON."""
    mesh = cfg.load_mesh()
    result, stress = _analyze_mesh(cfg, mesh)
    export_vtk(
        mesh,
        outdir / "displacement.vtk",
        point_vectors={"displacement": result.displacement},
        cell_scalars={"von_mises": stress.von_mises},
    )
    summary = {
        "command": "analyze",
        "material": cfg.analysis_material,
        "nodes": mesh.n_nodes,
        "elements": mesh.n_elements,
        **_solve_summary(result),
        "max_principal_stress_mpa": float(stress.max_principal.max()),
    }
    write_json(outdir / "summary.json", summary)
    return summary


def _run_single_optimize(cfg: RunConfig, mesh: Mesh, fraction: float) -> topopt.OptimizationResult:
    case = _build_case(cfg, mesh)
    opt_cfg = topopt.OptimizationConfig(
        mass_fraction=fraction,
        cg_tol=cfg.optimization.get("cg_tol", cfg.solver_tol),
        **{k: v for k, v in cfg.optimization.items() if k != "cg_tol"},
    )
    return topopt.optimize(mesh, case, cfg.strong, opt_cfg)


def _write_optimize_artifacts(
    mesh: Mesh, result: topopt.OptimizationResult, fraction: float, outdir: Path
) -> dict:
    export_vtk(mesh, outdir / "density.vtk", cell_scalars={"theta": result.density.theta})
    write_csv(
        outdir / "history.csv",
        ["iteration", "compliance", "mass_fraction", "max_change"],
        result.history_rows(),
    )
    summary = {
        "command": "optimize",
        "mass_fraction_target": fraction,
        "iterations": result.iterations,
        "converged": result.converged,
        "final_compliance_nmm": result.final_compliance,
        "final_mass_fraction": result.history[-1].mass_fraction
        if result.history
        else fraction,
    }
    write_json(outdir / "summary.json", summary)
    return summary


def cmd_optimize(cfg: RunConfig, outdir: Path, fractions=None) -> list[dict]:
    """Density optimization at one or several mass fractions."""
    mesh = cfg.load_mesh()
    fractions = list(fractions) if fractions else [cfg.require_mass_fraction()]
    summaries = []
    for fraction in fractions:
        subdir = outdir if len(fractions) == 1 else outdir / f"mf_{fraction:g}"
        subdir.mkdir(parents=True, exist_ok=True)
        result = _run_single_optimize(cfg, mesh, fraction)
        summaries.append(_write_optimize_artifacts(mesh, result, fraction, subdir))
    if len(fractions) > 1:
        write_json(
            outdir / "sweep_summary.json",
            [
                {
                    "mass_fraction": s["mass_fraction_target"],
                    "final_compliance_nmm": s["final_compliance_nmm"],
                }
                for s in summaries
            ],
        )
    return summaries


def _reinforce_pipeline(cfg: RunConfig, mesh: Mesh, fraction: float, outdir: Path) -> dict:
    max_iter = _solver_max_iter(cfg)

    def stage(name, func):
        try:
            return func()
        except (fem.FemError, topopt.TopOptError, MeshError, ValueError) as exc:
            raise StageError(name, exc) from exc

    case = stage("load-case", lambda: _build_case(cfg, mesh))
    baseline = stage(
        "baseline-analysis",
        lambda: reinforce.analyze_design(
            mesh, cfg.weak.stiffness(), case, tol=cfg.solver_tol, max_iter=max_iter
        ),
    )
    export_vtk(
        mesh,
        outdir / "baseline_displacement.vtk",
        point_vectors={"displacement": baseline.displacement},
    )
    opt_result = stage("optimize", lambda: _run_single_optimize(cfg, mesh, fraction))
    _write_optimize_artifacts(mesh, opt_result, fraction, outdir)

    design = stage(
        "threshold",
        lambda: reinforce.threshold(mesh, opt_result.density, cfg.threshold_cutoff),
    )
    stiffness = stage("fill-voids", lambda: reinforce.fill_voids(design, cfg.strong, cfg.weak))
    reinforced = stage(
        "reinforced-analysis",
        lambda: reinforce.analyze_design(
            mesh, stiffness, case, tol=cfg.solver_tol, max_iter=max_iter
        ),
    )
    export_vtk(
        mesh,
        outdir / "reinforced_displacement.vtk",
        point_vectors={"displacement": reinforced.displacement},
        cell_scalars={"strong_material": design.strong_mask.astype(float)},
    )
    report = stage(
        "compare", lambda: reinforce.compare(baseline, reinforced, cfg.histogram_bins)
    )

    doc = {
        "command": "reinforce",
        "mass_fraction_target": fraction,
        "threshold_cutoff": cfg.threshold_cutoff,
        "strong_volume_mm3": design.strong_volume,
        "strong_fraction_design_domain": design.strong_fraction,
        "baseline_compliance_nmm": baseline.compliance,
        "reinforced_compliance_nmm": reinforced.compliance,
        **report.to_dict(),
    }
    write_json(outdir / "report.json", doc)
    (outdir / "report.txt").write_text(report.to_text(), encoding="utf-8")
    write_csv(
        outdir / "histogram.csv",
        ["bin_left", "bin_right", "count_baseline", "count_reinforced"],
        report.histogram_rows(),
    )
    return doc


def cmd_reinforce(cfg: RunConfig, outdir: Path, fractions=None) -> list[dict]:
    """Full pipeline: baseline, optimize, threshold, fill, re-analyze, compare."""
    mesh = cfg.load_mesh()
    fractions = list(fractions) if fractions else [cfg.require_mass_fraction()]
    reports = []
    for fraction in fractions:
        subdir = outdir if len(fractions) == 1 else outdir / f"mf_{fraction:g}"
        subdir.mkdir(parents=True, exist_ok=True)
        reports.append(_reinforce_pipeline(cfg, mesh, fraction, subdir))
    return reports


@dataclass
class ConvergenceStudy:
    levels: list[int]
    nodes: list[int]
    elements: list[int]
    max_displacement: list[float]
    max_principal_stress: list[float]

    def displacement_changes(self) -> list[float]:
        out = []
        for prev, cur in zip(self.max_displacement, self.max_displacement[1:]):
            out.append(abs(cur - prev) / abs(cur))
        return out

    def stress_changes(self) -> list[float]:
        out = []
        for prev, cur in zip(self.max_principal_stress, self.max_principal_stress[1:]):
            out.append(abs(cur - prev) / abs(cur))
        return out

    def rows(self):
        disp_changes = [None] + self.displacement_changes()
        stress_changes = [None] + self.stress_changes()
        for i, level in enumerate(self.levels):
            yield (
                level,
                self.nodes[i],
                self.elements[i],
                self.max_displacement[i],
                self.max_principal_stress[i],
                "" if disp_changes[i] is None else disp_changes[i],
                "" if stress_changes[i] is None else stress_changes[i],
            )


def run_convergence(cfg: RunConfig, levels) -> ConvergenceStudy:
    levels = [int(v) for v in levels]
    if len(levels) < 2:
        raise ConfigError("convergence needs at least two levels")
    if any(b <= a for a, b in zip(levels, levels[1:])) or levels[0] < 1:
        raise ConfigError(f"levels must strictly refine (increasing >= 1), got {levels}")
    study = ConvergenceStudy(levels, [], [], [], [])
    for level in levels:
        mesh = cfg.mesh.refined(level).load(cfg.base_dir)
        result, stress = _analyze_mesh(cfg, mesh)
        study.nodes.append(mesh.n_nodes)
        study.elements.append(mesh.n_elements)
        study.max_displacement.append(float(result.magnitudes.max()))
        study.max_principal_stress.append(float(stress.max_principal.max()))
    return study


def cmd_convergence(cfg: RunConfig, outdir: Path, levels) -> ConvergenceStudy:
    """Re-run the analysis on a refining family of box meshes and tabulate."""
    study = run_convergence(cfg, levels)
    write_csv(
        outdir / "convergence.csv",
        [
            "level",
            "nodes",
            "elements",
            "max_displacement_mm",
            "max_principal_stress_mpa",
            "displacement_rel_change",
            "stress_rel_change",
        ],
        study.rows(),
    )
    write_json(
        outdir / "convergence.json",
        {
            "command": "convergence",
            "levels": study.levels,
            "nodes": study.nodes,
            "elements": study.elements,
            "max_displacement_mm": study.max_displacement,
            "max_principal_stress_mpa": study.max_principal_stress,
            "displacement_rel_changes": study.displacement_changes(),
            "stress_rel_changes": study.stress_changes(),
        },
    )
    return study


def _parse_float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated number list, got {text!r}") from None


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topofill",
        description=(
            "Place stiff reinforcement inside a soft part by density-based "
            "topology optimization of a tetrahedral elasticity model, then "
            "fill the remaining volume with the soft material and quantify "
            "the displacement reduction."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("analyze", "single-material static analysis"),
        ("optimize", "density optimization under a mass budget"),
        ("reinforce", "full baseline/optimize/threshold/fill/compare pipeline"),
        ("convergence", "mesh refinement study"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="TOML run configuration")
        cmd.add_argument("--out", default=None, help="output directory override")
        if name in ("optimize", "reinforce"):
            cmd.add_argument(
                "--sweep",
                default=None,
                help="comma-separated mass fractions, e.g. 0.2,0.4,0.57",
            )
        if name == "convergence":
            cmd.add_argument(
                "--levels",
                required=True,
                help="comma-separated refinement multipliers, e.g. 1,2,4",
            )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        outdir = Path(args.out) if args.out else Path(cfg.output_directory)
        outdir.mkdir(parents=True, exist_ok=True)
        write_effective_config(cfg, outdir / "effective_config.toml")

        if args.command == "analyze":
            summary = cmd_analyze(cfg, outdir)
            print(
                f"analyze: max displacement {summary['max_displacement_mm']:.9g} mm, "
                f"compliance {summary['compliance_nmm']:.9g} N*mm"
            )
        elif args.command == "optimize":
            sweep = _parse_float_list(args.sweep) if args.sweep else None
            if sweep is None:
                cfg.require_mass_fraction()
            for summary in cmd_optimize(cfg, outdir, sweep):
                print(
                    f"optimize mf={summary['mass_fraction_target']:g}: "
                    f"{summary['iterations']} iterations, "
                    f"final compliance {summary['final_compliance_nmm']:.9g} N*mm, "
                    f"final mass fraction {summary['final_mass_fraction']:.9g}"
                )
        elif args.command == "reinforce":
            sweep = _parse_float_list(args.sweep) if args.sweep else None
            if sweep is None:
                cfg.require_mass_fraction()
            for doc in cmd_reinforce(cfg, outdir, sweep):
                print(
                    f"reinforce mf={doc['mass_fraction_target']:g}: "
                    f"mean displacement reduced {doc['reduction_pct']['mean']:.9g}%, "
                    f"max reduced {doc['reduction_pct']['max']:.9g}%"
                )
        elif args.command == "convergence":
            study = cmd_convergence(cfg, outdir, _parse_int_list(args.levels))
            changes = study.displacement_changes()
            print(
                f"convergence: levels {study.levels}, "
                f"last displacement change {changes[-1]:.9g}"
            )
    except (ConfigError, MaterialError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (fem.FemError, topopt.TopOptError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
