"""Turn an optimized density field into a two-material part and measure the gain.

The continuous density field is thresholded into a binary strong/weak
labeling, the "voids" (weak labels) are filled with the weak base material so
no ersatz modulus remains, the completed part is re-analyzed, and the result
is compared against the all-weak baseline via per-node displacement
magnitudes and a shared-bin histogram.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from .material import Material
from .mesh import Mesh, element_volumes
from .topopt import DensityField

STRONG = "strong"
WEAK = "weak"


@dataclass
class ReinforcementDesign:
    """Binary per-element material labeling.

    ``strong_volume`` counts every strong-labeled element (mm^3);
    ``strong_fraction`` is the strong share of the design-domain volume,
    comparable to the optimizer's mass budget (passive elements sit outside
    that ledger).
    """

    strong_mask: np.ndarray  # (m,) bool
    strong_volume: float
    strong_fraction: float

    @property
    def assignment(self) -> np.ndarray:
        return np.where(self.strong_mask, STRONG, WEAK)


def threshold(
    mesh: Mesh,
    density: DensityField,
    cutoff: float = 0.5,
    passive_strong: bool = True,
) -> ReinforcementDesign:
    """Label elements strong where the filtered density reaches ``cutoff``.

    The comparison is inclusive (theta >= cutoff is strong). Passive elements
    are labeled strong by default, mirroring their pinned density during
    optimization; pass ``passive_strong=False`` to hand them to the weak
    phase instead. The resulting strong fraction may drift from the
    optimizer's mass budget and is reported, not corrected.
    """
    if not 0.0 < cutoff < 1.0:
        raise ValueError(f"cutoff must be in (0, 1), got {cutoff}")
    strong = density.theta >= cutoff
    strong[density.passive_mask] = passive_strong
    volumes = element_volumes(mesh)
    design = density.design_mask
    design_total = float(volumes[design].sum())
    strong_design = float(volumes[design & strong].sum())
    return ReinforcementDesign(
        strong_mask=strong,
        strong_volume=float(volumes[strong].sum()),
        strong_fraction=strong_design / design_total,
    )


def fill_voids(
    design: ReinforcementDesign, strong: Material, weak: Material
) -> np.ndarray:
    """Per-element stiffness matrices for the completed two-material part.

    Strong-labeled elements get the strong material's stiffness and all
    remaining elements get the weak material's, so no ersatz modulus is left
    anywhere in the model.
    """
    c_strong = strong.stiffness()
    c_weak = weak.stiffness()
    mask = design.strong_mask[:, None, None]
    return np.where(mask, c_strong[None, :, :], c_weak[None, :, :])


def analyze_design(
    mesh: Mesh,
    per_element_c: np.ndarray,
    load_case: fem.LoadCase,
    tol: float = 1e-8,
    max_iter: int | None = None,
) -> fem.SolveResult:
    """Assemble, constrain, and solve one material assignment."""
    matrix = fem.assemble(mesh, per_element_c)
    matrix, force = fem.apply_dirichlet(matrix, load_case.force, load_case.fixed_dofs)
    return fem.solve(matrix, force, tol=tol, max_iter=max_iter)


@dataclass
class ComparisonReport:
    """Baseline-versus-reinforced displacement statistics and histograms."""

    baseline_max: float
    baseline_mean: float
    reinforced_max: float
    reinforced_mean: float
    max_reduction_pct: float
    mean_reduction_pct: float
    bin_edges: np.ndarray  # (bins + 1,) mm, shared by both histograms
    baseline_counts: np.ndarray  # (bins,)
    reinforced_counts: np.ndarray

    def to_dict(self) -> dict:
        return {
            "baseline": {"max_displacement": self.baseline_max,
                         "mean_displacement": self.baseline_mean},
            "reinforced": {"max_displacement": self.reinforced_max,
                           "mean_displacement": self.reinforced_mean},
            "reduction_pct": {"max": self.max_reduction_pct,
                              "mean": self.mean_reduction_pct},
            "histogram": {
                "bin_edges": self.bin_edges.tolist(),
                "baseline_counts": self.baseline_counts.tolist(),
                "reinforced_counts": self.reinforced_counts.tolist(),
            },
        }

    def to_text(self) -> str:
        rows = [
            ("max displacement (mm)", self.baseline_max, self.reinforced_max,
             self.max_reduction_pct),
            ("mean displacement (mm)", self.baseline_mean, self.reinforced_mean,
             self.mean_reduction_pct),
        ]
        lines = [
            f"{'quantity':<24} {'baseline':>14} {'reinforced':>14} {'reduction %':>12}",
            "-" * 68,
        ]
        for name, base, rein, red in rows:
            lines.append(f"{name:<24} {base:>14.9g} {rein:>14.9g} {red:>12.9g}")
        return "\n".join(lines) + "\n"

    def histogram_rows(self):
        for i in range(len(self.baseline_counts)):
            yield (
                float(self.bin_edges[i]),
                float(self.bin_edges[i + 1]),
                int(self.baseline_counts[i]),
                int(self.reinforced_counts[i]),
            )


def compare(
    baseline: fem.SolveResult, reinforced: fem.SolveResult, bins: int = 30
) -> ComparisonReport:
    """Compare per-node displacement magnitudes of two solves on one mesh.

    Both histograms share ``bins`` equal-width bins spanning [0, max of both
    fields], so counts on each side sum to the node count. Reductions are
    100 * (1 - reinforced / baseline).
    """
    mag_base = baseline.magnitudes
    mag_rein = reinforced.magnitudes
    if mag_base.shape != mag_rein.shape:
        raise fem.FemError(
            f"node-count mismatch: {mag_base.shape[0]} vs {mag_rein.shape[0]}"
        )
    top = float(max(mag_base.max(), mag_rein.max()))
    edges = np.linspace(0.0, top if top > 0.0 else 1.0, bins + 1)
    base_counts, _ = np.histogram(mag_base, bins=edges)
    rein_counts, _ = np.histogram(mag_rein, bins=edges)

    def reduction(base: float, rein: float) -> float:
        return 100.0 * (1.0 - rein / base) if base > 0.0 else 0.0

    base_max, base_mean = float(mag_base.max()), float(mag_base.mean())
    rein_max, rein_mean = float(mag_rein.max()), float(mag_rein.mean())
    return ComparisonReport(
        baseline_max=base_max,
        baseline_mean=base_mean,
        reinforced_max=rein_max,
        reinforced_mean=rein_mean,
        max_reduction_pct=reduction(base_max, rein_max),
        mean_reduction_pct=reduction(base_mean, rein_mean),
        bin_edges=edges,
        baseline_counts=base_counts,
        reinforced_counts=rein_counts,
    )
