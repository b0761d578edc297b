"""Penalized-density compliance minimization under a mass budget.

Minimizes the external work f.u of the strong material's layout over design
densities theta in [theta_min, 1], subject to rho * sum(theta_e V_e) <= M_0.
The modulus interpolates as E(theta) = E_min + theta^p (E_strong - E_min)
with a small ersatz modulus E_min keeping void regions solvable. Raw design
variables are regularized by a cone-weight density filter; the adjoint
compliance sensitivity for the filtered field is

    dC/dtheta_e = -p theta_e^(p-1) (E_strong - E_min)/E_strong * u_e^T k0_e u_e

with k0_e the element stiffness at full modulus, and chains through the
filter transpose back to the raw variables. Updates use the classical
optimality-criteria fixed point with a bisected mass multiplier; passive
elements stay pinned at theta = 1 so load paths through them always exist.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .material import Material, simp_modulus
from .mesh import FilterGraph, Mesh, build_filter_graph, element_volumes

PASSIVE_THETA = 1.0

_MASS_REL_TOL = 1e-6


class TopOptError(RuntimeError):
    pass


@dataclass
class DensityField:
    """Per-element densities with a pinned passive mask.

    ``theta`` covers every element; entries under ``passive_mask`` hold
    PASSIVE_THETA and are excluded from the design ledger and from updates.
    """

    theta: np.ndarray  # (m,)
    passive_mask: np.ndarray  # (m,) bool

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1)
        self.passive_mask = np.asarray(self.passive_mask, dtype=bool).reshape(-1)
        if self.theta.shape != self.passive_mask.shape:
            raise TopOptError("theta and passive_mask lengths differ")

    @classmethod
    def uniform(cls, mesh: Mesh, value: float) -> "DensityField":
        passive = ~mesh.design_mask
        theta = np.full(mesh.n_elements, float(value))
        theta[passive] = PASSIVE_THETA
        return cls(theta, passive)

    @property
    def design_mask(self) -> np.ndarray:
        return ~self.passive_mask

    def replace_design(self, values: np.ndarray) -> "DensityField":
        theta = self.theta.copy()
        theta[self.design_mask] = values
        return DensityField(theta, self.passive_mask)


@dataclass
class OptimizationConfig:
    mass_fraction: float
    p: float = 3.0
    filter_radius: float = 0.0
    move_limit: float = 0.2
    theta_min: float = 1e-3
    max_iterations: int = 100
    change_tolerance: float = 0.01
    cg_tol: float = 1e-8
    ersatz_ratio: float = 1e-3  # E_min / E_strong
    oc_damping: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.mass_fraction <= 1.0:
            raise TopOptError(f"mass_fraction must be in (0, 1], got {self.mass_fraction}")
        if not 0.0 < self.move_limit <= 1.0:
            raise TopOptError(f"move_limit must be in (0, 1], got {self.move_limit}")
        if self.p < 1.0:
            raise TopOptError(f"penalization exponent must be >= 1, got {self.p}")
        if not 0.0 < self.theta_min < 1.0:
            raise TopOptError(f"theta_min must be in (0, 1), got {self.theta_min}")
        if not 0.0 < self.ersatz_ratio < 1.0:
            raise TopOptError(f"ersatz_ratio must be in (0, 1), got {self.ersatz_ratio}")
        if self.max_iterations < 1:
            raise TopOptError("max_iterations must be >= 1")


@dataclass
class IterationRecord:
    iteration: int
    compliance: float
    mass_fraction: float
    max_change: float
    theta_low: float  # extremes over design elements at the analyzed iterate
    theta_high: float


@dataclass
class OptimizationResult:
    density: DensityField  # filtered (physical) field
    raw_theta: np.ndarray  # unfiltered design variables, all elements
    history: list[IterationRecord]
    converged: bool
    iterations: int
    final_compliance: float
    final_solve: fem.SolveResult

    def history_rows(self):
        return [
            (rec.iteration, rec.compliance, rec.mass_fraction, rec.max_change)
            for rec in self.history
        ]


def mass(
    density: DensityField, volumes: np.ndarray, rho: float
) -> tuple[float, float]:
    """Design-domain strong-material mass (mg) and fraction of the full domain.

    Passive elements are excluded from the ledger; with one strong material
    the mass fraction equals the volume fraction.
    """
    volumes = np.asarray(volumes, dtype=float).reshape(-1)
    if volumes.shape != density.theta.shape:
        raise TopOptError("volumes and theta lengths differ")
    design = density.design_mask
    total = float(volumes[design].sum())
    weighted = float(density.theta[design] @ volumes[design])
    return rho * weighted, weighted / total


def filter_densities(graph: FilterGraph, theta_design: np.ndarray) -> np.ndarray:
    """Filtered densities: convex combination over each cone neighborhood.

    Output is clamped to the input's [min, max] range, which the exact convex
    combination guarantees but float round-off can violate by an ulp.
    """
    theta_design = np.asarray(theta_design, dtype=float)
    return np.clip(graph.apply(theta_design), theta_design.min(), theta_design.max())


def chain_rule_filter(graph: FilterGraph, d_filtered: np.ndarray) -> np.ndarray:
    """Pull sensitivities back through the filter: W^T applied to d_filtered."""
    return graph.apply_transpose(np.asarray(d_filtered, dtype=float))


class _Analysis:
    """Precomputed FEM workspace for repeated solves on one mesh/load case."""

    def __init__(self, mesh: Mesh, load_case: fem.LoadCase, strong: Material, config: OptimizationConfig):
        self.mesh = mesh
        self.load_case = load_case
        self.config = config
        self.e_strong = strong.youngs_modulus
        self.e_min = config.ersatz_ratio * self.e_strong
        self.ke0 = fem.element_stiffness_matrices(mesh, strong.stiffness())
        self.edofs = fem.element_dofs(mesh.elements)
        self.ndof = 3 * mesh.n_nodes
        self.volumes = element_volumes(mesh)
        self._warm: np.ndarray | None = None

    def solve(self, theta: np.ndarray) -> fem.SolveResult:
        scale = simp_modulus(theta, self.config.p, self.e_strong, self.e_min) / self.e_strong
        matrix = fem.scatter_assemble(self.ndof, self.edofs, self.ke0 * scale[:, None, None])
        matrix, force = fem.apply_dirichlet(matrix, self.load_case.force, self.load_case.fixed_dofs)
        result = fem.solve(
            matrix, force, tol=self.config.cg_tol, warm_start=self._warm
        )
        self._warm = result.displacement.reshape(-1).copy()
        return result

    def element_energies(self, displacement: np.ndarray) -> np.ndarray:
        u_e = displacement.reshape(-1)[self.edofs]
        return np.einsum("mi,mij,mj->m", u_e, self.ke0, u_e)

    def sensitivities(self, theta: np.ndarray, displacement: np.ndarray) -> np.ndarray:
        energies = self.element_energies(displacement)
        factor = (
            -self.config.p
            * theta ** (self.config.p - 1.0)
            * (self.e_strong - self.e_min)
            / self.e_strong
        )
        return factor * energies


def compliance_and_sensitivities(
    mesh: Mesh,
    density: DensityField,
    config: OptimizationConfig,
    load_case: fem.LoadCase,
    strong: Material,
) -> tuple[float, np.ndarray, fem.SolveResult]:
    """Compliance of the (already filtered) field and adjoint dC/dtheta.

    The returned sensitivity array covers every element; passive entries are
    zeroed since they are not design variables. All design entries are <= 0.
    """
    analysis = _Analysis(mesh, load_case, strong, config)
    result = analysis.solve(density.theta)
    sens = analysis.sensitivities(density.theta, result.displacement)
    sens[density.passive_mask] = 0.0
    return result.compliance, sens, result


def oc_update(
    theta: np.ndarray,
    dc_dtheta: np.ndarray,
    dm_dtheta: np.ndarray,
    m0: float,
    move_limit: float,
    theta_min: float,
    damping: float = 0.5,
    mass_of=None,
) -> np.ndarray:
    """Optimality-criteria step with bisection on the mass multiplier.

    theta_new = clamp(theta * (-dC / (lambda dM))^damping) within the move
    window and [theta_min, 1]. ``mass_of`` maps a candidate theta to the mass
    the budget applies to (defaults to dm_dtheta . theta); the multiplier is
    bisected until that mass matches ``m0`` to 1e-6 relative, or the nearest
    attainable value when the move window cannot reach it (warned).
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    dc = np.asarray(dc_dtheta, dtype=float).reshape(-1)
    dm = np.asarray(dm_dtheta, dtype=float).reshape(-1)
    if np.any(dm <= 0.0):
        raise TopOptError("mass gradient must be positive")
    if mass_of is None:
        mass_of = lambda cand: float(dm @ cand)

    numerator = np.maximum(-dc, 0.0)  # guards tiny positive noise in dC
    if not np.any(numerator > 0.0):
        warnings.warn(
            "all compliance sensitivities are zero; OC step is degenerate "
            "and theta is returned unchanged",
            RuntimeWarning,
            stacklevel=2,
        )
        return theta.copy()

    lower = np.maximum(theta - move_limit, theta_min)
    upper = np.minimum(theta + move_limit, 1.0)

    def candidate(lam: float) -> np.ndarray:
        return np.clip(theta * (numerator / (lam * dm)) ** damping, lower, upper)

    mass_max = mass_of(upper)
    mass_min = mass_of(lower)
    if mass_max <= m0 * (1.0 + _MASS_REL_TOL):
        if mass_max < m0 * (1.0 - _MASS_REL_TOL):
            warnings.warn(
                f"mass budget {m0:.6g} unreachable within move limits; "
                f"nearest attainable mass is {mass_max:.6g}",
                RuntimeWarning,
                stacklevel=2,
            )
        return upper  # budget inactive inside the move window
    if mass_min >= m0 * (1.0 + _MASS_REL_TOL):
        warnings.warn(
            f"mass budget {m0:.6g} unreachable within move limits; "
            f"nearest attainable mass is {mass_min:.6g}",
            RuntimeWarning,
            stacklevel=2,
        )
        return lower

    lam_lo, lam_hi = 1e-12, 1e12
    while mass_of(candidate(lam_lo)) < m0 and lam_lo > 1e-300:
        lam_lo *= 1e-3
    while mass_of(candidate(lam_hi)) > m0 and lam_hi < 1e300:
        lam_hi *= 1e3
    best = None
    for _ in range(200):
        lam = np.sqrt(lam_lo * lam_hi)
        cand = candidate(lam)
        cand_mass = mass_of(cand)
        if cand_mass <= m0 * (1.0 + _MASS_REL_TOL):
            best = cand
        if abs(cand_mass - m0) <= _MASS_REL_TOL * m0:
            return cand
        if cand_mass > m0:
            lam_lo = lam
        else:
            lam_hi = lam
    if best is None:
        best = candidate(lam_hi)
    return best


def optimize(
    mesh: Mesh,
    load_case: fem.LoadCase,
    strong: Material,
    config: OptimizationConfig,
    graph: FilterGraph | None = None,
) -> OptimizationResult:
    """Run the filter / solve / sensitivity / OC loop to convergence.

    Convergence requires the largest per-element change of the filtered
    (physical) density between consecutive iterates to drop below
    ``change_tolerance`` AND the compliance to have flattened (its span over
    the trailing ten iterates under 1%); otherwise the loop runs to
    ``max_iterations``. The density change is measured on the filtered field
    because raw variables in flat-sensitivity regions can drift without
    moving the physical design; the flatness guard keeps a small per-iterate
    creep from masquerading as convergence. The returned density is the
    filtered field of the last accepted iterate, re-analyzed once so the
    reported final compliance matches it exactly.
    """
    if graph is None:
        graph = build_filter_graph(mesh, config.filter_radius)
    design = mesh.design_mask
    if not np.array_equal(np.flatnonzero(design), graph.design_elements):
        raise TopOptError("filter graph does not cover this mesh's design elements")

    analysis = _Analysis(mesh, load_case, strong, config)
    volumes = analysis.volumes
    rho = strong.density
    design_volumes = volumes[design]
    m_full = rho * float(design_volumes.sum())
    m0 = config.mass_fraction * m_full

    # physical mass of a raw candidate, for the OC bisection
    dm_raw = chain_rule_filter(graph, rho * design_volumes)

    def physical_mass(raw_design: np.ndarray) -> float:
        return float((rho * design_volumes) @ graph.apply(raw_design))

    raw = DensityField.uniform(mesh, config.mass_fraction).theta
    raw_design = np.clip(raw[design], config.theta_min, 1.0)

    history: list[IterationRecord] = []
    converged = False
    field = DensityField.uniform(mesh, config.mass_fraction)
    filtered = filter_densities(graph, raw_design)
    for iteration in range(1, config.max_iterations + 1):
        field = field.replace_design(filtered)
        result = analysis.solve(field.theta)
        sens = analysis.sensitivities(field.theta, result.displacement)
        dc_design = chain_rule_filter(graph, sens[design])
        new_design = oc_update(
            raw_design,
            dc_design,
            dm_raw,
            m0,
            config.move_limit,
            config.theta_min,
            damping=config.oc_damping,
            mass_of=physical_mass,
        )
        new_filtered = filter_densities(graph, new_design)
        change = float(np.max(np.abs(new_filtered - filtered)))
        _, frac = mass(field, volumes, rho)
        history.append(
            IterationRecord(
                iteration=iteration,
                compliance=result.compliance,
                mass_fraction=frac,
                max_change=change,
                theta_low=float(filtered.min()),
                theta_high=float(filtered.max()),
            )
        )
        raw_design, filtered = new_design, new_filtered
        recent = [rec.compliance for rec in history[-10:]]
        flat = (
            max(recent) - min(recent) <= 0.01 * min(recent)
            if min(recent) > 0.0
            else True
        )
        if change < config.change_tolerance and flat:
            converged = True
            break

    final = field.replace_design(filtered)
    final_result = analysis.solve(final.theta)
    raw_full = final.theta.copy()
    raw_full[design] = raw_design
    return OptimizationResult(
        density=final,
        raw_theta=raw_full,
        history=history,
        converged=converged,
        iterations=len(history),
        final_compliance=final_result.compliance,
        final_solve=final_result,
    )
