"""Reinforcement layout by density-based topology optimization on TET4 meshes.

The library places a stiff material inside a part made of a soft base
material: a compliance-minimizing density field is computed under a mass
budget, thresholded into a binary layout, the remainder is filled with the
soft material, and the completed two-material part is re-analyzed against the
all-soft baseline.
"""

from .fem import (
    FemError,
    LoadCase,
    SolveResult,
    SolverError,
    apply_dirichlet,
    assemble,
    compliance,
    element_stiffness_tet4,
    recover_stress,
    solve,
)
from .material import Material, MaterialError, catalog, isotropic_stiffness, simp_modulus
from .mesh import (
    FilterGraph,
    Mesh,
    MeshError,
    build_filter_graph,
    distribute_load,
    element_volume,
    element_volumes,
    export_vtk,
    generate_box_mesh,
    load_mesh,
    save_mesh,
    tag_passive_box,
)
from .reinforce import (
    ComparisonReport,
    ReinforcementDesign,
    analyze_design,
    compare,
    fill_voids,
    threshold,
)
from .topopt import (
    DensityField,
    OptimizationConfig,
    OptimizationResult,
    TopOptError,
    chain_rule_filter,
    compliance_and_sensitivities,
    filter_densities,
    mass,
    oc_update,
    optimize,
)

__version__ = "0.1.0"

__all__ = [
    "ComparisonReport",
    "DensityField",
    "FemError",
    "FilterGraph",
    "LoadCase",
    "Material",
    "MaterialError",
    "Mesh",
    "MeshError",
    "OptimizationConfig",
    "OptimizationResult",
    "ReinforcementDesign",
    "SolveResult",
    "SolverError",
    "TopOptError",
    "analyze_design",
    "apply_dirichlet",
    "assemble",
    "build_filter_graph",
    "catalog",
    "chain_rule_filter",
    "compare",
    "compliance",
    "compliance_and_sensitivities",
    "distribute_load",
    "element_stiffness_tet4",
    "element_volume",
    "element_volumes",
    "export_vtk",
    "fill_voids",
    "filter_densities",
    "generate_box_mesh",
    "isotropic_stiffness",
    "load_mesh",
    "mass",
    "oc_update",
    "optimize",
    "recover_stress",
    "save_mesh",
    "simp_modulus",
    "solve",
    "tag_passive_box",
    "threshold",
]
