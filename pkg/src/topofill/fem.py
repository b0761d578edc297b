"""Linear-elasticity TET4 finite elements: stiffness, assembly, solve, stress.

The weak form of static linear elasticity with small strains
eps(u) = (grad u + grad u^T) / 2 discretizes on 4-node tets to constant-strain
elements with k_e = V_e * B^T C B, where B is the 6x12 strain-displacement
matrix built from the linear shape-function gradients. Global systems are
scipy CSR matrices with 3 DOFs per node; homogeneous Dirichlet conditions are
imposed by symmetric elimination (rows/columns zeroed, unit diagonal), which
keeps DOF numbering stable, and systems are solved with Jacobi-preconditioned
conjugate gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, MeshError, distribute_load, signed_volumes

_DEGENERATE_REL_VOL = 1e-12

_COMPONENT_INDEX = {"x": 0, "y": 1, "z": 2}


class FemError(RuntimeError):
    pass


class SolverError(FemError):
    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass
class SolveResult:
    displacement: np.ndarray  # (n_nodes, 3) mm
    compliance: float  # N*mm
    cg_iterations: int
    final_residual: float  # |K u - f| / |f|

    @property
    def magnitudes(self) -> np.ndarray:
        return np.linalg.norm(self.displacement, axis=1)


@dataclass
class LoadCase:
    """Dirichlet sets plus facet loads, resolved to per-DOF arrays.

    ``dirichlet`` entries are (set tag, components) with components a subset
    of "xyz". Tags resolve against the mesh's node sets first and fall back
    to the nodes of the equally named facet set. ``loads`` entries are
    (facet set tag, total force vector in N).
    """

    dirichlet: list[tuple[str, str]]
    loads: list[tuple[str, np.ndarray]]
    fixed_dofs: np.ndarray = field(repr=False)
    force: np.ndarray = field(repr=False)  # (3 * n_nodes,)

    @classmethod
    def build(cls, mesh: Mesh, dirichlet, loads) -> "LoadCase":
        fixed = set()
        for tag, components in dirichlet:
            nodes = _resolve_node_tag(mesh, tag)
            comps = _parse_components(components)
            for n in nodes:
                for c in comps:
                    fixed.add(3 * int(n) + c)
        force = np.zeros(3 * mesh.n_nodes)
        resolved_loads = []
        for tag, vec in loads:
            vec = np.asarray(vec, dtype=float).reshape(3)
            for node, f in distribute_load(mesh, tag, vec).items():
                force[3 * node : 3 * node + 3] += f
            resolved_loads.append((tag, vec))
        fixed_dofs = np.array(sorted(fixed), dtype=np.int64)
        return cls(list(dirichlet), resolved_loads, fixed_dofs, force)


def _resolve_node_tag(mesh: Mesh, tag: str) -> np.ndarray:
    if tag in mesh.node_sets:
        return mesh.node_sets[tag]
    if tag in mesh.facet_sets:
        return np.unique(mesh.facet_sets[tag])
    raise MeshError(f"unknown node/facet set {tag!r}")


def _parse_components(components: str) -> list[int]:
    comps = sorted({_COMPONENT_INDEX[c] for c in components if c in _COMPONENT_INDEX})
    if not comps or any(c not in "xyz" for c in components):
        raise FemError(f"invalid component mask {components!r} (use subset of 'xyz')")
    return comps


# ---------------------------------------------------------------------------
# element stiffness


def shape_gradients(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the four linear shape functions and signed volumes.

    ``coords`` is (m, 4, 3); returns (grads (m, 4, 3), volumes (m,)).
    """
    m = coords.shape[0]
    a = np.ones((m, 4, 4))
    a[:, :, 1:] = coords
    vols = np.linalg.det(a) / 6.0
    inv = np.linalg.inv(a)
    return inv[:, 1:, :].transpose(0, 2, 1), vols


def _strain_displacement(grads: np.ndarray) -> np.ndarray:
    """B matrices (m, 6, 12) in Voigt order (xx, yy, zz, yz, xz, xy)."""
    m = grads.shape[0]
    b = np.zeros((m, 6, 12))
    for j in range(4):
        gx, gy, gz = grads[:, j, 0], grads[:, j, 1], grads[:, j, 2]
        b[:, 0, 3 * j] = gx
        b[:, 1, 3 * j + 1] = gy
        b[:, 2, 3 * j + 2] = gz
        b[:, 3, 3 * j + 1] = gz
        b[:, 3, 3 * j + 2] = gy
        b[:, 4, 3 * j] = gz
        b[:, 4, 3 * j + 2] = gx
        b[:, 5, 3 * j] = gy
        b[:, 5, 3 * j + 1] = gx
    return b


def element_stiffness_tet4(coords: np.ndarray, c: np.ndarray) -> np.ndarray:
    """12x12 stiffness of one tet: k_e = V * B^T C B.

    Symmetric with exactly six zero eigenvalues (rigid modes). Raises on
    degenerate (near zero volume) geometry.
    """
    coords = np.asarray(coords, dtype=float).reshape(1, 4, 3)
    vol = signed_volumes(coords[0], np.array([[0, 1, 2, 3]]))[0]
    scale = np.max(np.abs(coords)) or 1.0
    if abs(vol) <= _DEGENERATE_REL_VOL * scale**3:
        raise FemError(f"degenerate tet with volume {vol:.3e} mm^3")
    grads, vols = shape_gradients(coords)
    b = _strain_displacement(grads)[0]
    return abs(vols[0]) * b.T @ np.asarray(c, dtype=float) @ b


def element_stiffness_matrices(mesh: Mesh, per_element_c: np.ndarray) -> np.ndarray:
    """Stiffness matrices (m, 12, 12) for all elements.

    ``per_element_c`` is a single (6, 6) matrix or an (m, 6, 6) stack.
    """
    per_element_c = np.asarray(per_element_c, dtype=float)
    if per_element_c.shape == (6, 6):
        per_element_c = np.broadcast_to(per_element_c, (mesh.n_elements, 6, 6))
    elif per_element_c.shape != (mesh.n_elements, 6, 6):
        raise FemError(
            f"per-element stiffness must be (6, 6) or ({mesh.n_elements}, 6, 6)"
        )
    grads, vols = shape_gradients(mesh.nodes[mesh.elements])
    b = _strain_displacement(grads)
    return np.einsum("mia,mij,mjb,m->mab", b, per_element_c, b, vols, optimize=True)


def element_dofs(elements: np.ndarray) -> np.ndarray:
    """(m, 12) global DOF indices, xyz interleaved per node."""
    return (np.repeat(3 * elements, 3, axis=1) + np.tile([0, 1, 2], 4)).astype(
        np.int64
    )


def scatter_assemble(ndof: int, edofs: np.ndarray, ke: np.ndarray) -> sp.csr_matrix:
    """Sum element matrices into a global CSR matrix."""
    m = len(edofs)
    rows = np.repeat(edofs, 12, axis=1).ravel()
    cols = np.tile(edofs, (1, 12)).ravel()
    return sp.coo_matrix(
        (ke.reshape(m * 144), (rows, cols)), shape=(ndof, ndof)
    ).tocsr()


def assemble(mesh: Mesh, per_element_c: np.ndarray) -> sp.csr_matrix:
    """Assemble the global stiffness matrix (3 DOFs per node)."""
    ke = element_stiffness_matrices(mesh, per_element_c)
    return scatter_assemble(3 * mesh.n_nodes, element_dofs(mesh.elements), ke)


def apply_dirichlet(
    matrix: sp.csr_matrix, force: np.ndarray, fixed_dofs: np.ndarray
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Impose homogeneous Dirichlet DOFs by symmetric elimination.

    Fixed rows and columns are zeroed with a unit diagonal, and the force is
    zeroed there, so solutions carry exact zeros at fixed DOFs and DOF
    numbering survives for post-processing.
    """
    ndof = matrix.shape[0]
    fixed_dofs = np.asarray(fixed_dofs, dtype=np.int64)
    free = np.ones(ndof)
    free[fixed_dofs] = 0.0
    eliminated = matrix.multiply(free[:, None]).multiply(free[None, :])
    eliminated = (eliminated + sp.diags(1.0 - free)).tocsr()
    return eliminated, force * free


def solve(
    matrix: sp.csr_matrix,
    force: np.ndarray,
    tol: float = 1e-8,
    max_iter: int | None = None,
    warm_start: np.ndarray | None = None,
) -> SolveResult:
    """Jacobi-preconditioned CG solve of K u = f.

    Converges when |K u - f| / |f| <= tol. Raises SolverError on NaNs, on
    loss of positive definiteness (the signature of an insufficiently
    constrained structure), or when ``max_iter`` (default 10x DOF count) is
    exceeded.
    """
    ndof = matrix.shape[0]
    if max_iter is None or max_iter <= 0:
        max_iter = 10 * ndof
    force = np.asarray(force, dtype=float).reshape(ndof)
    norm_f = np.linalg.norm(force)
    if norm_f == 0.0:
        u = np.zeros(ndof)
        return SolveResult(u.reshape(-1, 3), 0.0, 0, 0.0)

    diag = matrix.diagonal().copy()
    if np.any(diag <= 0.0):
        raise SolverError(
            "system diagonal has non-positive entries; "
            "structure is insufficiently constrained or elements are degenerate"
        )

    if warm_start is not None:
        u = np.array(warm_start, dtype=float).reshape(ndof)
        r = force - matrix @ u
    else:
        u = np.zeros(ndof)
        r = force.copy()
    if np.linalg.norm(r) <= tol * norm_f:
        return SolveResult(
            u.reshape(-1, 3),
            compliance(force, u),
            0,
            float(np.linalg.norm(r) / norm_f),
        )
    z = r / diag
    p = z.copy()
    rz = float(r @ z)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        kp = matrix @ p
        curvature = float(p @ kp)
        if not np.isfinite(curvature):
            raise SolverError("NaN encountered in CG; aborting", iterations=iterations)
        if curvature <= 0.0:
            raise SolverError(
                "CG found a non-positive curvature direction: "
                "insufficient constraints (structure has rigid-body freedom)",
                iterations=iterations,
            )
        alpha = rz / curvature
        u += alpha * p
        r -= alpha * kp
        res = np.linalg.norm(r)
        if not np.isfinite(res):
            raise SolverError("NaN encountered in CG; aborting", iterations=iterations)
        if res <= tol * norm_f:
            break
        z = r / diag
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    else:
        rel = float(np.linalg.norm(r) / norm_f)
        hint = (
            "insufficient constraints suspected (residual stagnated)"
            if rel > 1e-2
            else "check conditioning or raise max_iter"
        )
        raise SolverError(
            f"CG exceeded {max_iter} iterations "
            f"(relative residual {rel:.3e}); {hint}",
            residual=rel,
            iterations=max_iter,
        )

    final_res = float(np.linalg.norm(force - matrix @ u) / norm_f)
    return SolveResult(
        displacement=u.reshape(-1, 3),
        compliance=compliance(force, u),
        cg_iterations=iterations,
        final_residual=final_res,
    )


def compliance(force: np.ndarray, displacement: np.ndarray) -> float:
    """External work f . u in N*mm."""
    f = np.asarray(force, dtype=float).reshape(-1)
    u = np.asarray(displacement, dtype=float).reshape(-1)
    if f.shape != u.shape:
        raise FemError(f"length mismatch: force {f.shape} vs displacement {u.shape}")
    return float(f @ u)


# ---------------------------------------------------------------------------
# stress recovery


@dataclass
class StressResult:
    voigt: np.ndarray  # (m, 6) MPa, order (xx, yy, zz, yz, xz, xy)
    von_mises: np.ndarray  # (m,)
    max_principal: np.ndarray  # (m,)


def recover_stress(
    mesh: Mesh, per_element_c: np.ndarray, displacement: np.ndarray
) -> StressResult:
    """Constant per-element stress sigma = C B u_e, plus scalar measures.

    No nodal averaging is applied; principal stresses are eigenvalues of the
    per-element 3x3 stress tensor.
    """
    per_element_c = np.asarray(per_element_c, dtype=float)
    if per_element_c.shape == (6, 6):
        per_element_c = np.broadcast_to(per_element_c, (mesh.n_elements, 6, 6))
    grads, _ = shape_gradients(mesh.nodes[mesh.elements])
    b = _strain_displacement(grads)
    u_e = np.asarray(displacement, dtype=float).reshape(-1)[
        element_dofs(mesh.elements)
    ]
    strain = np.einsum("mij,mj->mi", b, u_e)
    stress = np.einsum("mij,mj->mi", per_element_c, strain)

    sxx, syy, szz, syz, sxz, sxy = stress.T
    von_mises = np.sqrt(
        0.5 * ((sxx - syy) ** 2 + (syy - szz) ** 2 + (szz - sxx) ** 2)
        + 3.0 * (syz**2 + sxz**2 + sxy**2)
    )
    tensors = np.empty((mesh.n_elements, 3, 3))
    tensors[:, 0, 0] = sxx
    tensors[:, 1, 1] = syy
    tensors[:, 2, 2] = szz
    tensors[:, 1, 2] = tensors[:, 2, 1] = syz
    tensors[:, 0, 2] = tensors[:, 2, 0] = sxz
    tensors[:, 0, 1] = tensors[:, 1, 0] = sxy
    principal = np.linalg.eigvalsh(tensors)
    return StressResult(stress, von_mises, principal[:, -1])
