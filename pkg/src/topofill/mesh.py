"""Tetrahedral mesh model, file I/O, structured box generation, and geometry queries.

A mesh holds TET4 volume elements tagged as "design" or "passive", plus named
facet sets (boundary triangles) and node sets used to attach boundary
conditions and loads. Coordinates are mm. Meshes are immutable after
construction (arrays are marked read-only) and safe to share across threads.

Supported file formats:

* native JSON: ``{"nodes": [[x,y,z],...], "elements": [{"conn": [a,b,c,d],
  "region": "design"|"passive"}, ...], "facet_sets": {tag: [[a,b,c],...]},
  "node_sets": {tag: [i,...]}}``
* Gmsh ASCII v2.2: ``$Nodes``/``$Elements`` with element type 4 (tet, region
  from the physical-volume name, "passive" or anything else = design) and
  type 2 (triangle, facet set named by the physical-surface name). Node sets
  have no Gmsh representation and are dropped on export.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

DESIGN = "design"
PASSIVE = "passive"

BOX_FACE_TAGS = ("x-", "x+", "y-", "y+", "z-", "z+")

# local faces of a positively oriented tet, outward-facing
_TET_FACES = ((0, 2, 1), (0, 1, 3), (1, 2, 3), (0, 3, 2))

_COINCIDENT_TOL = 1e-9  # mm


class MeshError(ValueError):
    pass


@dataclass(eq=False)
class Mesh:
    nodes: np.ndarray  # (n, 3) float64, mm
    elements: np.ndarray  # (m, 4) int64, positively oriented
    regions: np.ndarray  # (m,) unicode, "design" | "passive"
    facet_sets: dict[str, np.ndarray] = field(default_factory=dict)
    node_sets: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=np.float64)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        self.regions = np.asarray(self.regions)
        self.facet_sets = {
            tag: np.ascontiguousarray(tris, dtype=np.int64).reshape(-1, 3)
            for tag, tris in self.facet_sets.items()
        }
        self.node_sets = {
            tag: np.ascontiguousarray(ids, dtype=np.int64).reshape(-1)
            for tag, ids in self.node_sets.items()
        }
        self.validate()
        for arr in (self.nodes, self.elements, self.regions):
            arr.setflags(write=False)
        for group in (self.facet_sets, self.node_sets):
            for arr in group.values():
                arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def design_mask(self) -> np.ndarray:
        return self.regions == DESIGN

    def validate(self) -> None:
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 3:
            raise MeshError(f"nodes must be (n, 3), got {self.nodes.shape}")
        if self.elements.ndim != 2 or self.elements.shape[1] != 4:
            raise MeshError(f"elements must be (m, 4), got {self.elements.shape}")
        if self.n_nodes == 0 or self.n_elements == 0:
            raise MeshError("empty mesh")
        if len(self.regions) != self.n_elements:
            raise MeshError("one region tag per element required")
        bad = set(np.unique(self.regions)) - {DESIGN, PASSIVE}
        if bad:
            raise MeshError(f"unknown region tags: {sorted(bad)}")

        n = self.n_nodes
        if self.elements.min() < 0 or self.elements.max() >= n:
            raise MeshError("element connectivity references out-of-range node")
        for tag, tris in self.facet_sets.items():
            if tris.size and (tris.min() < 0 or tris.max() >= n):
                raise MeshError(f"facet set {tag!r} references out-of-range node")
        for tag, ids in self.node_sets.items():
            if ids.size and (ids.min() < 0 or ids.max() >= n):
                raise MeshError(f"node set {tag!r} references out-of-range node")

        vols = signed_volumes(self.nodes, self.elements)
        if np.any(vols <= 0.0):
            worst = int(np.argmin(vols))
            raise MeshError(
                f"element {worst} has non-positive volume {vols[worst]:.3e} mm^3"
            )

        pairs = cKDTree(self.nodes).query_pairs(_COINCIDENT_TOL)
        if pairs:
            a, b = sorted(next(iter(pairs)))
            raise MeshError(f"nodes {a} and {b} coincide within {_COINCIDENT_TOL} mm")

        boundary = boundary_faces(self.elements)
        for tag, tris in self.facet_sets.items():
            for tri in tris:
                if tuple(sorted(tri)) not in boundary:
                    raise MeshError(
                        f"facet set {tag!r} triangle {tri.tolist()} is not a boundary face"
                    )


def signed_volumes(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Signed volume det(edge matrix)/6 of each tet."""
    c = nodes[elements]
    return np.linalg.det(c[:, 1:] - c[:, :1]) / 6.0


def element_volume(mesh: Mesh, e: int) -> float:
    """Volume of element ``e`` in mm^3."""
    return float(signed_volumes(mesh.nodes, mesh.elements[e : e + 1])[0])


def element_volumes(mesh: Mesh) -> np.ndarray:
    return signed_volumes(mesh.nodes, mesh.elements)


def element_centroids(mesh: Mesh) -> np.ndarray:
    return mesh.nodes[mesh.elements].mean(axis=1)


def boundary_faces(elements: np.ndarray) -> set[tuple[int, int, int]]:
    """Sorted node triples of faces that belong to exactly one element."""
    counts: dict[tuple[int, int, int], int] = {}
    for conn in elements:
        for fa, fb, fc in _TET_FACES:
            key = tuple(sorted((int(conn[fa]), int(conn[fb]), int(conn[fc]))))
            counts[key] = counts.get(key, 0) + 1
    return {key for key, cnt in counts.items() if cnt == 1}


def _orient_positive(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Swap the last two nodes of any negatively oriented tet."""
    elements = np.array(elements, dtype=np.int64)
    if elements.size == 0:
        raise MeshError("empty mesh")
    if elements.min() < 0 or elements.max() >= len(nodes):
        raise MeshError("element connectivity references out-of-range node")
    vols = signed_volumes(nodes, elements)
    flip = vols < 0.0
    elements[flip, 2], elements[flip, 3] = (
        elements[flip, 3].copy(),
        elements[flip, 2].copy(),
    )
    return elements


def generate_box_mesh(nx: int, ny: int, nz: int, dims) -> Mesh:
    """Structured box mesh: nx*ny*nz hex cells, each split into six tets.

    The subdivision uses the Kuhn pattern (all six tets share the cell's main
    diagonal), which makes adjacent cells conforming and gives every tet a
    volume of exactly one sixth of the cell. Facet sets and node sets named
    "x-", "x+", "y-", "y+", "z-", "z+" are created for the six box faces.
    All elements are tagged "design".
    """
    if min(nx, ny, nz) < 1:
        raise MeshError(f"subdivisions must be >= 1, got ({nx}, {ny}, {nz})")
    lx, ly, lz = (float(d) for d in dims)
    if min(lx, ly, lz) <= 0.0:
        raise MeshError(f"box dimensions must be positive, got {dims}")

    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    zs = np.linspace(0.0, lz, nz + 1)

    def nid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    nodes = np.empty(((nx + 1) * (ny + 1) * (nz + 1), 3))
    for k, z in enumerate(zs):
        for j, y in enumerate(ys):
            for i, x in enumerate(xs):
                nodes[nid(i, j, k)] = (x, y, z)

    perms = sorted(itertools.permutations(range(3)))
    elements = []
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                for perm in perms:
                    corner = [i, j, k]
                    conn = [nid(*corner)]
                    for axis in perm:
                        corner = corner.copy()
                        corner[axis] += 1
                        conn.append(nid(*corner))
                    elements.append(conn)
    elements = _orient_positive(nodes, np.array(elements, dtype=np.int64))

    facet_sets = _box_face_sets(nodes, elements, (lx, ly, lz))
    node_sets = {tag: np.unique(tris) for tag, tris in facet_sets.items()}
    regions = np.full(len(elements), DESIGN)
    return Mesh(nodes, elements, regions, facet_sets, node_sets)


def _box_face_sets(nodes, elements, dims) -> dict[str, np.ndarray]:
    """Classify boundary triangles of an axis-aligned box by face plane."""
    bounds = [(0, 0.0), (0, dims[0]), (1, 0.0), (1, dims[1]), (2, 0.0), (2, dims[2])]
    tris_by_tag: dict[str, list] = {tag: [] for tag in BOX_FACE_TAGS}
    boundary = boundary_faces(elements)
    for tri in sorted(boundary):
        coords = nodes[list(tri)]
        for tag, (axis, value) in zip(BOX_FACE_TAGS, bounds):
            if np.all(coords[:, axis] == value):
                tris_by_tag[tag].append(tri)
                break
    return {
        tag: np.array(tris, dtype=np.int64).reshape(-1, 3)
        for tag, tris in tris_by_tag.items()
    }


def tag_passive_box(mesh: Mesh, box) -> Mesh:
    """Return a copy with elements whose centroid falls inside ``box`` tagged passive.

    ``box`` is (x0, y0, z0, x1, y1, z1) with inclusive bounds.
    """
    x0, y0, z0, x1, y1, z1 = (float(v) for v in box)
    cen = element_centroids(mesh)
    inside = (
        (cen[:, 0] >= x0)
        & (cen[:, 0] <= x1)
        & (cen[:, 1] >= y0)
        & (cen[:, 1] <= y1)
        & (cen[:, 2] >= z0)
        & (cen[:, 2] <= z1)
    )
    regions = np.where(inside, PASSIVE, mesh.regions)
    return Mesh(
        mesh.nodes.copy(),
        mesh.elements.copy(),
        regions,
        {t: v.copy() for t, v in mesh.facet_sets.items()},
        {t: v.copy() for t, v in mesh.node_sets.items()},
    )


# ---------------------------------------------------------------------------
# filter graph


@dataclass(eq=False)
class FilterGraph:
    """Row-normalized cone-weight neighborhood graph over design elements.

    ``weights[a, b]`` is the normalized weight of design element
    ``design_elements[b]`` in the filtered value of ``design_elements[a]``;
    raw weights are max(0, radius - centroid distance), so the graph is
    structurally symmetric and every row sums to one. ``radius = 0``
    degenerates to the identity.
    """

    design_elements: np.ndarray  # (d,) global element indices, ascending
    weights: sp.csr_matrix  # (d, d)
    radius: float

    @property
    def n_design(self) -> int:
        return len(self.design_elements)

    def apply(self, theta_design: np.ndarray) -> np.ndarray:
        return self.weights @ theta_design

    def apply_transpose(self, values: np.ndarray) -> np.ndarray:
        return self.weights.T @ values


def build_filter_graph(mesh: Mesh, radius: float) -> FilterGraph:
    if radius < 0:
        raise MeshError(f"filter radius must be >= 0, got {radius}")
    design = np.flatnonzero(mesh.design_mask)
    if len(design) == 0:
        raise MeshError("mesh has no design elements")
    d = len(design)
    if radius == 0.0:
        return FilterGraph(design, sp.identity(d, format="csr"), 0.0)

    centroids = element_centroids(mesh)[design]
    pairs = cKDTree(centroids).query_pairs(radius, output_type="ndarray")
    if len(pairs):
        dist = np.linalg.norm(centroids[pairs[:, 0]] - centroids[pairs[:, 1]], axis=1)
        w = radius - dist
        keep = w > 0.0
        pairs, w = pairs[keep], w[keep]
    else:
        w = np.zeros(0)
    rows = np.concatenate([np.arange(d), pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([np.arange(d), pairs[:, 1], pairs[:, 0]])
    vals = np.concatenate([np.full(d, radius), w, w])
    weights = sp.coo_matrix((vals, (rows, cols)), shape=(d, d)).tocsr()
    row_sums = np.asarray(weights.sum(axis=1)).ravel()
    weights = sp.diags(1.0 / row_sums) @ weights
    return FilterGraph(design, weights.tocsr(), float(radius))


# ---------------------------------------------------------------------------
# loads


def _triangle_areas(nodes: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p = nodes[tris]
    cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def distribute_load(mesh: Mesh, facet_tag: str, total_force) -> dict[int, np.ndarray]:
    """Spread a total force over a facet set, area-proportionally.

    Each triangle takes (area / total area) of the total force and passes one
    third to each of its nodes. Conservation is exact: compensated summation
    (math.fsum) of the nodal contributions reproduces the requested total
    bit-exactly, with the rounding residual folded into the node carrying the
    largest area weight.
    """
    if facet_tag not in mesh.facet_sets:
        raise MeshError(f"unknown facet set {facet_tag!r}")
    tris = mesh.facet_sets[facet_tag]
    if len(tris) == 0:
        raise MeshError(f"facet set {facet_tag!r} is empty")
    total_force = np.asarray(total_force, dtype=float).reshape(3)

    areas = _triangle_areas(mesh.nodes, tris)
    total_area = areas.sum()
    if total_area <= 0.0:
        raise MeshError(f"facet set {facet_tag!r} has zero total area")

    node_ids = np.unique(tris)
    weight = np.zeros(len(node_ids))
    pos = {int(n): idx for idx, n in enumerate(node_ids)}
    for tri, area in zip(tris, areas):
        for n in tri:
            weight[pos[int(n)]] += area / 3.0

    forces = (weight / total_area)[:, None] * total_force[None, :]
    _fold_residual_exact(forces, int(np.argmax(weight)), total_force)
    return {int(n): forces[idx] for idx, n in enumerate(node_ids)}


def _fold_residual_exact(forces: np.ndarray, target: int, total: np.ndarray) -> None:
    """Absorb float rounding so the exact sum of contributions is ``total``.

    Replaces the target row by total minus the compensated (math.fsum) sum of
    the others; the fsum of all rows then rounds to ``total`` bit-exactly
    because the leftover error is below an ulp of the residual itself.
    """
    for c in range(3):
        forces[target, c] = math.fsum(
            [total[c]] + [-forces[i, c] for i in range(len(forces)) if i != target]
        )


# ---------------------------------------------------------------------------
# file I/O


def load_mesh(path, fmt: str) -> Mesh:
    """Read a mesh file in "native_json" or "gmsh_ascii_v2" format.

    Negatively oriented tets are repaired by swapping two node indices; all
    other invariant violations raise MeshError.
    """
    if fmt == "native_json":
        return _load_native_json(path)
    if fmt == "gmsh_ascii_v2":
        return _load_gmsh_v2(path)
    raise MeshError(f"unknown mesh format {fmt!r}")


def save_mesh(mesh: Mesh, path, fmt: str) -> None:
    if fmt == "native_json":
        _save_native_json(mesh, path)
    elif fmt == "gmsh_ascii_v2":
        _save_gmsh_v2(mesh, path)
    else:
        raise MeshError(f"unknown mesh format {fmt!r}")


def _load_native_json(path) -> Mesh:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MeshError(f"malformed JSON mesh file {path}: {exc}") from exc
    try:
        if not doc.get("nodes") or not doc.get("elements"):
            raise MeshError(f"{path}: empty mesh")
        nodes = np.array(doc["nodes"], dtype=float).reshape(-1, 3)
        conn = np.array([e["conn"] for e in doc["elements"]], dtype=np.int64)
        regions = np.array([e.get("region", DESIGN) for e in doc["elements"]])
        facet_sets = {
            tag: np.array(tris, dtype=np.int64).reshape(-1, 3)
            for tag, tris in doc.get("facet_sets", {}).items()
        }
        node_sets = {
            tag: np.array(ids, dtype=np.int64)
            for tag, ids in doc.get("node_sets", {}).items()
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise MeshError(f"malformed mesh document {path}: {exc}") from exc
    conn = _orient_positive(nodes, conn)
    return Mesh(nodes, conn, regions, facet_sets, node_sets)


def _save_native_json(mesh: Mesh, path) -> None:
    doc = {
        "nodes": mesh.nodes.tolist(),
        "elements": [
            {"conn": conn.tolist(), "region": str(region)}
            for conn, region in zip(mesh.elements, mesh.regions)
        ],
        "facet_sets": {
            tag: mesh.facet_sets[tag].tolist() for tag in sorted(mesh.facet_sets)
        },
        "node_sets": {
            tag: mesh.node_sets[tag].tolist() for tag in sorted(mesh.node_sets)
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _save_gmsh_v2(mesh: Mesh, path) -> None:
    facet_tags = sorted(mesh.facet_sets)
    phys_of_facet = {tag: i + 1 for i, tag in enumerate(facet_tags)}
    region_names = sorted(set(mesh.regions.tolist()))
    phys_of_region = {
        name: len(facet_tags) + i + 1 for i, name in enumerate(region_names)
    }
    lines = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$PhysicalNames",
             str(len(phys_of_facet) + len(phys_of_region))]
    for tag in facet_tags:
        lines.append(f'2 {phys_of_facet[tag]} "{tag}"')
    for name in region_names:
        lines.append(f'3 {phys_of_region[name]} "{name}"')
    lines += ["$EndPhysicalNames", "$Nodes", str(mesh.n_nodes)]
    for i, (x, y, z) in enumerate(mesh.nodes, start=1):
        lines.append(f"{i} {float(x)!r} {float(y)!r} {float(z)!r}")
    n_tris = sum(len(t) for t in mesh.facet_sets.values())
    lines += ["$EndNodes", "$Elements", str(n_tris + mesh.n_elements)]
    eid = 1
    for tag in facet_tags:
        phys = phys_of_facet[tag]
        for a, b, c in mesh.facet_sets[tag]:
            lines.append(f"{eid} 2 2 {phys} {phys} {a + 1} {b + 1} {c + 1}")
            eid += 1
    for conn, region in zip(mesh.elements, mesh.regions):
        phys = phys_of_region[str(region)]
        a, b, c, d = (int(v) + 1 for v in conn)
        lines.append(f"{eid} 4 2 {phys} {phys} {a} {b} {c} {d}")
        eid += 1
    lines.append("$EndElements")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _load_gmsh_v2(path) -> Mesh:
    with open(path, encoding="utf-8") as fh:
        raw_lines = [ln.strip() for ln in fh]

    sections: dict[str, list[str]] = {}
    current = None
    for ln in raw_lines:
        if not ln:
            continue
        if ln.startswith("$End"):
            current = None
        elif ln.startswith("$"):
            current = ln[1:]
            sections[current] = []
        elif current is not None:
            sections[current].append(ln)

    if "MeshFormat" not in sections or "Nodes" not in sections or "Elements" not in sections:
        raise MeshError(f"{path}: missing $MeshFormat/$Nodes/$Elements section")
    version = sections["MeshFormat"][0].split()[0]
    if not version.startswith("2."):
        raise MeshError(f"{path}: unsupported Gmsh format version {version}")

    phys_names: dict[int, str] = {}
    for ln in sections.get("PhysicalNames", [])[1:]:
        parts = ln.split(maxsplit=2)
        phys_names[int(parts[1])] = parts[2].strip().strip('"')

    try:
        node_lines = sections["Nodes"]
        n_nodes = int(node_lines[0])
        ids = np.empty(n_nodes, dtype=np.int64)
        nodes = np.empty((n_nodes, 3))
        for row, ln in enumerate(node_lines[1 : 1 + n_nodes]):
            parts = ln.split()
            ids[row] = int(parts[0])
            nodes[row] = [float(parts[1]), float(parts[2]), float(parts[3])]
    except (IndexError, ValueError) as exc:
        raise MeshError(f"{path}: malformed $Nodes section: {exc}") from exc
    index_of = {int(i): row for row, i in enumerate(ids)}

    conn, regions, facet_sets = [], [], {}
    try:
        elem_lines = sections["Elements"]
        n_elem = int(elem_lines[0])
        for ln in elem_lines[1 : 1 + n_elem]:
            parts = [int(v) for v in ln.split()]
            etype, ntags = parts[1], parts[2]
            tags = parts[3 : 3 + ntags]
            node_ids = parts[3 + ntags :]
            phys = tags[0] if tags else 0
            if etype == 2:
                tri = [index_of[i] for i in node_ids[:3]]
                name = phys_names.get(phys, f"surface_{phys}")
                facet_sets.setdefault(name, []).append(tri)
            elif etype == 4:
                conn.append([index_of[i] for i in node_ids[:4]])
                regions.append(
                    PASSIVE if phys_names.get(phys, "") == PASSIVE else DESIGN
                )
            else:
                raise MeshError(
                    f"{path}: unsupported element type {etype} "
                    "(only tets and boundary triangles accepted)"
                )
    except (IndexError, ValueError) as exc:
        raise MeshError(f"{path}: malformed $Elements section: {exc}") from exc
    except KeyError as exc:
        raise MeshError(f"{path}: element references unknown node {exc}") from exc

    if not conn:
        raise MeshError(f"{path}: no tetrahedral elements found")
    conn = _orient_positive(nodes, np.array(conn, dtype=np.int64))
    facet_arrays = {
        tag: np.array(tris, dtype=np.int64) for tag, tris in facet_sets.items()
    }
    return Mesh(nodes, conn, np.array(regions), facet_arrays, {})


# ---------------------------------------------------------------------------
# VTK export


def export_vtk(mesh: Mesh, path, point_vectors=None, cell_scalars=None) -> None:
    """Write a legacy ASCII VTK unstructured grid (cell type 10).

    ``point_vectors`` maps field names to (n_nodes, 3) arrays, ``cell_scalars``
    maps names to (n_elements,) arrays. Output bytes are deterministic for
    identical inputs; floats are printed with 9 significant digits.
    """
    point_vectors = dict(point_vectors or {})
    cell_scalars = dict(cell_scalars or {})
    for name, arr in point_vectors.items():
        if np.asarray(arr).shape != (mesh.n_nodes, 3):
            raise MeshError(
                f"point field {name!r} must have shape ({mesh.n_nodes}, 3)"
            )
    for name, arr in cell_scalars.items():
        if np.asarray(arr).reshape(-1).shape != (mesh.n_elements,):
            raise MeshError(
                f"cell field {name!r} must have {mesh.n_elements} values"
            )

    def f(x):
        return f"{float(x):.9g}"

    lines = [
        "# vtk DataFile Version 3.0",
        "topofill mesh",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_nodes} double",
    ]
    lines += [" ".join(f(v) for v in xyz) for xyz in mesh.nodes]
    lines.append(f"CELLS {mesh.n_elements} {5 * mesh.n_elements}")
    lines += ["4 " + " ".join(str(int(v)) for v in conn) for conn in mesh.elements]
    lines.append(f"CELL_TYPES {mesh.n_elements}")
    lines += ["10"] * mesh.n_elements

    if point_vectors:
        lines.append(f"POINT_DATA {mesh.n_nodes}")
        for name in point_vectors:
            lines.append(f"VECTORS {name} double")
            lines += [
                " ".join(f(v) for v in vec) for vec in np.asarray(point_vectors[name])
            ]
    if cell_scalars:
        lines.append(f"CELL_DATA {mesh.n_elements}")
        for name in cell_scalars:
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines += [f(v) for v in np.asarray(cell_scalars[name]).reshape(-1)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
