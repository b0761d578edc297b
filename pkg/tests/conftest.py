import hypothesis
import numpy as np
import pytest

import topofill as tf

hypothesis.settings.register_profile(
    "default", deadline=None, max_examples=25
)
hypothesis.settings.load_profile("default")


def canonical(mesh: tf.Mesh):
    """Order-independent fingerprint of a mesh for round-trip comparisons.

    Nodes are sorted lexicographically and elements/facets remapped, so two
    meshes describing the same geometry compare equal regardless of node or
    element ordering. Orientation information is discarded (all valid meshes
    are positively oriented anyway).
    """
    order = np.lexsort((mesh.nodes[:, 2], mesh.nodes[:, 1], mesh.nodes[:, 0]))
    remap = np.empty(mesh.n_nodes, dtype=int)
    remap[order] = np.arange(mesh.n_nodes)
    nodes = tuple(map(tuple, mesh.nodes[order]))
    elements = tuple(
        sorted(
            (tuple(sorted(remap[conn])), str(region))
            for conn, region in zip(mesh.elements, mesh.regions)
        )
    )
    facets = {
        tag: tuple(sorted(tuple(sorted(remap[tri])) for tri in tris))
        for tag, tris in mesh.facet_sets.items()
    }
    node_sets = {
        tag: tuple(sorted(remap[ids])) for tag, ids in mesh.node_sets.items()
    }
    return nodes, elements, facets, node_sets


@pytest.fixture
def unit_tet_mesh():
    nodes = np.array(
        [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    )
    elements = np.array([[0, 1, 2, 3]])
    facets = {"base": np.array([[0, 2, 1]])}
    return tf.Mesh(nodes, elements, np.array(["design"]), facets, {})


def cantilever_case(nx, ny, nz, dims, force=(0.0, 0.0, -450.0)):
    mesh = tf.generate_box_mesh(nx, ny, nz, dims)
    case = tf.LoadCase.build(mesh, [("x-", "xyz")], [("x+", force)])
    return mesh, case
