"""Mesh-refinement study on a short cantilever, printed as a table.

Linear tets are stiff in bending, so displacement climbs toward the
converged value as the mesh refines; the last column shows the relative
change between consecutive levels.

    python scripts/mesh_refinement_study.py
"""

import sys
import tempfile
from pathlib import Path

from topofill.cli import run_convergence
from topofill.config import parse_config

CONFIG = """
[mesh.box]
nx = 5
ny = 2
nz = 2
dims = [10.0, 4.0, 4.0]

[materials]
strong = "E-glass"
weak = "PMMA"

[[dirichlet]]
set = "x-"

[[loads]]
facet_set = "x+"
force = [0.0, 0.0, -450.0]

[analysis]
material = "strong"
"""


def run():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "study.toml"
        path.write_text(CONFIG)
        study = run_convergence(parse_config(path), [1, 2, 4, 6, 8])
    print(f"{'level':>6} {'nodes':>8} {'elements':>9} {'max |u| (mm)':>14} "
          f"{'max principal (MPa)':>20} {'change':>8}")
    changes = [None] + study.displacement_changes()
    for i, level in enumerate(study.levels):
        change = "" if changes[i] is None else f"{changes[i]:.2%}"
        print(f"{level:>6} {study.nodes[i]:>8} {study.elements[i]:>9} "
              f"{study.max_displacement[i]:>14.6f} "
              f"{study.max_principal_stress[i]:>20.3f} {change:>8}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
