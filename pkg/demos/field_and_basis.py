"""Generate a synthetic field and inspect the local spectra.

Each high-permeability channel crossing a coarse neighborhood produces one
near-zero eigenvalue; a gap after those indicates how many basis functions
the node needs.

    python3 demos/field_and_basis.py
"""
import numpy as np

from gmsfv.field import default_geometry, gen_channel_field
from gmsfv.mesh import CoarseGrid, FineGrid, neighborhood
from gmsfv.msbasis import ktilde, local_eig, solve_pou

fg = FineGrid(100, 100)
cg = CoarseGrid(fg, 10, 10)
k = gen_channel_field(fg, 1.0, 1e4, geometry=default_geometry(0))
print(k.summary(), end="")
print(f"fraction of high-permeability cells: {np.mean(k.values > 1):.3f}")

kt = ktilde(cg, k, solve_pou(cg, k))
for I, J in ((5, 5), (3, 2), (7, 8)):
    node = int(cg.node(I, J))
    sb = local_eig(neighborhood(cg, node), fg, k, kt, 8)
    print(f"node ({I},{J}): " + " ".join(f"{s:9.3e}" for s in sb.eigenvalues))
