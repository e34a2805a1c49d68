# %% [markdown]
# # Divergence-conforming spline spaces on the six-patch sphere
#
# Builds the global space as a sparse map into the discontinuous per-element
# superspace and checks the normal-continuity that makes the surface
# divergence well defined. Run with `python notebooks/01_spline_spaces.py`.

# %%
import numpy as np

from isoefie.geometry import unit_sphere
from isoefie.spaces import assemble_T

sphere = unit_sphere()
print(f"{sphere.n_patches} patches, {len(sphere.interfaces)} interfaces, closed={sphere.closed}")

# %% [markdown]
# Dimensions of the global space for a few degrees and levels.

# %%
for p in (1, 2, 3):
    for m in (0, 1, 2):
        Tm = assemble_T(sphere, p, m)
        print(f"p={p} m={m}: complex dofs {Tm.dim:5d} (real {2 * Tm.dim:5d}), superspace {Tm.T.shape[0]:6d}, nnz(T) {Tm.T.nnz}")

# %% [markdown]
# Every global function has vanishing total surface divergence on a closed
# surface. In the superspace this is a linear functional, so it can be
# checked on all basis functions at once.

# %%
from isoefie.quadrature import tensor_rule
from isoefie.spaces import local_basis

Tm = assemble_T(sphere, 2, 2)
ss = Tm.superspace
u, w = tensor_rule(4)
_, dB = local_basis(ss.degree, u)
per_local = np.stack([w @ dB[..., 0], w @ dB[..., 1]]) * 2.0**ss.level * ss.h**2
weights = np.concatenate([np.tile(per_local[0], ss.n_elements), np.tile(per_local[1], ss.n_elements)])
print("max |integral of div| over basis functions:", np.abs(weights @ Tm.T).max())
