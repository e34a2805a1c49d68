# %% [markdown]
# # Compressed operator versus the dense Galerkin matrix
#
# Compares matrix-vector products of the interpolation-based compressed
# operator with the dense superspace matrix on the sphere (p=1, m=2), for
# increasing interpolation degree q. Takes about two minutes and 1 GB.

# %%
import numpy as np

from isoefie.assembly import Discretisation, QuadratureOrders, assemble_dense
from isoefie.geometry import unit_sphere
from isoefie.h2 import build_h2_operator
from isoefie.spaces import assemble_T

sphere = unit_sphere()
disc = Discretisation(sphere, 1, 2)
orders = QuadratureOrders(8, 5)
T = assemble_T(sphere, 1, 2).T
V = assemble_dense(disc, 1.0, orders)
c = np.random.default_rng(3).standard_normal(T.shape[1]).astype(complex)
reference = T.T @ (V @ (T @ c))

# %%
for q in (2, 4, 6, 8, 10):
    op = build_h2_operator(disc, T, 1.0, q, 1.6, orders)
    err = np.linalg.norm(op.matvec(c) - reference) / np.linalg.norm(reference)
    stats = op.stats()
    print(f"q={q:2d} relative error {err:.2e}  far blocks {stats.far_blocks}  "
          f"far storage {stats.far_storage_mb:.1f} MB")
    del op
