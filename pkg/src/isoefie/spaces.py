"""Div-conforming spline space on a multipatch surface and its superspace map.

Every function of the global space is stored through its coefficients in the
element-wise discontinuous superspace: on each leaf element, both components
of the reference field (the iota_1 pullback to patch coordinates) are tensor
Bernstein polynomials of degree ``p``. The sparse matrix ``T`` maps global
spline coefficients to those superspace coefficients.

Superspace indexing: ``((alpha * n_elements + e) * L + l)`` with element
``e = patch * 4**m + k`` and local index ``l = a1 * (p + 1) + a2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .bspline import KnotVector, basis_matrix, bernstein, local_bernstein_coefficients
from .geometry import EAST, NORTH, SOUTH, WEST, MultipatchGeometry, element_offsets


class TopologyError(ValueError):
    pass


def reduced_knots(kv: KnotVector) -> KnotVector:
    """Knot vector of degree p - 1 on the same breakpoints (first and last knot dropped)."""
    return KnotVector(kv.degree - 1, kv.knots[1:-1])


@dataclass(frozen=True)
class SuperSpace:
    n_patches: int
    degree: int
    level: int

    @property
    def n_local(self) -> int:
        return (self.degree + 1) ** 2

    @property
    def elements_per_patch(self) -> int:
        return 4**self.level

    @property
    def n_elements(self) -> int:
        return self.n_patches * self.elements_per_patch

    @property
    def dim(self) -> int:
        return 2 * self.n_elements * self.n_local

    def index(self, alpha: int, element: int, local: int) -> int:
        return (alpha * self.n_elements + element) * self.n_local + local

    def element_of(self, patch: int, k: int) -> int:
        return patch * self.elements_per_patch + k

    def element_patches(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_patches), self.elements_per_patch)

    def element_offsets(self) -> np.ndarray:
        """Lower-left patch coordinates of each element (all patches)."""
        off = element_offsets(self.level) / 2**self.level
        return np.tile(off, (self.n_patches, 1))

    @property
    def h(self) -> float:
        return 2.0**-self.level


def _patch_component_transform(C_a: np.ndarray, C_b: np.ndarray, level: int) -> sp.csr_matrix:
    """Kronecker transform of one component, rows reordered to (k, a1, a2)."""
    ne, q1, d1 = C_a.shape
    _, q2, d2 = C_b.shape
    A = sp.csr_matrix(C_a.reshape(ne * q1, d1))
    B = sp.csr_matrix(C_b.reshape(ne * q2, d2))
    K = sp.kron(A, B, format="csr")   # rows (e1, a1, e2, a2)
    off = element_offsets(level)
    e1, e2 = off[:, 0], off[:, 1]
    a1 = np.arange(q1)
    a2 = np.arange(q2)
    rows = ((e1[:, None, None] * q1 + a1[None, :, None]) * ne * q2
            + e2[:, None, None] * q2 + a2[None, None, :])
    return K[rows.ravel()]


def build_patchlocal_transform(p: int, m: int) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Per-patch maps from spline coefficients to superspace coefficients.

    Returns ``(T0, T1)`` for the two reference components. The first
    component lives in ``S^{p, p-1}``, the second in ``S^{p-1, p}``; local
    spline DOFs are flattened as ``j1 * dim2 + j2``. Each row block is ordered
    by element ``k`` then local Bernstein index.
    """
    if p < 1:
        raise ValueError("div-conforming space needs p >= 1")
    kv = KnotVector.uniform(p, m)
    kvr = reduced_knots(kv)
    Cp = local_bernstein_coefficients(kv, p)
    Cr = local_bernstein_coefficients(kvr, p)
    return _patch_component_transform(Cp, Cr, m), _patch_component_transform(Cr, Cp, m)


@dataclass
class TransformationMatrix:
    T: sp.csr_matrix            # superspace x global
    T_local: sp.csr_matrix      # superspace x patch-local DOFs
    T_glue: sp.csr_matrix       # patch-local DOFs x global
    superspace: SuperSpace
    local_dims: tuple[int, int]  # (dim of S^p, dim of S^{p-1}) in one direction

    @property
    def dim(self) -> int:
        return self.T.shape[1]

    @property
    def dofs_real(self) -> int:
        return 2 * self.dim

    def to_superspace(self, coeffs):
        return self.T @ coeffs

    def export_triplets(self, path) -> None:
        coo = self.T.tocoo()
        with open(path, "w") as fh:
            fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {v!r}\n")


def _local_dof_layout(n_patches: int, dp: int, dr: int):
    # patch-local DOF numbering: (patch, alpha, j1, j2) with component shapes
    # (dp, dr) for alpha = 0 and (dr, dp) for alpha = 1
    per_comp = dp * dr
    per_patch = 2 * per_comp

    def index(patch, alpha, j1, j2):
        if alpha == 0:
            return patch * per_patch + j1 * dr + j2
        return patch * per_patch + per_comp + j1 * dp + j2

    return per_patch, index


def _edge_dofs(edge: int, dp: int, dr: int):
    """(alpha, list of (j1, j2) along the edge parameter, outward sign)."""
    t = range(dr)
    if edge == WEST:
        return 0, [(0, j) for j in t], -1
    if edge == EAST:
        return 0, [(dp - 1, j) for j in t], 1
    if edge == SOUTH:
        return 1, [(j, 0) for j in t], -1
    return 1, [(j, dp - 1) for j in t], 1


def build_continuity_glue(geometry: MultipatchGeometry, p: int, m: int,
                          allow_open: bool = False) -> sp.csr_matrix:
    """Sparse +-1 matrix identifying normal-component DOFs across interfaces.

    Open surfaces are rejected unless ``allow_open``; their boundary DOFs stay free.
    """
    if not (geometry.closed or allow_open):
        raise TopologyError("continuity glue requires a closed surface")
    dp = 2**m + p
    dr = 2**m + p - 1
    N = geometry.n_patches
    per_patch, index = _local_dof_layout(N, dp, dr)
    n_local = N * per_patch
    master = np.arange(n_local)
    sign = np.ones(n_local)
    for iface in geometry.interfaces:
        alpha_a, dofs_a, sa = _edge_dofs(iface.edge_a, dp, dr)
        alpha_b, dofs_b, sb = _edge_dofs(iface.edge_b, dp, dr)
        if iface.reversed:
            dofs_b = dofs_b[::-1]
        for (ja, jb) in zip(dofs_a, dofs_b):
            ia = index(iface.patch_a, alpha_a, *ja)
            ib = index(iface.patch_b, alpha_b, *jb)
            # interface lists the lower patch index first; it keeps its sign
            master[ib] = ia
            sign[ib] = -sa * sb
    is_master = master == np.arange(n_local)
    global_id = np.cumsum(is_master) - 1
    cols = global_id[master]
    return sp.csr_matrix((sign, (np.arange(n_local), cols)), shape=(n_local, int(is_master.sum())))


def assemble_T(geometry: MultipatchGeometry, p: int, m: int,
               allow_open: bool = False) -> TransformationMatrix:
    ss = SuperSpace(geometry.n_patches, p, m)
    T0, T1 = build_patchlocal_transform(p, m)
    N = geometry.n_patches
    dp, dr = 2**m + p, 2**m + p - 1
    per_comp = dp * dr
    # superspace rows are alpha-major; local columns are patch-major
    nrow_patch = ss.elements_per_patch * ss.n_local
    rows, cols, vals = [], [], []
    for alpha, Ta in enumerate((T0, T1)):
        coo = Ta.tocoo()
        for i in range(N):
            rows.append(coo.row + (alpha * N + i) * nrow_patch)
            cols.append(coo.col + i * 2 * per_comp + alpha * per_comp)
            vals.append(coo.data)
    T_local = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(ss.dim, N * 2 * per_comp))
    T_local.eliminate_zeros()
    T_glue = build_continuity_glue(geometry, p, m, allow_open)
    T = (T_local @ T_glue).tocsr()
    T.eliminate_zeros()
    return TransformationMatrix(T, T_local, T_glue, ss, (dp, dr))


# ------------------------------------------------------------- evaluation

def local_basis(p: int, u: np.ndarray):
    """Tensor Bernstein values and gradients at local points ``u`` (..., 2).

    Returns ``B`` (..., L) and ``dB`` (..., L, 2) with respect to ``u``.
    """
    b1, b2 = bernstein(p, u[..., 0]), bernstein(p, u[..., 1])
    d1, d2 = bernstein(p, u[..., 0], 1), bernstein(p, u[..., 1], 1)
    shape = u.shape[:-1] + ((p + 1) ** 2,)
    B = (b1[..., :, None] * b2[..., None, :]).reshape(shape)
    dB = np.stack([(d1[..., :, None] * b2[..., None, :]).reshape(shape),
                   (b1[..., :, None] * d2[..., None, :]).reshape(shape)], axis=-1)
    return B, dB


def superspace_reference_field(ss: SuperSpace, x_super: np.ndarray, elements, u):
    """Reference field and reference divergence (patch coordinates).

    ``elements`` (n,) and ``u`` (n, 2) local coordinates. Returns
    ``(fhat (n, 2), divhat (n,))``.
    """
    elements = np.asarray(elements)
    u = np.asarray(u, dtype=float)
    X = np.asarray(x_super).reshape(2, ss.n_elements, ss.n_local)
    B, dB = local_basis(ss.degree, u)
    c0 = X[0, elements]
    c1 = X[1, elements]
    fhat = np.stack([np.sum(B * c0, axis=-1), np.sum(B * c1, axis=-1)], axis=-1)
    scale = 2.0**ss.level
    div = scale * (np.sum(dB[..., 0] * c0, axis=-1) + np.sum(dB[..., 1] * c1, axis=-1))
    return fhat, div


def push_forward(fhat, divhat, d1, d2):
    """Surface field and surface divergence from reference quantities."""
    tau = np.linalg.norm(np.cross(d1, d2), axis=-1)
    field = (fhat[..., 0:1] * d1 + fhat[..., 1:2] * d2) / tau[..., None]
    return field, divhat / tau


def element_points(ss: SuperSpace, elements, u):
    """Patch ids and patch coordinates of local points on leaf elements."""
    elements = np.asarray(elements)
    off = ss.element_offsets()[elements]
    return ss.element_patches()[elements], off + ss.h * np.asarray(u, dtype=float)


def eval_discrete_field(geometry: MultipatchGeometry, Tm: TransformationMatrix, coeffs,
                        elements, u):
    """Surface field (n, 3) and surface divergence (n,) of a global coefficient vector."""
    ss = Tm.superspace
    x_super = Tm.T @ np.asarray(coeffs)
    fhat, divhat = superspace_reference_field(ss, x_super, elements, u)
    pid, s = element_points(ss, elements, u)
    _, d1, d2 = geometry.evaluate(pid, s)
    return push_forward(fhat, divhat, d1, d2)


def spline_reference_field(Tm: TransformationMatrix, p: int, m: int, coeffs, patch: int, s):
    """Reference field evaluated directly from B-splines (independent of ``T_local``)."""
    dp, dr = Tm.local_dims
    local = Tm.T_glue @ np.asarray(coeffs)
    per_comp = dp * dr
    c0 = local[patch * 2 * per_comp: patch * 2 * per_comp + per_comp].reshape(dp, dr)
    c1 = local[patch * 2 * per_comp + per_comp: (patch + 1) * 2 * per_comp].reshape(dr, dp)
    kv = KnotVector.uniform(p, m)
    kvr = reduced_knots(kv)
    s = np.atleast_2d(s)
    Bp1, Br1 = basis_matrix(kv, s[:, 0]), basis_matrix(kvr, s[:, 0])
    Bp2, Br2 = basis_matrix(kv, s[:, 1]), basis_matrix(kvr, s[:, 1])
    dBp1, dBp2 = basis_matrix(kv, s[:, 0], 1), basis_matrix(kv, s[:, 1], 1)
    f0 = np.einsum("ni,ij,nj->n", Bp1, c0, Br2)
    f1 = np.einsum("ni,ij,nj->n", Br1, c1, Bp2)
    div = np.einsum("ni,ij,nj->n", dBp1, c0, Br2) + np.einsum("ni,ij,nj->n", Br1, c1, dBp2)
    return np.stack([f0, f1], axis=-1), div


def locate(ss: SuperSpace, patch: int, s):
    """Leaf element and local coordinates of patch points ``s`` (n, 2)."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    n = 2**ss.level
    ij = np.minimum((s * n).astype(np.int64), n - 1)
    off = element_offsets(ss.level)
    lookup = np.empty((n, n), dtype=np.int64)
    lookup[off[:, 0], off[:, 1]] = np.arange(off.shape[0])
    k = lookup[ij[:, 0], ij[:, 1]]
    u = s * n - ij
    return patch * ss.elements_per_patch + k, u


def interpolate_reference_field(ss: SuperSpace, fun) -> np.ndarray:
    """Superspace coefficients of an element-wise polynomial reference field.

    ``fun(patch_ids, s)`` returns the reference field (n, 2) at patch
    coordinates; it must be a polynomial of degree <= p on every element for
    the result to be exact.
    """
    p = ss.degree
    g = 0.5 - 0.5 * np.cos(np.pi * (np.arange(p + 1) + 0.5) / (p + 1))
    U = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    B, _ = local_basis(p, U)
    Binv = np.linalg.inv(B)
    off = ss.element_offsets()
    pid = ss.element_patches()
    S = off[:, None, :] + ss.h * U[None, :, :]
    vals = fun(np.repeat(pid, U.shape[0]), S.reshape(-1, 2)).reshape(ss.n_elements, -1, 2)
    X = np.einsum("lq,eqa->ael", Binv, vals)
    return X.reshape(-1)
