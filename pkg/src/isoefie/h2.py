"""Cluster tree, block tree and the H2 far-field representation.

Clusters are the quadtree cells of the patches. On level ``l`` cluster
``c = patch * 4**l + k`` covers the square with lower-left corner
``element_offsets(l)[k] / 2**l`` in the patch domain. Its children are
``patch * 4**(l+1) + 4 k + j`` for ``j = 0..3``.

The far field interpolates the pulled-back kernel in patch coordinates with
tensor Chebyshev nodes of degree ``q`` on every cluster. Both the vector part
and the divergence part of the bilinear form factor through the same node
matrix ``G(F(x_i) - F(y_j))``, so only that matrix is stored per block. Since
it is symmetric under swapping the two clusters, each unordered pair is
stored once and used twice.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import MultipatchGeometry, element_offsets
from .spaces import SuperSpace, local_basis
from .quadrature import gauss_legendre_01

log = logging.getLogger(__name__)


def chebyshev_nodes(q: int) -> np.ndarray:
    """Chebyshev points of the second kind on [0, 1], ``q + 1`` of them."""
    if q == 0:
        return np.array([0.5])
    return 0.5 * (1.0 - np.cos(np.pi * np.arange(q + 1) / q))


def barycentric_weights(q: int) -> np.ndarray:
    w = (-1.0) ** np.arange(q + 1)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def lagrange_matrix(q: int, x: np.ndarray) -> np.ndarray:
    """Values of the ``q + 1`` Lagrange polynomials on the Chebyshev nodes at ``x``.

    Barycentric formula of the second kind, exact at the nodes.
    """
    x = np.asarray(x, dtype=float)
    nodes = chebyshev_nodes(q)
    w = barycentric_weights(q)
    diff = x[:, None] - nodes[None, :]
    hit = diff == 0.0
    diff[hit] = 1.0
    terms = w / diff
    out = terms / terms.sum(axis=1, keepdims=True)
    rows = hit.any(axis=1)
    out[rows] = hit[rows].astype(float)
    return out


def transfer_matrices(q: int) -> np.ndarray:
    """``E[c]`` with ``E[c][j, i] = L_i^parent(node_j^child)`` for the 4 children.

    Child ``c`` occupies the quarter with offset ``element_offsets(1)[c] / 2``.
    Shape (4, (q+1)^2, (q+1)^2), node index ``i1 * (q + 1) + i2``.
    """
    nodes = chebyshev_nodes(q)
    halves = [lagrange_matrix(q, 0.5 * nodes), lagrange_matrix(q, 0.5 + 0.5 * nodes)]
    off = element_offsets(1)
    return np.stack([np.kron(halves[o1], halves[o2]) for o1, o2 in off])


def leaf_moment_matrices(q: int, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Integrals of Lagrange node functions against Bernstein functions on [0,1]^2.

    Returns ``M`` ((q+1)^2, L) with ``M[j, l] = int L_j B_l`` and ``Md``
    (2, (q+1)^2, L) with ``Md[b, j, l] = int L_j d_b B_l`` (local derivative).
    Integrands are polynomials of degree <= q + p per direction, so Gauss
    with ``(q + p) // 2 + 1`` points is exact.
    """
    n = (q + p) // 2 + 1
    x, w = gauss_legendre_01(n)
    U = np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1).reshape(-1, 2)
    W = np.outer(w, w).ravel()
    L1 = lagrange_matrix(q, x)
    Lag = np.einsum("ai,bj->abij", L1, L1).reshape(n * n, -1)
    B, dB = local_basis(p, U)
    M = Lag.T @ (W[:, None] * B)
    Md = np.stack([Lag.T @ (W[:, None] * dB[..., b]) for b in range(2)])
    return M, Md


# ----------------------------------------------------------------- trees

@dataclass
class ClusterTree:
    n_patches: int
    depth: int
    centers: list[np.ndarray]   # per level (n_clusters, 3)
    radii: list[np.ndarray]     # per level (n_clusters,)

    def n_clusters(self, level: int) -> int:
        return self.n_patches * 4**level

    def boxes(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        """Patch ids and lower-left patch coordinates of all clusters on ``level``."""
        off = element_offsets(level) / 2**level
        return (np.repeat(np.arange(self.n_patches), 4**level), np.tile(off, (self.n_patches, 1)))


def build_cluster_tree(geometry: MultipatchGeometry, depth: int, samples: int = 17,
                       inflation: float = 1e-12) -> ClusterTree:
    """Bounding spheres of all quadtree cells down to ``depth``.

    Sphere centres are the centres of the sampled point clouds' bounding
    boxes; radii are the largest sampled distance times ``1 + inflation``.
    """
    t = np.linspace(0.0, 1.0, samples)
    grid = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
    centers, radii = [], []
    for level in range(depth + 1):
        tree = ClusterTree(geometry.n_patches, level, [], [])
        pid, off = tree.boxes(level)
        s = off[:, None, :] + grid[None] / 2**level
        x = geometry.evaluate(np.repeat(pid, grid.shape[0]), s.reshape(-1, 2))[0]
        x = x.reshape(pid.size, -1, 3)
        c = 0.5 * (x.min(axis=1) + x.max(axis=1))
        r = np.linalg.norm(x - c[:, None], axis=-1).max(axis=1)
        centers.append(c)
        radii.append(r * (1.0 + inflation))
    return ClusterTree(geometry.n_patches, depth, centers, radii)


def admissible(tree: ClusterTree, level: int, a: np.ndarray, b: np.ndarray, eta: float) -> np.ndarray:
    """``max(diam) <= eta * dist`` for pairs of clusters on one level."""
    ca, cb = tree.centers[level][a], tree.centers[level][b]
    ra, rb = tree.radii[level][a], tree.radii[level][b]
    dist = np.linalg.norm(ca - cb, axis=-1) - ra - rb
    return (dist > 0.0) & (2.0 * np.maximum(ra, rb) <= eta * dist)


@dataclass
class BlockTree:
    depth: int
    far: list[np.ndarray] = field(default_factory=list)   # per level (n, 2) ordered cluster pairs
    near: np.ndarray = None                                # (n, 2) leaf pairs

    @property
    def n_far(self) -> int:
        return sum(f.shape[0] for f in self.far)

    @property
    def n_near(self) -> int:
        return self.near.shape[0]

    def covered_area(self) -> float:
        """Sum of the patch-domain areas of all blocks (test x trial)."""
        area = self.n_near * 16.0**-self.depth
        for level, f in enumerate(self.far):
            area += f.shape[0] * 16.0**-level
        return area


def build_block_tree(tree: ClusterTree, eta: float) -> BlockTree:
    """Recursive admissible partition of all pairs of patch roots.

    A pair becomes a far block once admissible; inadmissible pairs are
    refined into their 16 child pairs until the leaf level, where they go to
    the near field.
    """
    N = tree.n_patches
    a, b = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    pairs = np.stack([a.ravel(), b.ravel()], axis=-1)
    bt = BlockTree(tree.depth)
    for level in range(tree.depth + 1):
        ok = admissible(tree, level, pairs[:, 0], pairs[:, 1], eta)
        bt.far.append(pairs[ok])
        rest = pairs[~ok]
        if level == tree.depth:
            bt.near = rest
            break
        ca = _children(rest[:, 0])
        cb = _children(rest[:, 1])
        pairs = np.stack([np.repeat(ca, 4, axis=1).ravel(), np.tile(cb, (1, 4)).ravel()], axis=-1)
    return bt


def _children(c: np.ndarray) -> np.ndarray:
    # patch * 4**l + k  ->  patch * 4**(l+1) + 4k + j, which is just 4c + j
    return 4 * c[:, None] + np.arange(4)[None, :]


def interpolation_degree(sigma: float, m: int, c: float = 1.0, q_min: int = 4) -> int:
    """Rate-preserving interpolation degree ``max(q_min, ceil(c (sigma + 1) m))``."""
    return max(q_min, int(np.ceil(c * (sigma + 1) * m)))


# ------------------------------------------------------------- far field

class FarField:
    """Interpolation-based far field on a block tree.

    ``kernels[l]`` holds ``G(F(x_i) - F(y_j))`` for the unordered far blocks
    ``pairs[l]`` (first cluster index smaller) of level ``l``.
    """

    def __init__(self, disc, tree: ClusterTree, blocks: BlockTree, q: int, kappa: float,
                 dtype=np.complex128, chunk: int = 256):
        self.disc = disc
        self.q = q
        self.kappa = kappa
        self.depth = tree.depth
        self.chunk = chunk
        nodes = chebyshev_nodes(q)
        grid = np.stack(np.meshgrid(nodes, nodes, indexing="ij"), axis=-1).reshape(-1, 2)
        self.n_nodes = grid.shape[0]
        self.transfer = transfer_matrices(q)
        self.moments, self.moments_d = leaf_moment_matrices(q, disc.p)
        self.node_x, self.node_d = [], []
        for level in range(tree.depth + 1):
            pid, off = tree.boxes(level)
            s = off[:, None, :] + grid[None] / 2**level
            x, d1, d2 = disc.geometry.evaluate(np.repeat(pid, grid.shape[0]), s.reshape(-1, 2))
            n = pid.size
            self.node_x.append(x.reshape(n, -1, 3))
            self.node_d.append(np.stack([d1.reshape(n, -1, 3), d2.reshape(n, -1, 3)], axis=1))
        self.pairs, self.kernels = [], []
        for level, f in enumerate(blocks.far):
            upper = f[f[:, 0] < f[:, 1]]
            if 2 * upper.shape[0] != f.shape[0]:
                raise ValueError("far field is not symmetric")
            self.pairs.append(upper)
            G = np.empty((upper.shape[0], self.n_nodes, self.n_nodes), dtype=dtype)
            xl = self.node_x[level]
            for sl in _slices(upper.shape[0], chunk):
                xa = xl[upper[sl, 0]]
                xb = xl[upper[sl, 1]]
                r = np.linalg.norm(xa[:, :, None, :] - xb[:, None, :, :], axis=-1)
                G[sl] = np.exp(1j * kappa * r) / (4.0 * np.pi * r)
            self.kernels.append(G)
        self.n_blocks = 2 * sum(p.shape[0] for p in self.pairs)

    # -- storage accounting
    def kernel_bytes(self) -> int:
        return sum(G.nbytes for G in self.kernels)

    def storage_bytes(self) -> int:
        aux = self.transfer.nbytes + self.moments.nbytes + self.moments_d.nbytes
        return self.kernel_bytes() + aux

    # -- transforms
    def leaf_moments(self, x_super: np.ndarray) -> np.ndarray:
        """Moments (n_leaf, Q, 3): two field components and the divergence."""
        ss = self.disc.ss
        X = x_super.reshape(2, ss.n_elements, ss.n_local)
        h2 = ss.h**2
        out = np.empty((ss.n_elements, self.n_nodes, 3), dtype=np.result_type(X, complex))
        for beta in range(2):
            out[:, :, beta] = h2 * (X[beta] @ self.moments.T)
        out[:, :, 2] = (h2 * 2.0**ss.level) * (X[0] @ self.moments_d[0].T + X[1] @ self.moments_d[1].T)
        return out

    def upward(self, leaf: np.ndarray) -> list[np.ndarray]:
        moms = [None] * (self.depth + 1)
        moms[self.depth] = leaf
        for level in range(self.depth - 1, -1, -1):
            child = moms[level + 1].reshape(-1, 4, self.n_nodes, 3)
            moms[level] = np.einsum("jri,cjrk->cik", self.transfer, child)
        return moms

    def downward(self, locs: list[np.ndarray]) -> np.ndarray:
        acc = locs[0]
        for level in range(1, self.depth + 1):
            pushed = np.einsum("jri,cik->cjrk", self.transfer, acc).reshape(-1, self.n_nodes, 3)
            acc = locs[level] + pushed
        return acc

    def leaf_result(self, loc: np.ndarray) -> np.ndarray:
        ss = self.disc.ss
        h2 = ss.h**2
        y = np.empty((2, ss.n_elements, ss.n_local), dtype=loc.dtype)
        for alpha in range(2):
            y[alpha] = h2 * (loc[:, :, alpha] @ self.moments) \
                + (h2 * 2.0**ss.level) * (loc[:, :, 2] @ self.moments_d[alpha])
        return y.reshape(-1)

    def _level_apply(self, level: int, mom: np.ndarray) -> np.ndarray:
        # trial side: 3-vector field at nodes plus divergence moment
        d = self.node_d[level]
        V = np.concatenate([np.einsum("cbnk,cnb->cnk", d, mom[:, :, :2]), mom[:, :, 2:]], axis=2)
        out = np.zeros_like(V)
        pairs, G = self.pairs[level], self.kernels[level]
        for sl in _slices(pairs.shape[0], self.chunk):
            a, b = pairs[sl, 0], pairs[sl, 1]
            Gs = G[sl]
            _accumulate(out, a, np.matmul(Gs, V[b]))
            _accumulate(out, b, np.matmul(Gs.transpose(0, 2, 1), V[a]))
        out[:, :, 3] *= -1.0 / self.kappa**2
        loc = np.empty(mom.shape, dtype=out.dtype)
        loc[:, :, :2] = np.einsum("cank,cnk->cna", d, out[:, :, :3])
        loc[:, :, 2] = out[:, :, 3]
        return loc

    def leaf_block(self, a: int, b: int) -> np.ndarray:
        """Dense (2L, 2L) superspace block of leaf clusters ``a``, ``b`` as the far field sees it."""
        ss = self.disc.ss
        xa, xb = self.node_x[self.depth][a], self.node_x[self.depth][b]
        r = np.linalg.norm(xa[:, None] - xb[None], axis=-1)
        G = np.exp(1j * self.kappa * r) / (4.0 * np.pi * r)
        da, db = self.node_d[self.depth][a], self.node_d[self.depth][b]
        L = ss.n_local
        out = np.empty((2, L, 2, L), dtype=complex)
        for alpha in range(2):
            for beta in range(2):
                metric = da[alpha] @ db[beta].T
                vec = self.moments.T @ (G * metric) @ self.moments
                div = self.moments_d[alpha].T @ G @ self.moments_d[beta]
                out[alpha, :, beta, :] = ss.h**4 * (vec - 4.0**ss.level / self.kappa**2 * div)
        return out.reshape(2 * L, 2 * L)

    def apply(self, x_super: np.ndarray) -> np.ndarray:
        moms = self.upward(self.leaf_moments(x_super))
        locs = [self._level_apply(level, moms[level]) for level in range(self.depth + 1)]
        return self.leaf_result(self.downward(locs))


def _slices(n: int, step: int):
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def _accumulate(out: np.ndarray, index: np.ndarray, values: np.ndarray) -> None:
    # deterministic scatter-add (fixed summation order)
    np.add.at(out, index, values)


@dataclass
class OperatorStats:
    near_blocks: int
    far_blocks: int
    far_storage_mb: float
    near_storage_mb: float
    q: int
    eta: float

    def report(self) -> str:
        return "\n".join(f"{k} = {v}" for k, v in self.__dict__.items())


class H2Operator:
    """``c -> T^T (near + far) T c`` on the global spline coefficients."""

    def __init__(self, T, near, far: FarField, eta: float):
        self.T = T.tocsr()
        self.Tt = self.T.T.tocsr()
        self.near = near
        self.far = far
        self.eta = eta

    @property
    def shape(self) -> tuple[int, int]:
        return (self.T.shape[1], self.T.shape[1])

    def apply_superspace(self, x_super: np.ndarray) -> np.ndarray:
        return self.near @ x_super + self.far.apply(x_super)

    def matvec(self, c: np.ndarray) -> np.ndarray:
        if np.shape(c) != (self.T.shape[1],):
            raise ValueError(f"expected a vector of length {self.T.shape[1]}, got shape {np.shape(c)}")
        return self.Tt @ self.apply_superspace(self.T @ c)

    __matmul__ = matvec

    def stats(self) -> OperatorStats:
        near_mb = (self.near.data.nbytes + self.near.indices.nbytes + self.near.indptr.nbytes) / 1e6
        n_near = self.near.nnz // (2 * self.far.disc.ss.n_local) ** 2
        return OperatorStats(n_near, self.far.n_blocks, self.far.storage_bytes() / 1e6,
                             near_mb, self.far.q, self.eta)


def build_h2_operator(disc, T, kappa: float, q: int, eta: float, orders=None,
                      dtype=np.complex128) -> H2Operator:
    from .assembly import assemble_near_field

    tree = build_cluster_tree(disc.geometry, disc.m)
    blocks = build_block_tree(tree, eta)
    log.info("block tree: %d near, %d far", blocks.n_near, blocks.n_far)
    near = assemble_near_field(disc, kappa, blocks.near, orders)
    far = FarField(disc, tree, blocks, q, kappa, dtype=dtype)
    return H2Operator(T, near, far, eta)
