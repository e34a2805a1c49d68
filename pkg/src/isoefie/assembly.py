"""Galerkin blocks of the electric single layer operator on the superspace.

For a pair of leaf elements the block couples the reference components
``alpha`` and ``beta`` and the local Bernstein functions ``l`` and ``l'``:

    int int G(F(s) - F(t)) [ dF_alpha(s) . dF_beta(t) B_l(s) B_l'(t)
                             - kappa^-2 d_alpha B_l(s) d_beta B_l'(t) ] ds dt

with ``s, t`` patch coordinates. Kernel samples and metric terms depend on
the element pair, the Bernstein products only on the reference quadrature
point, so each ``(alpha, beta)`` part of a batch of blocks is one matrix
product.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import MultipatchGeometry, element_map
from .quadrature import (Adjacency, CORNERS, PairConfiguration, classify_pair, pair_rule,
                         tensor_rule)
from .spaces import SuperSpace, local_basis

log = logging.getLogger(__name__)

FOUR_PI = 4.0 * np.pi


def helmholtz_kernel(kappa: float, r) -> np.ndarray:
    """``exp(i kappa r) / (4 pi r)`` as a function of the distance."""
    r = np.asarray(r, dtype=float)
    if np.any(r == 0.0):
        raise ZeroDivisionError("kernel evaluated at coincident points")
    return np.exp(1j * kappa * r) / (FOUR_PI * r)


def kernel(kappa: float, x, y) -> np.ndarray:
    return helmholtz_kernel(kappa, np.linalg.norm(np.asarray(x) - np.asarray(y), axis=-1))


def localized_kernel(geometry: MultipatchGeometry, kappa: float, test, trial, s, t) -> np.ndarray:
    """Kernel between two clusters in their local coordinates.

    ``test`` and ``trial`` are ``ElementIndex`` tuples; ``s`` and ``t`` (..., 2).
    """
    x = geometry.patches[test.patch](element_map(test)(s))
    y = geometry.patches[trial.patch](element_map(trial)(t))
    return kernel(kappa, x, y)


@dataclass(frozen=True)
class QuadratureOrders:
    separated: int
    singular: int

    @classmethod
    def default(cls, p: int) -> "QuadratureOrders":
        return cls(p + 2, p + 4)


class Discretisation:
    """Geometry plus superspace with the cached per-element data used by assembly."""

    def __init__(self, geometry: MultipatchGeometry, p: int, m: int):
        self.geometry = geometry
        self.ss = SuperSpace(geometry.n_patches, p, m)
        self.offsets = self.ss.element_offsets()
        self.patch_of = self.ss.element_patches()
        self.corners = self.evaluate(np.arange(self.ss.n_elements)[:, None],
                                     np.broadcast_to(CORNERS, (self.ss.n_elements, 4, 2)))[0]
        self.tol = 1e-8 * self.ss.h * max(geometry.bounding_diameter(), 1.0)

    @property
    def p(self) -> int:
        return self.ss.degree

    @property
    def m(self) -> int:
        return self.ss.level

    def evaluate(self, elements, u):
        """Geometry at local points ``u`` (..., 2) of ``elements`` (broadcast)."""
        elements = np.asarray(elements)
        u = np.asarray(u, dtype=float)
        shape = np.broadcast_shapes(elements.shape, u.shape[:-1])
        el = np.broadcast_to(elements, shape)
        s = self.offsets[el] + self.ss.h * np.broadcast_to(u, shape + (2,))
        return self.geometry.evaluate(self.patch_of[el], s)

    def classify(self, a: int, b: int) -> PairConfiguration:
        if a == b:
            return PairConfiguration(Adjacency.IDENTICAL)
        return classify_pair(self.corners[a], self.corners[b], self.tol)


def _basis_products(p: int, scale: float, kappa: float, u, v):
    """Pointwise products of test and trial basis data, shape (M, L*L) each.

    Returns ``K`` with ``B_l(u) B_l'(v)`` and ``D[alpha][beta]`` with
    ``-kappa^-2 d_alpha B_l(u) d_beta B_l'(v)`` (patch-coordinate derivatives).
    """
    Bu, dBu = local_basis(p, u)
    Bv, dBv = local_basis(p, v)
    M = Bu.shape[0]
    K = (Bu[:, :, None] * Bv[:, None, :]).reshape(M, -1)
    c = -scale**2 / kappa**2
    D = [[c * (dBu[:, :, a, None] * dBv[:, None, :, b]).reshape(M, -1) for b in range(2)]
         for a in range(2)]
    return K, D


def _blocks(gw, dots, K, D, L):
    """Combine weighted kernel samples (P, M) and metric terms (P, 2, 2, M) into blocks."""
    P = gw.shape[0]
    out = np.empty((P, 2, L, 2, L), dtype=complex)
    for a in range(2):
        for b in range(2):
            lhs = np.concatenate([gw * dots[:, a, b], gw], axis=1)
            rhs = np.concatenate([K, D[a][b]], axis=0)
            out[:, a, :, b, :] = (lhs @ rhs).reshape(P, L, L)
    return out.reshape(P, 2 * L, 2 * L)


def _paired_blocks(disc: Discretisation, kappa: float, a, b, x_rule, y_rule, w, basis):
    """Blocks for pairs whose quadrature points are matched one-to-one."""
    xa, *da = disc.evaluate(a[:, None], x_rule[None])
    xb, *db = disc.evaluate(b[:, None], y_rule[None])
    r = np.linalg.norm(xa - xb, axis=-1)
    gw = helmholtz_kernel(kappa, r) * (w[None, :] * disc.ss.h**4)
    dots = np.stack([np.stack([np.sum(da[i] * db[j], axis=-1) for j in range(2)], axis=1)
                     for i in range(2)], axis=1)
    return _blocks(gw, dots, *basis, disc.ss.n_local)


def _separated_blocks(disc: Discretisation, kappa: float, a, b, u, w, basis):
    """Blocks for tensor-product rules on both elements (points not paired)."""
    xa, *da = disc.evaluate(a[:, None], u[None])
    xb, *db = disc.evaluate(b[:, None], u[None])
    P, Q = xa.shape[:2]
    r = np.linalg.norm(xa[:, :, None, :] - xb[:, None, :, :], axis=-1)
    gw = helmholtz_kernel(kappa, r) * (w[:, None] * w[None, :] * disc.ss.h**4)
    dots = np.stack([np.stack([np.einsum("pqk,prk->pqr", da[i], db[j]) for j in range(2)], axis=1)
                     for i in range(2)], axis=1)
    return _blocks(gw.reshape(P, Q * Q), dots.reshape(P, 2, 2, Q * Q), *basis, disc.ss.n_local)


def _chunks(n: int, per_item: int, budget: int = 2**27):
    step = max(1, budget // max(per_item, 1))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def assemble_pairs(disc: Discretisation, kappa: float, pairs: np.ndarray,
                   orders: QuadratureOrders | None = None) -> np.ndarray:
    """Blocks (n, 2L, 2L) for element pairs (n, 2), test element first."""
    if kappa <= 0:
        raise ValueError("wavenumber must be positive")
    orders = orders or QuadratureOrders.default(disc.p)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    n2L = 2 * disc.ss.n_local
    out = np.empty((pairs.shape[0], n2L, n2L), dtype=complex)
    groups = defaultdict(list)
    for i, (a, b) in enumerate(pairs):
        groups[disc.classify(a, b)].append(i)
    scale = 2.0**disc.m
    for config, idx in groups.items():
        idx = np.asarray(idx)
        a, b = pairs[idx, 0], pairs[idx, 1]
        if config.kind is Adjacency.SEPARATED:
            u, w = tensor_rule(orders.separated)
            Q = u.shape[0]
            basis = _basis_products(disc.p, scale, kappa, np.repeat(u, Q, axis=0), np.tile(u, (Q, 1)))
            for sl in _chunks(idx.size, Q * Q * 96):
                out[idx[sl]] = _separated_blocks(disc, kappa, a[sl], b[sl], u, w, basis)
        else:
            x, y, w = pair_rule(config, orders.singular)
            basis = _basis_products(disc.p, scale, kappa, x, y)
            for sl in _chunks(idx.size, x.shape[0] * 160):
                out[idx[sl]] = _paired_blocks(disc, kappa, a[sl], b[sl], x, y, w, basis)
    return out


def _scatter(ss: SuperSpace, pairs: np.ndarray, blocks: np.ndarray):
    L = ss.n_local
    E = ss.n_elements
    loc = np.arange(2 * L)
    alpha, ell = loc // L, loc % L

    def glob(e):
        return (alpha[None, :] * E + e[:, None]) * L + ell[None, :]

    gi = glob(pairs[:, 0])
    gj = glob(pairs[:, 1])
    rows = np.broadcast_to(gi[:, :, None], blocks.shape).ravel()
    cols = np.broadcast_to(gj[:, None, :], blocks.shape).ravel()
    return rows, cols, blocks.ravel()


def assemble_near_field(disc: Discretisation, kappa: float, pairs: np.ndarray,
                        orders: QuadratureOrders | None = None) -> sp.csr_matrix:
    """Sparse superspace matrix of the given (symmetric) list of element pairs.

    Only pairs with ``a <= b`` are integrated; the mirrored block is the
    transpose, which holds because kernel and bilinear form are symmetric.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    upper = pairs[pairs[:, 0] <= pairs[:, 1]]
    lower = pairs[pairs[:, 0] > pairs[:, 1]]
    upper_off = {(int(a), int(b)) for a, b in upper if a != b}
    if upper_off != {(int(b), int(a)) for a, b in lower}:
        raise ValueError("pair list is not symmetric")
    blocks = assemble_pairs(disc, kappa, upper, orders)
    r1, c1, v1 = _scatter(disc.ss, upper, blocks)
    off = upper[:, 0] != upper[:, 1]
    r2, c2, v2 = _scatter(disc.ss, upper[off][:, ::-1], blocks[off].transpose(0, 2, 1))
    n = disc.ss.dim
    mat = sp.coo_matrix((np.concatenate([v1, v2]), (np.concatenate([r1, r2]), np.concatenate([c1, c2]))),
                        shape=(n, n))
    return mat.tocsr()


def all_pairs(n: int) -> np.ndarray:
    a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return np.stack([a.ravel(), b.ravel()], axis=-1)


def assemble_dense(disc: Discretisation, kappa: float, orders: QuadratureOrders | None = None,
                   max_dim: int = 20000) -> np.ndarray:
    """Full superspace matrix; reference path for moderate sizes."""
    if disc.ss.dim > max_dim:
        raise MemoryError(f"dense superspace dimension {disc.ss.dim} exceeds cap {max_dim}")
    return assemble_near_field(disc, kappa, all_pairs(disc.ss.n_elements), orders).toarray()
