"""Quadrature on the unit square and on pairs of unit squares.

Pair rules return ``(x, y, w)`` with test points ``x`` (n, 2), trial points
``y`` (n, 2) and weights ``w`` (n,), all in local element coordinates on
[0, 1]^2. The singular rules are regularising substitutions of Sauter-Schwab
type: the weakly singular kernel ``1/|x - y|`` becomes smooth after the
transformation, so plain Gauss-Legendre converges exponentially.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np


class Adjacency(Enum):
    SEPARATED = 0
    VERTEX = 1
    EDGE = 2
    IDENTICAL = 4


@lru_cache(maxsize=None)
def gauss_legendre_01(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n < 1:
        raise ValueError("need at least one point")
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def tensor_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n x n Gauss rule on the unit square, points (n^2, 2)."""
    x, w = gauss_legendre_01(n)
    X = np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1).reshape(-1, 2)
    W = np.outer(w, w).ravel()
    return X, W


def _grid(n: int, dim: int):
    x, w = gauss_legendre_01(n)
    mesh = np.meshgrid(*([x] * dim), indexing="ij")
    wmesh = np.meshgrid(*([w] * dim), indexing="ij")
    pts = [g.ravel() for g in mesh]
    wts = np.prod([g.ravel() for g in wmesh], axis=0)
    return pts, wts


@lru_cache(maxsize=None)
def identical_rule(n: int):
    """Both points on the same square; 8 n^4 points."""
    (rho, eta, xi1, xi2), w0 = _grid(n, 4)
    xs, ys, ws = [], [], []
    for s1 in (1.0, -1.0):
        for s2 in (1.0, -1.0):
            for swap in (False, True):
                a1, a2 = (rho * eta, rho) if swap else (rho, rho * eta)
                z1, z2 = s1 * a1, s2 * a2
                x1 = np.maximum(0.0, -z1) + (1.0 - a1) * xi1
                x2 = np.maximum(0.0, -z2) + (1.0 - a2) * xi2
                xs.append(np.stack([x1, x2], axis=-1))
                ys.append(np.stack([x1 + z1, x2 + z2], axis=-1))
                ws.append(w0 * rho * (1.0 - a1) * (1.0 - a2))
    return _freeze(xs, ys, ws)


@lru_cache(maxsize=None)
def edge_rule(n: int):
    """Squares sharing the edge ``x1 = 0`` / ``y1 = 0`` with ``x2 = y2`` along it; 6 n^4 points."""
    (xi, e1, e2, d), w0 = _grid(n, 4)
    xs, ys, ws = [], [], []
    for sign in (1.0, -1.0):
        for k in range(3):
            c = [xi * e1, xi * e2]
            c.insert(k, xi)
            a, b, zabs = c
            z = sign * zabs
            x2 = np.maximum(0.0, -z) + (1.0 - zabs) * d
            xs.append(np.stack([a, x2], axis=-1))
            ys.append(np.stack([b, x2 + z], axis=-1))
            ws.append(w0 * xi**2 * (1.0 - zabs))
    return _freeze(xs, ys, ws)


@lru_cache(maxsize=None)
def vertex_rule(n: int):
    """Squares sharing the corner (0, 0) of both; 4 n^4 points."""
    (xi, e1, e2, e3), w0 = _grid(n, 4)
    xs, ys, ws = [], [], []
    for k in range(4):
        c = [xi * e1, xi * e2, xi * e3]
        c.insert(k, xi)
        xs.append(np.stack(c[:2], axis=-1))
        ys.append(np.stack(c[2:], axis=-1))
        ws.append(w0 * xi**3)
    return _freeze(xs, ys, ws)


def _freeze(xs, ys, ws):
    x, y, w = np.concatenate(xs), np.concatenate(ys), np.concatenate(ws)
    for a in (x, y, w):
        a.setflags(write=False)
    return x, y, w


# the 8 symmetries of the square, u -> A (u - c) + c with c = (1/2, 1/2)
DIHEDRAL = [np.array(A, dtype=float) for A in (
    [[1, 0], [0, 1]], [[-1, 0], [0, 1]], [[1, 0], [0, -1]], [[-1, 0], [0, -1]],
    [[0, 1], [1, 0]], [[0, -1], [1, 0]], [[0, 1], [-1, 0]], [[0, -1], [-1, 0]],
)]

CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def apply_dihedral(k: int, u: np.ndarray) -> np.ndarray:
    return (np.asarray(u) - 0.5) @ DIHEDRAL[k].T + 0.5


def _find_map(targets: list[int]) -> int:
    # symmetry sending (0,0) -> corner targets[0] and, if given, (0,1) -> targets[1]
    src = CORNERS[[0, 3][: len(targets)]]
    for k in range(8):
        if np.allclose(apply_dihedral(k, src), CORNERS[targets]):
            return k
    raise ValueError("corners are not adjacent")


@dataclass(frozen=True)
class PairConfiguration:
    kind: Adjacency
    map_test: int = 0
    map_trial: int = 0


def classify_pair(corners_test: np.ndarray, corners_trial: np.ndarray, tol: float) -> PairConfiguration:
    """Adjacency of two elements from their 3-D corner points (4, 3) each.

    Corners are listed in the order of ``CORNERS``.
    """
    d = np.linalg.norm(corners_test[:, None, :] - corners_trial[None, :, :], axis=-1)
    ia, ib = np.nonzero(d < tol)
    shared = ia.size
    if shared == 0:
        return PairConfiguration(Adjacency.SEPARATED)
    if shared == 4:
        return PairConfiguration(Adjacency.IDENTICAL)
    if shared == 1:
        return PairConfiguration(Adjacency.VERTEX, _find_map([ia[0]]), _find_map([ib[0]]))
    if shared == 2:
        # shared edge goes to x1 = 0 on both, traversed in the same direction
        return PairConfiguration(Adjacency.EDGE, _find_map(list(ia)), _find_map(list(ib)))
    raise ValueError(f"elements share {shared} corners")


@lru_cache(maxsize=None)
def separated_rule(n: int):
    """Tensor product of two square rules, n^4 points."""
    u, w = tensor_rule(n)
    m = u.shape[0]
    return _freeze([np.repeat(u, m, axis=0)], [np.tile(u, (m, 1))], [np.outer(w, w).ravel()])


def pair_rule(config: PairConfiguration, order: int):
    """Pair rule for the given configuration (singular rules mapped into place)."""
    if config.kind is Adjacency.IDENTICAL:
        return identical_rule(order)
    if config.kind is Adjacency.SEPARATED:
        return separated_rule(order)
    if config.kind is Adjacency.EDGE:
        x, y, w = edge_rule(order)
    elif config.kind is Adjacency.VERTEX:
        x, y, w = vertex_rule(order)
    else:
        raise ValueError(f"unknown adjacency {config.kind!r}")
    return apply_dihedral(config.map_test, x), apply_dihedral(config.map_trial, y), w
