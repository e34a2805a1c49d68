"""Univariate and tensor-product B-splines.

Knot vectors are p-open on [0, 1]. Basis functions live on half-open knot
spans, except that the last non-empty span is closed at x = 1 so that the
rightmost function evaluates to one there.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np


@dataclass(frozen=True)
class KnotVector:
    """A p-open knot vector on [0, 1]."""

    degree: int
    knots: np.ndarray = field(repr=False)

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        p = self.degree
        if p < 0:
            raise ValueError("degree must be non-negative")
        if knots.ndim != 1 or knots.size < 2 * (p + 1):
            raise ValueError("need at least 2(p+1) knots")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be non-decreasing")
        if not (np.all(knots[: p + 1] == 0.0) and np.all(knots[-p - 1:] == 1.0)):
            raise ValueError("knot vector must be p-open on [0, 1]")
        _, counts = np.unique(knots[p + 1: knots.size - p - 1], return_counts=True)
        if counts.size and counts.max() > p + 1:
            raise ValueError("interior multiplicity exceeds p + 1")

    @classmethod
    def uniform(cls, degree: int, level: int, multiplicity: int = 1) -> "KnotVector":
        """Equidistant knot vector with ``2**level`` elements."""
        n = 2**level
        interior = np.repeat(np.arange(1, n) / n, multiplicity)
        knots = np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])
        return cls(degree, knots)

    @property
    def dim(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def breakpoints(self) -> np.ndarray:
        return np.unique(self.knots)

    @property
    def n_elements(self) -> int:
        return self.breakpoints.size - 1

    def greville(self) -> np.ndarray:
        """Greville abscissae; interval midpoints for degree zero."""
        p, t = self.degree, self.knots
        if p == 0:
            return 0.5 * (t[:-1] + t[1:])
        return np.array([t[j + 1: j + p + 1].mean() for j in range(self.dim)])

    def find_span(self, x: float) -> int:
        """Index ``j`` with ``knots[j] <= x < knots[j+1]``, closed at the right end."""
        if not 0.0 <= x <= 1.0:
            raise ValueError(f"x = {x} outside [0, 1]")
        p, t = self.degree, self.knots
        if x >= t[-1]:
            # last non-empty span
            return int(np.searchsorted(t, t[-1], side="left")) - 1
        return int(np.searchsorted(t, x, side="right")) - 1

    def span_of_points(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any((x < 0.0) | (x > 1.0)):
            raise ValueError("points outside [0, 1]")
        t = self.knots
        span = np.searchsorted(t, x, side="right") - 1
        last = int(np.searchsorted(t, t[-1], side="left")) - 1
        return np.minimum(span, last)


def _basis_funs(kv: KnotVector, span: int, x: float) -> np.ndarray:
    # Cox-de Boor triangle for the p+1 functions active on ``span``
    p, t = kv.degree, kv.knots
    N = np.zeros(p + 1)
    N[0] = 1.0
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    for j in range(1, p + 1):
        left[j] = x - t[span + 1 - j]
        right[j] = t[span + j] - x
        saved = 0.0
        for r in range(j):
            temp = N[r] / (right[r + 1] + left[j - r])
            N[r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        N[j] = saved
    return N


def eval_basis(kv: KnotVector, x: float) -> tuple[np.ndarray, np.ndarray]:
    """Nonzero basis values at ``x``.

    Returns ``(indices, values)`` for the ``p + 1`` functions whose support
    contains the knot span of ``x``.
    """
    span = kv.find_span(x)
    p = kv.degree
    return np.arange(span - p, span + 1), _basis_funs(kv, span, x)


def eval_basis_derivative(kv: KnotVector, x: float, order: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of the nonzero basis functions at ``x``.

    Orders above the degree give zeros.
    """
    if order < 1:
        raise ValueError("order must be positive")
    span = kv.find_span(x)
    p, t = kv.degree, kv.knots
    idx = np.arange(span - p, span + 1)
    if order > p:
        return idx, np.zeros(p + 1)
    # Piegl & Tiller, algorithm A2.3
    ndu = np.zeros((p + 1, p + 1))
    ndu[0, 0] = 1.0
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    for j in range(1, p + 1):
        left[j] = x - t[span + 1 - j]
        right[j] = t[span + j] - x
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    ders = np.zeros(p + 1)
    a = np.zeros((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, order + 1):
            d = 0.0
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            if k == order:
                ders[r] = d
            s1, s2 = s2, s1
    fac = 1.0
    for k in range(p, p - order, -1):
        fac *= k
    return idx, ders * fac


def basis_matrix(kv: KnotVector, x, order: int = 0) -> np.ndarray:
    """Dense ``(len(x), dim)`` matrix of basis values (or derivatives)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros((x.size, kv.dim))
    for i, xi in enumerate(x):
        if order == 0:
            idx, val = eval_basis(kv, xi)
        else:
            idx, val = eval_basis_derivative(kv, xi, order)
        out[i, idx] = val
    return out


def bernstein(p: int, u, order: int = 0) -> np.ndarray:
    """Bernstein polynomials of degree ``p`` on [0, 1], shape ``(len(u), p+1)``."""
    u = np.asarray(u, dtype=float)
    if order == 0:
        k = np.arange(p + 1)
        coef = np.array([comb(p, j) for j in range(p + 1)], dtype=float)
        return coef * u[..., None] ** k * (1.0 - u[..., None]) ** (p - k)
    if order > p:
        return np.zeros(u.shape + (p + 1,))
    lower = bernstein(p - 1, u, order - 1)
    out = np.zeros(u.shape + (p + 1,))
    out[..., :-1] -= lower
    out[..., 1:] += lower
    return p * out


def _bernstein_interp_points(p: int) -> np.ndarray:
    if p == 0:
        return np.array([0.5])
    return 0.5 - 0.5 * np.cos(np.pi * (np.arange(p + 1) + 0.5) / (p + 1))


def local_bernstein_coefficients(kv: KnotVector, target_degree: int | None = None) -> np.ndarray:
    """Per-element Bernstein coefficients of every B-spline.

    Returns ``C`` of shape ``(n_elements, target_degree + 1, dim)`` such that on
    element ``e`` (local coordinate ``u``) the restriction of ``b_j`` equals
    ``sum_a C[e, a, j] * B_a(u)``. ``target_degree`` defaults to the spline
    degree and may be larger (degree elevation).
    """
    q = kv.degree if target_degree is None else target_degree
    if q < kv.degree:
        raise ValueError("target degree below spline degree")
    bp = kv.breakpoints
    u = _bernstein_interp_points(q)
    V = bernstein(q, u)
    out = np.zeros((bp.size - 1, q + 1, kv.dim))
    for e in range(bp.size - 1):
        x = bp[e] + (bp[e + 1] - bp[e]) * u
        # interior points only, so no endpoint convention is involved
        out[e] = np.linalg.solve(V, basis_matrix(kv, x))
    return out


@dataclass(frozen=True)
class TensorSplineSpace:
    kv1: KnotVector
    kv2: KnotVector

    @property
    def degrees(self) -> tuple[int, int]:
        return self.kv1.degree, self.kv2.degree

    @property
    def dim(self) -> int:
        return self.kv1.dim * self.kv2.dim


@dataclass
class ElementExtraction:
    """Bézier extraction data of one tensor-product element."""

    element: tuple[int, int]
    bounds: tuple[tuple[float, float], tuple[float, float]]
    active: np.ndarray     # flat indices j1 * dim2 + j2 of the active splines
    operator: np.ndarray   # (n_active, (p1+1)*(p2+1)), rows = splines, cols = Bernstein a1*(p2+1)+a2


def bezier_extract(space: TensorSplineSpace) -> list[ElementExtraction]:
    """Element-wise extraction operators from B-splines to Bernstein polynomials."""
    kv1, kv2 = space.kv1, space.kv2
    C1 = local_bernstein_coefficients(kv1)
    C2 = local_bernstein_coefficients(kv2)
    bp1, bp2 = kv1.breakpoints, kv2.breakpoints
    out = []
    for e2 in range(bp2.size - 1):
        for e1 in range(bp1.size - 1):
            act1 = np.flatnonzero(np.abs(C1[e1]).max(axis=0) > 0)
            act2 = np.flatnonzero(np.abs(C2[e2]).max(axis=0) > 0)
            op = np.kron(C1[e1][:, act1].T, C2[e2][:, act2].T)
            active = (act1[:, None] * kv2.dim + act2[None, :]).ravel()
            out.append(ElementExtraction(
                (e1, e2), ((bp1[e1], bp1[e1 + 1]), (bp2[e2], bp2[e2 + 1])), active, op))
    return out


def interpolate_1d(kv: KnotVector, samples) -> np.ndarray:
    """Spline coefficients interpolating ``samples`` at the Greville abscissae."""
    samples = np.asarray(samples)
    g = kv.greville()
    if samples.shape[0] != g.size:
        raise ValueError(f"expected {g.size} samples, got {samples.shape[0]}")
    A = basis_matrix(kv, g)
    assert np.linalg.cond(A) < 1e12, "singular collocation matrix"
    return np.linalg.solve(A, samples)
