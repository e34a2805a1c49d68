"""Multipatch NURBS surfaces, quadtree element indexing and geometry files."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .bspline import KnotVector, TensorSplineSpace, bernstein, bezier_extract

log = logging.getLogger(__name__)

# edge numbering of the reference square; the edge parameter t runs along s1
# for south/north and along s2 for east/west
SOUTH, EAST, NORTH, WEST = 0, 1, 2, 3
EDGE_NAMES = ("south", "east", "north", "west")


class GeometryError(ValueError):
    pass


def edge_points(edge: int, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    z, o = np.zeros_like(t), np.ones_like(t)
    return np.stack({SOUTH: (t, z), EAST: (o, t), NORTH: (t, o), WEST: (z, t)}[edge], axis=-1)


class NurbsPatch:
    """Tensor-product NURBS map of the unit square into R^3."""

    def __init__(self, kv1: KnotVector, kv2: KnotVector, control: np.ndarray, weights: np.ndarray):
        control = np.asarray(control, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if control.shape != (kv1.dim, kv2.dim, 3):
            raise GeometryError(f"control net shape {control.shape} does not match "
                                f"knot vectors ({kv1.dim}, {kv2.dim}, 3)")
        if weights.shape != (kv1.dim, kv2.dim):
            raise GeometryError("weight array does not match control net")
        if np.any(weights <= 0.0):
            raise GeometryError("NURBS weights must be strictly positive")
        self.kv1, self.kv2 = kv1, kv2
        self.control = control
        self.weights = weights
        self.space = TensorSplineSpace(kv1, kv2)
        self._build_bezier()

    def _build_bezier(self):
        p1, p2 = self.space.degrees
        Pw = np.concatenate([self.control * self.weights[..., None], self.weights[..., None]], axis=-1)
        Pw = Pw.reshape(-1, 4)
        self._bp1 = self.kv1.breakpoints
        self._bp2 = self.kv2.breakpoints
        n1, n2 = self._bp1.size - 1, self._bp2.size - 1
        self._nets = np.zeros((n1, n2, p1 + 1, p2 + 1, 4))
        for ex in bezier_extract(self.space):
            e1, e2 = ex.element
            self._nets[e1, e2] = (ex.operator.T @ Pw[ex.active]).reshape(p1 + 1, p2 + 1, 4)

    @property
    def degrees(self) -> tuple[int, int]:
        return self.space.degrees

    def evaluate(self, s: np.ndarray, index: int | None = None):
        """Positions and first derivatives at parameter points ``s`` of shape (..., 2).

        Returns ``(x, d1, d2)``, each of shape (..., 3).
        """
        s = np.asarray(s, dtype=float)
        shape = s.shape[:-1]
        s = s.reshape(-1, 2)
        if np.any(s < -1e-14) or np.any(s > 1 + 1e-14):
            raise GeometryError("parameter outside the unit square")
        s = np.clip(s, 0.0, 1.0)
        p1, p2 = self.degrees
        bp1, bp2 = self._bp1, self._bp2
        e1 = np.clip(np.searchsorted(bp1, s[:, 0], side="right") - 1, 0, bp1.size - 2)
        e2 = np.clip(np.searchsorted(bp2, s[:, 1], side="right") - 1, 0, bp2.size - 2)
        h1 = bp1[e1 + 1] - bp1[e1]
        h2 = bp2[e2 + 1] - bp2[e2]
        u1 = (s[:, 0] - bp1[e1]) / h1
        u2 = (s[:, 1] - bp2[e2]) / h2
        B1, dB1 = bernstein(p1, u1), bernstein(p1, u1, 1) / h1[:, None]
        B2, dB2 = bernstein(p2, u2), bernstein(p2, u2, 1) / h2[:, None]
        if bp1.size == 2 and bp2.size == 2:
            net = self._nets[0, 0].reshape(p1 + 1, -1)
            T = (B1 @ net).reshape(-1, p2 + 1, 4)
            T1 = (dB1 @ net).reshape(-1, p2 + 1, 4)
            H = np.einsum("nb,nbk->nk", B2, T)
            H1 = np.einsum("nb,nbk->nk", B2, T1)
            H2 = np.einsum("nb,nbk->nk", dB2, T)
        else:
            net = self._nets[e1, e2]
            H = np.einsum("na,nb,nabk->nk", B1, B2, net, optimize=True)
            H1 = np.einsum("na,nb,nabk->nk", dB1, B2, net, optimize=True)
            H2 = np.einsum("na,nb,nabk->nk", B1, dB2, net, optimize=True)
        w = H[:, 3:4]
        x = H[:, :3] / w
        d1 = (H1[:, :3] - x * H1[:, 3:4]) / w
        d2 = (H2[:, :3] - x * H2[:, 3:4]) / w
        return x.reshape(shape + (3,)), d1.reshape(shape + (3,)), d2.reshape(shape + (3,))

    def __call__(self, s):
        return self.evaluate(s)[0]


class ElementIndex(NamedTuple):
    """Cluster / element ``(patch, level, k)`` of the quadtree refinement."""

    patch: int
    level: int
    k: int

    def children(self) -> list["ElementIndex"]:
        return [ElementIndex(self.patch, self.level + 1, 4 * self.k + c) for c in range(4)]

    def parent(self) -> "ElementIndex":
        if self.level == 0:
            raise ValueError("root cluster has no parent")
        return ElementIndex(self.patch, self.level - 1, self.k // 4)


# child c of a cluster occupies the sub-square with this lower-left offset
# (counter-clockwise, starting bottom-left)
CHILD_OFFSETS = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])


def element_offsets(level: int) -> np.ndarray:
    """Integer lower-left corners ``(ix, iy)`` of all ``4**level`` sub-squares, by k."""
    off = np.zeros((1, 2), dtype=np.int64)
    for _ in range(level):
        off = (2 * off[:, None, :] + CHILD_OFFSETS[None, :, :]).reshape(-1, 2)
    return off


@dataclass(frozen=True)
class AffineMap:
    """``s = offset + scale * u`` from the reference square to a patch sub-square."""

    offset: np.ndarray
    scale: float

    def __call__(self, u):
        return self.offset + self.scale * np.asarray(u, dtype=float)

    @property
    def jacobian(self) -> np.ndarray:
        return self.scale * np.eye(2)

    def bounds(self):
        lo = self.offset
        return (lo[0], lo[0] + self.scale), (lo[1], lo[1] + self.scale)


def element_map(index: ElementIndex) -> AffineMap:
    patch, level, k = index
    if level < 0 or not 0 <= k < 4**level:
        raise IndexError(f"invalid element index {index}")
    off = np.zeros(2)
    h = 1.0
    digits = []
    for _ in range(level):
        digits.append(k % 4)
        k //= 4
    for c in reversed(digits):
        h *= 0.5
        off = off + h * CHILD_OFFSETS[c]
    return AffineMap(off, h)


@dataclass(frozen=True)
class Interface:
    patch_a: int
    edge_a: int
    patch_b: int
    edge_b: int
    reversed: bool   # edge parameter of b runs opposite to that of a


@dataclass
class MultipatchGeometry:
    patches: list[NurbsPatch]
    interfaces: list[Interface] = field(default_factory=list)
    closed: bool = False
    report: str = ""

    @classmethod
    def from_patches(cls, patches, tol: float = 1e-10, n_samples: int = 100) -> "MultipatchGeometry":
        geom = cls(list(patches))
        geom.detect_interfaces(tol=tol, n_samples=n_samples)
        return geom

    @property
    def n_patches(self) -> int:
        return len(self.patches)

    def bounding_diameter(self) -> float:
        pts = np.concatenate([p.control.reshape(-1, 3) for p in self.patches])
        return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))

    def evaluate(self, patch_ids, s):
        """Vectorised evaluation for mixed patches; returns ``(x, d1, d2)``."""
        patch_ids = np.asarray(patch_ids)
        s = np.asarray(s, dtype=float)
        shape = s.shape[:-1]
        pid = np.broadcast_to(patch_ids, shape).ravel()
        s = s.reshape(-1, 2)
        x = np.empty((s.shape[0], 3))
        d1 = np.empty_like(x)
        d2 = np.empty_like(x)
        for i in np.unique(pid):
            sel = pid == i
            x[sel], d1[sel], d2[sel] = self.patches[i].evaluate(s[sel])
        return x.reshape(shape + (3,)), d1.reshape(shape + (3,)), d2.reshape(shape + (3,))

    def detect_interfaces(self, tol: float = 1e-10, n_samples: int = 100):
        """Find shared edges by sampling and check orientation consistency."""
        scale = self.bounding_diameter()
        t = np.linspace(0.0, 1.0, n_samples)
        curves = {}
        for i, patch in enumerate(self.patches):
            for e in range(4):
                curves[i, e] = patch(edge_points(e, t))
        matched: dict[tuple[int, int], Interface] = {}
        interfaces = []
        keys = sorted(curves)
        for a_i, ka in enumerate(keys):
            for kb in keys[a_i + 1:]:
                ca, cb = curves[ka], curves[kb]
                if np.max(np.linalg.norm(ca - cb, axis=1)) <= tol * scale:
                    rev = False
                elif np.max(np.linalg.norm(ca - cb[::-1], axis=1)) <= tol * scale:
                    rev = True
                else:
                    continue
                if ka[0] == kb[0]:
                    raise GeometryError(f"patch {ka[0]} is glued to itself")
                for k in (ka, kb):
                    if k in matched:
                        raise GeometryError(f"edge {EDGE_NAMES[k[1]]} of patch {k[0]} "
                                            "matches more than one other edge")
                iface = Interface(ka[0], ka[1], kb[0], kb[1], rev)
                matched[ka] = matched[kb] = iface
                interfaces.append(iface)
        for iface in interfaces:
            # with outward normals the shared edge is traversed in opposite
            # directions by the two counter-clockwise patch boundaries
            da = 1 if iface.edge_a in (SOUTH, EAST) else -1
            db = 1 if iface.edge_b in (SOUTH, EAST) else -1
            same_dir = (da == db) != iface.reversed
            if same_dir:
                raise GeometryError(
                    f"inconsistent normal orientation between patch {iface.patch_a} and "
                    f"patch {iface.patch_b}")
        self.interfaces = interfaces
        open_edges = [k for k in keys if k not in matched]
        self.closed = not open_edges
        lines = [f"patches: {self.n_patches}", f"interfaces: {len(interfaces)}",
                 f"closed: {self.closed}"]
        for k in open_edges:
            lines.append(f"open edge: patch {k[0]} {EDGE_NAMES[k[1]]}")
        self.report = "\n".join(lines)
        return interfaces

    def check_jacobian(self, n: int = 32, rtol: float = 1e-14):
        """Raise if the surface measure vanishes on an ``n x n`` sample grid."""
        scale = self.bounding_diameter()
        g = (np.arange(n) + 0.5) / n
        S = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
        for i, patch in enumerate(self.patches):
            _, d1, d2 = patch.evaluate(S)
            tau = np.linalg.norm(np.cross(d1, d2), axis=-1)
            j = int(np.argmin(tau))
            if tau[j] <= rtol * scale**2:
                raise GeometryError(f"degenerate Jacobian on patch {i} at s = {S[j]}")


def surface_measure(d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.cross(d1, d2), axis=-1)


def eval_patch(patch: NurbsPatch, s):
    """Position, 3x2 Jacobian and surface measure at a single parameter point."""
    x, d1, d2 = patch.evaluate(np.asarray(s, dtype=float)[None, :])
    jac = np.stack([d1[0], d2[0]], axis=1)
    tau = float(surface_measure(d1, d2)[0])
    scale = float(np.linalg.norm(np.ptp(patch.control.reshape(-1, 3), axis=0)))
    if tau <= 1e-14 * max(scale, 1.0) ** 2:
        raise GeometryError(f"degenerate Jacobian at s = {tuple(s)}")
    return x[0], jac, tau


# ---------------------------------------------------------------- builders

def bilinear_patch(corners) -> NurbsPatch:
    """Flat patch with corners ordered (0,0), (1,0), (0,1), (1,1) in parameter space."""
    c = np.asarray(corners, dtype=float).reshape(2, 2, 3)
    kv = KnotVector(1, [0, 0, 1, 1])
    control = np.empty((2, 2, 3))
    control[0, 0], control[1, 0], control[0, 1], control[1, 1] = c[0, 0], c[0, 1], c[1, 0], c[1, 1]
    return NurbsPatch(kv, kv, control, np.ones((2, 2)))


def _bernstein_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # product of two tensor Bernstein polynomials given by coefficient nets
    m1, m2 = a.shape[0] - 1, a.shape[1] - 1
    n1, n2 = b.shape[0] - 1, b.shape[1] - 1
    out = np.zeros((m1 + n1 + 1, m2 + n2 + 1))
    for i1 in range(m1 + 1):
        for i2 in range(m2 + 1):
            for j1 in range(n1 + 1):
                for j2 in range(n2 + 1):
                    c = (comb(m1, i1) * comb(n1, j1) / comb(m1 + n1, i1 + j1)
                         * comb(m2, i2) * comb(n2, j2) / comb(m2 + n2, i2 + j2))
                    out[i1 + j1, i2 + j2] += c * a[i1, i2] * b[j1, j2]
    return out


def _arc(p0, p2, center):
    # rational quadratic circular arc: middle control point and weight
    r0, r2 = p0 - center, p2 - center
    mid = 0.5 * (p0 + p2)
    d = mid - center
    d /= np.linalg.norm(d)
    cos_half = float(np.dot(r0, d) / np.linalg.norm(r0))
    p1 = center + d * np.linalg.norm(r0) / cos_half
    return p1, cos_half


def _sphere_top_patch() -> tuple[np.ndarray, np.ndarray]:
    # stereographic image (from the south pole) of the cube face z = +1 is a
    # planar region bounded by four circular arcs; a homogeneous Coons patch of
    # degree (2, 2) parametrises it and inverse stereographic projection lifts
    # it exactly onto the unit sphere with degree (4, 4)
    a = (np.sqrt(3.0) - 1.0) / 2.0
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    p0, p2, center = np.array([-a, -a]), np.array([a, -a]), np.array([0.0, 1.0])
    p1, w1 = _arc(p0, p2, center)
    net = np.zeros((3, 3, 3))   # homogeneous (wX, wY, w)
    south = [p0, p1, p2]
    weights = [1.0, w1, 1.0]
    R = np.eye(2)
    boundary = []
    for _ in range(4):
        boundary.append([R @ q for q in south])
        R = rot @ R
    # south: (a, 0) a = 0..2 ; east: (2, b) ; north: (2-a, 2) ; west: (0, 2-b)
    for j in range(3):
        for (ia, ib), pt in zip([(j, 0), (2, j), (2 - j, 2), (0, 2 - j)],
                                [boundary[0][j], boundary[1][j], boundary[2][j], boundary[3][j]]):
            net[ia, ib] = [weights[j] * pt[0], weights[j] * pt[1], weights[j]]
    net[1, 1] = (0.5 * (net[0, 1] + net[2, 1] + net[1, 0] + net[1, 2])
                 - 0.25 * (net[0, 0] + net[2, 0] + net[0, 2] + net[2, 2]))
    X, Y, W = net[..., 0], net[..., 1], net[..., 2]
    XX, YY, WW = _bernstein_product(X, X), _bernstein_product(Y, Y), _bernstein_product(W, W)
    hx = 2.0 * _bernstein_product(X, W)
    hy = 2.0 * _bernstein_product(Y, W)
    hz = WW - XX - YY
    hw = WW + XX + YY
    control = np.stack([hx, hy, hz], axis=-1) / hw[..., None]
    return control, hw


_FACE_ROTATIONS = [
    np.eye(3),                                              # +z
    np.array([[1, 0, 0], [0, -1, 0], [0, 0, -1]], float),  # -z
    np.array([[0, 0, 1], [0, 1, 0], [-1, 0, 0]], float),    # +x
    np.array([[0, 0, -1], [0, 1, 0], [1, 0, 0]], float),    # -x
    np.array([[1, 0, 0], [0, 0, 1], [0, -1, 0]], float),    # +y
    np.array([[1, 0, 0], [0, 0, -1], [0, 1, 0]], float),    # -y
]


def unit_sphere(radius: float = 1.0) -> MultipatchGeometry:
    """Exact six-patch rational parametrisation of a sphere (degree 4 x 4)."""
    control, weights = _sphere_top_patch()
    kv = KnotVector(4, [0] * 5 + [1] * 5)
    patches = []
    for R in _FACE_ROTATIONS:
        assert abs(np.linalg.det(R) - 1.0) < 1e-14
        patches.append(NurbsPatch(kv, kv, radius * control @ R.T, weights))
    return MultipatchGeometry.from_patches(patches)


def flat_square(size: float = 1.0) -> MultipatchGeometry:
    return MultipatchGeometry.from_patches(
        [bilinear_patch([[0, 0, 0], [size, 0, 0], [0, size, 0], [size, size, 0]])])


# ---------------------------------------------------------------- file I/O
#
# Text format (``#`` starts a comment):
#
#   patch
#   degrees p1 p2
#   knots1 <k_0> ... <k_n>
#   knots2 <k_0> ... <k_n>
#   size n1 n2
#   x y z w          (n1 * n2 lines, index j1 running fastest)
#   end

def _write_patch(fh, patch: NurbsPatch):
    p1, p2 = patch.degrees
    n1, n2 = patch.kv1.dim, patch.kv2.dim
    fh.write("patch\n")
    fh.write(f"degrees {p1} {p2}\n")
    fh.write("knots1 " + " ".join(repr(float(k)) for k in patch.kv1.knots) + "\n")
    fh.write("knots2 " + " ".join(repr(float(k)) for k in patch.kv2.knots) + "\n")
    fh.write(f"size {n1} {n2}\n")
    for j2 in range(n2):
        for j1 in range(n1):
            vals = (*patch.control[j1, j2], patch.weights[j1, j2])
            fh.write(" ".join(repr(float(v)) for v in vals) + "\n")
    fh.write("end\n")


def save_geometry(geometry: MultipatchGeometry, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# multipatch NURBS geometry, {geometry.n_patches} patches\n")
        for patch in geometry.patches:
            _write_patch(fh, patch)


def load_geometry(path, tol: float = 1e-10) -> MultipatchGeometry:
    text = Path(path).read_text()
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [(i + 1, ln) for i, ln in enumerate(lines) if ln]
    patches = []
    pos = 0

    def expect(keyword):
        nonlocal pos
        if pos >= len(lines):
            raise GeometryError(f"unexpected end of file, expected '{keyword}'")
        lineno, ln = lines[pos]
        parts = ln.split()
        if parts[0] != keyword:
            raise GeometryError(f"line {lineno}: expected '{keyword}', got '{parts[0]}'")
        pos += 1
        return lineno, parts[1:]

    try:
        while pos < len(lines):
            expect("patch")
            _, deg = expect("degrees")
            p1, p2 = int(deg[0]), int(deg[1])
            _, k1 = expect("knots1")
            _, k2 = expect("knots2")
            lineno, size = expect("size")
            n1, n2 = int(size[0]), int(size[1])
            kv1 = KnotVector(p1, [float(v) for v in k1])
            kv2 = KnotVector(p2, [float(v) for v in k2])
            if (kv1.dim, kv2.dim) != (n1, n2):
                raise GeometryError(f"line {lineno}: size {n1}x{n2} inconsistent with knots")
            rows = []
            for _ in range(n1 * n2):
                if pos >= len(lines):
                    raise GeometryError("unexpected end of file inside control net")
                lineno, ln = lines[pos]
                vals = [float(v) for v in ln.split()]
                if len(vals) != 4:
                    raise GeometryError(f"line {lineno}: expected 'x y z w'")
                rows.append(vals)
                pos += 1
            expect("end")
            arr = np.array(rows).reshape(n2, n1, 4).transpose(1, 0, 2)
            if np.any(arr[..., 3] <= 0.0):
                raise GeometryError(f"patch {len(patches)}: non-positive weight")
            patches.append(NurbsPatch(kv1, kv2, arr[..., :3], arr[..., 3]))
    except ValueError as err:
        if isinstance(err, GeometryError):
            raise
        raise GeometryError(f"malformed geometry file: {err}") from err
    if not patches:
        raise GeometryError("no patches in geometry file")
    geom = MultipatchGeometry.from_patches(patches, tol=tol)
    geom.check_jacobian()
    log.info("loaded %s\n%s", path, geom.report)
    return geom
