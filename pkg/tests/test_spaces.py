import numpy as np
import pytest

from isoefie.bspline import KnotVector, basis_matrix
from isoefie.geometry import (EAST, NORTH, SOUTH, WEST, MultipatchGeometry, NurbsPatch,
                              bilinear_patch, edge_points, flat_square, unit_sphere)
from isoefie.quadrature import tensor_rule
from isoefie.spaces import (SuperSpace, TopologyError, assemble_T, build_continuity_glue,
                            build_patchlocal_transform, eval_discrete_field,
                            interpolate_reference_field, local_basis, locate, push_forward,
                            reduced_knots, spline_reference_field, superspace_reference_field)


@pytest.fixture(scope="module")
def sphere():
    return unit_sphere()


def test_superspace_dimension():
    ss = SuperSpace(6, 2, 3)
    assert ss.dim == 2 * 4**3 * 6 * 9
    assert ss.index(1, 5, 3) == (ss.n_elements + 5) * 9 + 3


def test_patchlocal_transform_shape():
    T0, T1 = build_patchlocal_transform(1, 1)
    assert T0.shape == (16, 6) and T1.shape == (16, 6)


def test_level_zero_transform_is_basis_change():
    # one element: B-splines on [0..0, 1..1] are Bernstein polynomials, the
    # reduced direction is degree-elevated
    p = 2
    T0, _ = build_patchlocal_transform(p, 0)
    kv = KnotVector.uniform(p, 0)
    kvr = reduced_knots(kv)
    u = np.random.default_rng(0).random((40, 2))
    B, _ = local_basis(p, u)
    coeffs = np.random.default_rng(1).standard_normal(T0.shape[1])
    direct = np.einsum("ni,ij,nj->n", basis_matrix(kv, u[:, 0]), coeffs.reshape(kv.dim, kvr.dim),
                       basis_matrix(kvr, u[:, 1]))
    np.testing.assert_allclose(B @ (T0 @ coeffs), direct, atol=1e-13)


def test_constant_in_x_spline_gives_equal_coefficients():
    p, m = 2, 2
    T0, _ = build_patchlocal_transform(p, m)
    dp, dr = 2**m + p, 2**m + p - 1
    c = np.zeros((dp, dr))
    c[:, :] = np.random.default_rng(0).standard_normal(dr)[None, :]   # independent of j1
    X = (T0 @ c.ravel()).reshape(4**m, -1)
    from isoefie.geometry import element_offsets
    off = element_offsets(m)
    for k in range(4**m):
        right = np.flatnonzero((off[:, 0] == off[k, 0] + 1) & (off[:, 1] == off[k, 1]))
        if right.size:
            np.testing.assert_allclose(X[k], X[right[0]], atol=1e-13)


@pytest.mark.parametrize("p,m,dofs", [(1, 1, 96), (2, 1, 216), (1, 2, 384), (2, 2, 600),
                                      (1, 3, 1536), (2, 3, 1944)])
def test_sphere_dof_counts(sphere, p, m, dofs):
    assert assemble_T(sphere, p, m).dofs_real == dofs


def test_two_flat_patches_glue_count():
    a = flat_square().patches[0]
    b = bilinear_patch([[1, 0, 0], [2, 0, 0], [1, 1, 0], [2, 1, 0]])
    geo = MultipatchGeometry.from_patches([a, b])
    p, m = 2, 1
    dp, dr = 2**m + p, 2**m + p - 1
    G = build_continuity_glue(geo, p, m, allow_open=True)
    assert G.shape == (2 * 2 * dp * dr, 2 * 2 * dp * dr - dr)
    with pytest.raises(TopologyError):
        build_continuity_glue(geo, p, m)


def test_T_is_product_and_full_rank(sphere):
    Tm = assemble_T(sphere, 2, 1)
    assert abs(Tm.T - Tm.T_local @ Tm.T_glue).max() == 0
    assert np.linalg.matrix_rank(Tm.T.toarray()) == Tm.dim
    assert set(np.unique(Tm.T_glue.data)) <= {-1.0, 1.0}


@pytest.mark.parametrize("p,m", [(1, 2), (2, 2), (3, 1)])
def test_dual_evaluation(sphere, p, m):
    Tm = assemble_T(sphere, p, m)
    rng = np.random.default_rng(p + m)
    c = rng.standard_normal(Tm.dim) + 1j * rng.standard_normal(Tm.dim)
    x_super = Tm.T @ c
    worst = 0.0
    for patch in range(6):
        s = rng.random((100, 2))
        el, u = locate(Tm.superspace, patch, s)
        f1, d1 = superspace_reference_field(Tm.superspace, x_super, el, u)
        f2, d2 = spline_reference_field(Tm, p, m, c, patch, s)
        worst = max(worst, np.max(np.abs(f1 - f2)), np.max(np.abs(d1 - d2)))
    assert worst <= 1e-12


def _field_on_edge(sphere, Tm, c, patch, edge, t):
    s = edge_points(edge, t)
    s = np.clip(s, 0.0, 1.0)
    el, u = locate(Tm.superspace, patch, s)
    w, _ = eval_discrete_field(sphere, Tm, c, el, u)
    x, d1, d2 = sphere.patches[patch].evaluate(s)
    tangent = d2 if edge in (WEST, EAST) else d1
    return x, w, tangent


@pytest.mark.parametrize("p,m", [(1, 1), (2, 2)])
def test_normal_component_continuous(sphere, p, m):
    Tm = assemble_T(sphere, p, m)
    t = np.linspace(0, 1, 100)
    for j in range(Tm.dim):
        c = np.zeros(Tm.dim)
        c[j] = 1.0
        for f in sphere.interfaces:
            xa, wa, ta = _field_on_edge(sphere, Tm, c, f.patch_a, f.edge_a, t)
            xb, wb, _ = _field_on_edge(sphere, Tm, c, f.patch_b, f.edge_b,
                                       t[::-1] if f.reversed else t)
            # common in-surface conormal
            nu = np.cross(ta / np.linalg.norm(ta, axis=1, keepdims=True), xa)
            jump = np.sum(wa * nu, axis=1) - np.sum(wb * nu, axis=1)
            assert np.max(np.abs(jump)) <= 1e-11


def test_divergence_integrates_to_zero(sphere):
    Tm = assemble_T(sphere, 2, 2)
    ss = Tm.superspace
    u, w = tensor_rule(4)
    _, dB = local_basis(ss.degree, u)
    # surface integral of div_G equals the reference-divergence integral
    per_local = np.stack([w @ dB[..., 0], w @ dB[..., 1]]) * 2.0**ss.level * ss.h**2
    weights = np.concatenate([np.tile(per_local[0], ss.n_elements), np.tile(per_local[1], ss.n_elements)])
    totals = weights @ Tm.T
    assert np.max(np.abs(totals)) <= 1e-10


def test_push_forward_flat_examples():
    for corners, expected in (([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], [1, 0, 0]),
                              ([[0, 0, 0], [2, 0, 0], [0, 1, 0], [2, 1, 0]], [1, 0, 0])):
        patch = bilinear_patch(corners)
        _, d1, d2 = patch.evaluate(np.array([[0.4, 0.6]]))
        field, div = push_forward(np.array([[1.0, 0.0]]), np.array([0.0]), d1, d2)
        np.testing.assert_allclose(field[0], expected, atol=1e-15)


def _curved_patch():
    kv = KnotVector(2, [0, 0, 0, 1, 1, 1])
    rng = np.random.default_rng(5)
    g = np.linspace(0, 1, 3)
    control = np.zeros((3, 3, 3))
    control[..., 0], control[..., 1] = np.meshgrid(g, g, indexing="ij")
    control[..., 2] = 0.3 * rng.random((3, 3))
    return MultipatchGeometry.from_patches([NurbsPatch(kv, kv, control, 1 + 0.5 * rng.random((3, 3)))])


def test_surface_divergence_against_finite_differences():
    geo = _curved_patch()
    ss = SuperSpace(1, 2, 1)

    def fhat(_, s):
        x, y = s[:, 0], s[:, 1]
        return np.stack([0.3 + x * y - 0.5 * y**2, 1.2 * x**2 - x + 0.7 * y], axis=-1)

    X = interpolate_reference_field(ss, fhat)
    rng = np.random.default_rng(9)
    s = 0.1 + 0.8 * rng.random((25, 2))
    el, u = locate(ss, 0, s)
    fh, divhat = superspace_reference_field(ss, X, el, u)
    np.testing.assert_allclose(fh, fhat(None, s), atol=1e-13)
    _, d1, d2 = geo.evaluate(np.zeros(len(s), dtype=int), s)
    _, div = push_forward(fh, divhat, d1, d2)

    def pushed(sp_):
        _, a, b = geo.evaluate(np.zeros(len(sp_), dtype=int), sp_)
        return push_forward(fhat(None, sp_), np.zeros(len(sp_)), a, b)[0]

    # div_G w = sum_i g^i . d_i w with the dual (contravariant) tangent basis
    step = 1e-3
    grads = []
    for e in np.eye(2):
        f = [pushed(s + k * step * e) for k in (-2, -1, 1, 2)]
        grads.append((f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * step))
    G = np.stack([np.stack([np.sum(d1 * d1, -1), np.sum(d1 * d2, -1)], -1),
                  np.stack([np.sum(d2 * d1, -1), np.sum(d2 * d2, -1)], -1)], -2)
    Ginv = np.linalg.inv(G)
    dual1 = Ginv[:, 0, 0, None] * d1 + Ginv[:, 0, 1, None] * d2
    dual2 = Ginv[:, 1, 0, None] * d1 + Ginv[:, 1, 1, None] * d2
    oracle = np.sum(dual1 * grads[0], -1) + np.sum(dual2 * grads[1], -1)
    np.testing.assert_allclose(div, oracle, atol=1e-9)


def _fit_residual(values, design):
    coef, *_ = np.linalg.lstsq(design, values, rcond=None)
    return np.max(np.abs(design @ coef - values))


@pytest.mark.parametrize("p,m", [(1, 2), (2, 2), (3, 1)])
def test_spline_complex_containments(p, m):
    kv = KnotVector.uniform(p, m)
    kvr = reduced_knots(kv)
    rng = np.random.default_rng(p * 10 + m)
    s = rng.random((400, 2))
    Bp = [basis_matrix(kv, s[:, i]) for i in range(2)]
    Br = [basis_matrix(kvr, s[:, i]) for i in range(2)]
    dBp = [basis_matrix(kv, s[:, i], 1) for i in range(2)]

    def design(A, B):
        return np.einsum("ni,nj->nij", A, B).reshape(len(s), -1)

    # curl of every S0 basis function lies in S1 = S^{p,p-1} x S^{p-1,p}
    D0, D1 = design(Bp[0], Br[1]), design(Br[0], Bp[1])
    n = kv.dim
    for j1 in range(n):
        for j2 in range(n):
            curl0 = Bp[0][:, j1] * dBp[1][:, j2]
            curl1 = -dBp[0][:, j1] * Bp[1][:, j2]
            assert _fit_residual(curl0, D0) <= 1e-10
            assert _fit_residual(curl1, D1) <= 1e-10
    # divergence of every S1 basis function lies in S2 = S^{p-1,p-1}
    D2 = design(Br[0], Br[1])
    for j1 in range(n):
        for j2 in range(kvr.dim):
            assert _fit_residual(dBp[0][:, j1] * Br[1][:, j2], D2) <= 1e-10
            assert _fit_residual(Br[0][:, j2] * dBp[1][:, j1], D2) <= 1e-10


def test_export_triplets(tmp_path, sphere):
    Tm = assemble_T(sphere, 1, 1)
    path = tmp_path / "T.txt"
    Tm.export_triplets(path)
    lines = path.read_text().splitlines()
    assert lines[0] == f"# {Tm.T.shape[0]} {Tm.T.shape[1]} {Tm.T.nnz}"
    assert len(lines) == Tm.T.nnz + 1
