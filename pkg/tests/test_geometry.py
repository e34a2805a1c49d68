import numpy as np
import pytest

from isoefie.bspline import KnotVector
from isoefie.geometry import (EAST, ElementIndex, GeometryError, MultipatchGeometry, NurbsPatch,
                              bilinear_patch, edge_points, element_map, element_offsets,
                              eval_patch, flat_square, load_geometry, save_geometry, unit_sphere)


@pytest.fixture(scope="module")
def sphere():
    return unit_sphere()


def test_flat_patch_measure():
    patch = flat_square().patches[0]
    x, jac, tau = eval_patch(patch, [0.3, 0.8])
    np.testing.assert_allclose(x, [0.3, 0.8, 0.0])
    assert tau == pytest.approx(1.0)


def test_stretched_patch_jacobian():
    patch = bilinear_patch([[0, 0, 0], [2, 0, 0], [0, 1, 0], [2, 1, 0]])
    _, jac, tau = eval_patch(patch, [0.5, 0.5])
    np.testing.assert_allclose(jac, [[2, 0], [0, 1], [0, 0]], atol=1e-15)
    assert tau == pytest.approx(2.0)


def test_degenerate_jacobian_reported():
    # collapse the top edge to a point
    patch = bilinear_patch([[0, 0, 0], [1, 0, 0], [0.5, 1, 0], [0.5, 1, 0]])
    with pytest.raises(GeometryError):
        eval_patch(patch, [0.5, 1.0])


def test_sphere_is_exact(sphere):
    rng = np.random.default_rng(0)
    for i in range(6):
        s = rng.random((1000, 2))
        x, d1, d2 = sphere.evaluate(np.full(1000, i), s)
        assert np.max(np.abs(np.linalg.norm(x, axis=-1) - 1.0)) < 1e-14
        # outward orientation
        assert np.all(np.sum(np.cross(d1, d2) * x, axis=-1) > 0)


def test_sphere_topology(sphere):
    assert sphere.n_patches == 6
    assert len(sphere.interfaces) == 12
    assert sphere.closed


def test_measure_positive_on_grid(sphere):
    g = (np.arange(32) + 0.5) / 32
    s = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    for i in range(6):
        _, d1, d2 = sphere.evaluate(np.full(len(s), i), s)
        assert np.all(np.linalg.norm(np.cross(d1, d2), axis=-1) > 0.1)


def test_interfaces_conform(sphere):
    t = np.linspace(0, 1, 100)
    for f in sphere.interfaces:
        xa = sphere.patches[f.patch_a](edge_points(f.edge_a, t))
        xb = sphere.patches[f.patch_b](edge_points(f.edge_b, t[::-1] if f.reversed else t))
        assert np.max(np.abs(xa - xb)) < 1e-10


def test_single_flat_patch_is_open():
    geo = flat_square()
    assert geo.interfaces == [] and not geo.closed


def _second_square(flip_normal: bool) -> NurbsPatch:
    # occupies [1, 2] x [0, 1]; parametrised rotated by 180 degrees
    kv = KnotVector(1, [0, 0, 1, 1])
    control = np.empty((2, 2, 3))
    for a in range(2):
        for b in range(2):
            bb = b if flip_normal else 1 - b
            control[a, b] = [2 - a, bb, 0]
    return NurbsPatch(kv, kv, control, np.ones((2, 2)))


def test_rotated_neighbour_sets_orientation_flag():
    geo = MultipatchGeometry.from_patches([flat_square().patches[0], _second_square(False)])
    (iface,) = geo.interfaces
    assert (iface.edge_a, iface.edge_b) == (EAST, EAST)
    assert iface.reversed


def test_inconsistent_normals_rejected():
    with pytest.raises(GeometryError):
        MultipatchGeometry.from_patches([flat_square().patches[0], _second_square(True)])


def test_element_map_examples():
    m0 = element_map(ElementIndex(0, 0, 0))
    np.testing.assert_array_equal(m0([0.3, 0.4]), [0.3, 0.4])
    assert m0.bounds() == ((0.0, 1.0), (0.0, 1.0))
    m = element_map(ElementIndex(3, 1, 1))
    assert m.bounds() == ((0.5, 1.0), (0.0, 0.5))
    np.testing.assert_array_equal(m.jacobian, 0.5 * np.eye(2))
    with pytest.raises(IndexError):
        element_map(ElementIndex(0, 1, 4))


@pytest.mark.parametrize("level", [1, 2, 3])
def test_children_tile_the_parent(level):
    area = np.zeros((2**level, 2**level), dtype=int)
    off = element_offsets(level)
    area[off[:, 0], off[:, 1]] += 1
    assert np.all(area == 1)
    for k in range(4**level):
        m = element_map(ElementIndex(0, level, k))
        np.testing.assert_allclose(m.offset, off[k] / 2**level)


def test_child_parent_relation_and_sampled_containment(sphere):
    rng = np.random.default_rng(2)
    parent = ElementIndex(2, 1, 3)
    assert all(c.parent() == parent for c in parent.children())
    pm = element_map(parent)
    for c in parent.children():
        cm = element_map(c)
        u = rng.random((50, 2))
        s = cm(u)
        (lo1, hi1), (lo2, hi2) = pm.bounds()
        assert np.all((s[:, 0] >= lo1) & (s[:, 0] <= hi1) & (s[:, 1] >= lo2) & (s[:, 1] <= hi2))
        # the child's image is the parent's image at the mapped point
        x_child = sphere.patches[2](s)
        x_parent = sphere.patches[2](pm((s - pm.offset) / pm.scale))
        np.testing.assert_array_equal(x_child, x_parent)


def test_file_round_trip(tmp_path, sphere):
    path = tmp_path / "sphere.txt"
    save_geometry(sphere, path)
    geo = load_geometry(path)
    assert geo.n_patches == 6 and len(geo.interfaces) == 12 and geo.closed
    s = np.random.default_rng(3).random((20, 2))
    for a, b in zip(sphere.patches, geo.patches):
        np.testing.assert_array_equal(a(s), b(s))


def test_malformed_files(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("patch\ndegrees 1 1\nknots1 0 0 1 1\nknots2 0 0 1 1\nsize 2 2\n0 0 0 1\nend\n")
    with pytest.raises(GeometryError):
        load_geometry(bad)
    bad.write_text("patch\ndegrees 1 1\nknots1 0 0 1 1\nknots2 0 0 1 1\nsize 2 2\n"
                   "0 0 0 1\n1 0 0 -1\n0 1 0 1\n1 1 0 1\nend\n")
    with pytest.raises(GeometryError, match="weight"):
        load_geometry(bad)
    bad.write_text("")
    with pytest.raises(GeometryError):
        load_geometry(bad)
    bad.write_text("patch\ndegrees one 1\n")
    with pytest.raises(GeometryError):
        load_geometry(bad)
