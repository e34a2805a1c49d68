import numpy as np
import pytest

from isoefie.quadrature import (CORNERS, DIHEDRAL, Adjacency, PairConfiguration, apply_dihedral,
                                classify_pair, edge_rule, identical_rule, pair_rule, tensor_rule,
                                vertex_rule)

# Integrals of 1/|x - y| over pairs of unit squares in one plane. Obtained from
# adaptive integration (scipy dblquad, tol 1e-14) of the rectangle
# self-interaction 4 int int (a-u)(b-v)/|(u,v)| for 1x1, 2x1 and 2x2
# rectangles, split by additivity into identical / edge / vertex parts.
SELF_1X1 = 2.973209598247377
EDGE_PAIR = 1.1121286898490061
VERTEX_PAIR = 0.74895221854937
# int int exp(i r)/(4 pi r) for coplanar unit squares whose x-ranges are [0,1]
# and [3,4]; adaptive 2-D integration in the difference variable.
SEPARATED_DIST2 = -0.0242690825171372 + 0.0041754614565644435j


def test_closed_form_self_interaction():
    s2 = np.sqrt(2.0)
    assert SELF_1X1 == pytest.approx(4.0 / 3.0 * (1 - s2 + 3 * np.log(1 + s2)), rel=1e-15)


def test_single_point_rule():
    x, w = tensor_rule(1)
    np.testing.assert_array_equal(x, [[0.5, 0.5]])
    np.testing.assert_array_equal(w, [1.0])


def test_tensor_rule_exactness():
    x, w = tensor_rule(2)
    assert w @ (x[:, 0] * x[:, 1]) == pytest.approx(0.25, abs=1e-16)
    x, w = tensor_rule(3)
    assert abs(w @ x[:, 0] ** 5 - 1 / 6) < 1e-15
    # degree 2n - 1 per direction
    assert abs(w @ (x[:, 0] ** 5 * x[:, 1] ** 4) - 1 / 30) < 1e-15


@pytest.mark.parametrize("rule", [identical_rule, edge_rule, vertex_rule])
@pytest.mark.parametrize("n", [2, 3, 6])  # the Duffy Jacobians need n >= 2
def test_pair_rules_positive_and_normalised(rule, n):
    x, y, w = rule(n)
    assert np.all(w > 0)
    assert w.sum() == pytest.approx(1.0, rel=1e-13)
    assert np.all((x >= 0) & (x <= 1) & (y >= 0) & (y <= 1))


def _flat(x, offset=(0.0, 0.0)):
    return np.c_[x + np.asarray(offset), np.zeros(len(x))]


def _laplace(rule, offset):
    x, y, w = rule
    r = np.linalg.norm(_flat(x) - _flat(y, offset), axis=1)
    return w @ (1.0 / r)


def test_identical_rule_converges_exponentially():
    errs = [abs(_laplace(identical_rule(n), (0, 0)) - SELF_1X1) for n in (2, 4, 6, 8, 10)]
    assert errs[-1] < 1e-12
    assert all(b < a / 10 for a, b in zip(errs[:-1], errs[1:]))


def test_identical_laplace_value():
    val = _laplace(identical_rule(10), (0, 0)) / (4 * np.pi)
    assert val == pytest.approx(SELF_1X1 / (4 * np.pi), rel=1e-13)
    assert val == pytest.approx(0.0795775 * SELF_1X1, rel=1e-6)


def test_edge_rule_value():
    # second square sits left of the first: the shared edge is x1 = 0 / y1 = 1
    cfg = classify_pair(_flat(CORNERS), _flat(CORNERS, (-1, 0)), 1e-12)
    assert cfg.kind is Adjacency.EDGE
    errs = [abs(_laplace(pair_rule(cfg, n), (-1, 0)) - EDGE_PAIR) for n in (2, 4, 6, 8)]
    assert errs[-1] < 1e-12
    assert all(b < a / 10 for a, b in zip(errs[:2], errs[1:3]))


def test_vertex_rule_value():
    cfg = classify_pair(_flat(CORNERS), _flat(CORNERS, (1, 1)), 1e-12)
    assert cfg.kind is Adjacency.VERTEX
    errs = [abs(_laplace(pair_rule(cfg, n), (1, 1)) - VERTEX_PAIR) for n in (2, 4, 6, 8)]
    assert errs[-1] < 1e-12
    assert all(b < a / 10 for a, b in zip(errs[:2], errs[1:3]))


def test_separated_rule_against_adaptive_oracle():
    cfg = classify_pair(_flat(CORNERS), _flat(CORNERS, (3, 0)), 1e-12)
    assert cfg.kind is Adjacency.SEPARATED
    x, y, w = pair_rule(cfg, 8)
    r = np.linalg.norm(_flat(x) - _flat(y, (3, 0)), axis=1)
    val = w @ (np.exp(1j * r) / (4 * np.pi * r))
    assert abs(val - SEPARATED_DIST2) <= 1e-12 * abs(SEPARATED_DIST2)


def test_edge_pair_swap_invariance():
    a, b = _flat(CORNERS), _flat(CORNERS, (0, 1))
    f = lambda p, q: np.exp(1j * np.linalg.norm(p - q, axis=1)) / np.linalg.norm(p - q, axis=1)
    x, y, w = pair_rule(classify_pair(a, b, 1e-12), 7)
    v1 = w @ (f(_flat(x), _flat(y, (0, 1))) * x[:, 0] * y[:, 1])
    x, y, w = pair_rule(classify_pair(b, a, 1e-12), 7)
    v2 = w @ (f(_flat(x, (0, 1)), _flat(y)) * y[:, 0] * x[:, 1])
    assert abs(v1 - v2) <= 1e-13 * abs(v1)


@pytest.mark.parametrize("k", range(8))
def test_edge_rule_in_every_orientation(k):
    # rotate/reflect both squares' parametrisations; the integral is unchanged
    rng = np.random.default_rng(k)
    ka = k
    kb = int(rng.integers(8))
    ca = _flat(apply_dihedral(ka, CORNERS))
    cb = _flat(apply_dihedral(kb, CORNERS), (0, 1))
    cfg = classify_pair(ca, cb, 1e-12)
    x, y, w = pair_rule(cfg, 8)
    X = _flat(apply_dihedral(ka, x))
    Y = _flat(apply_dihedral(kb, y), (0, 1))
    assert w @ (1 / np.linalg.norm(X - Y, axis=1)) == pytest.approx(EDGE_PAIR, rel=1e-11)


def test_classification_cases():
    a = _flat(CORNERS)
    assert classify_pair(a, a, 1e-12).kind is Adjacency.IDENTICAL
    assert classify_pair(a, _flat(CORNERS, (1, 0)), 1e-12).kind is Adjacency.EDGE
    assert classify_pair(a, _flat(CORNERS, (-1, -1)), 1e-12).kind is Adjacency.VERTEX
    assert classify_pair(a, _flat(CORNERS, (1.5, 0)), 1e-12).kind is Adjacency.SEPARATED


def test_unknown_configuration_rejected():
    with pytest.raises(ValueError):
        pair_rule(PairConfiguration("bogus"), 3)


def test_dihedral_group():
    mats = [tuple(A.ravel()) for A in DIHEDRAL]
    assert len(set(mats)) == 8
    for A in DIHEDRAL:
        np.testing.assert_array_equal(np.sort(apply_dihedral(0, CORNERS) @ np.ones(2)),
                                      np.sort(apply_dihedral(mats.index(tuple(A.ravel())), CORNERS) @ np.ones(2)))
