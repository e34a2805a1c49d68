import logging

import numpy as np
import pytest

from isoefie.solver import GmresConfig, gmres, solve_scattering, write_residual_history


def _system(n=50, seed=0, shift=3.0):
    rng = np.random.default_rng(seed)
    A = shift * np.eye(n) + (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(n)
    b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return A, b


def test_identity_converges_in_one_step():
    b = np.arange(1, 6) + 1j
    rep = gmres(lambda v: v, b)
    assert rep.converged and rep.iterations == 1
    np.testing.assert_allclose(rep.x, b, atol=1e-14)


def test_matches_dense_solve():
    A, b = _system()
    rep = gmres(lambda v: A @ v, b, GmresConfig(tol=1e-13))
    np.testing.assert_allclose(rep.x, np.linalg.solve(A, b), atol=1e-10)


def test_restarted_history_and_residual_consistency():
    A, b = _system(80, seed=1)
    rep = gmres(lambda v: A @ v, b, GmresConfig(tol=1e-12, restart=5))
    assert rep.converged
    assert len(rep.restarts) > 3
    nb = np.linalg.norm(b)
    for estimated, true in rep.restarts:
        assert abs(estimated - true) <= 1e-10 * nb
    # monotone within every cycle
    h = np.array(rep.history)
    for c in range(len(rep.restarts)):
        cycle = h[1 + 5 * c: 1 + 5 * (c + 1)]
        assert np.all(np.diff(cycle) <= 1e-14 * nb)
    assert rep.residual == pytest.approx(np.linalg.norm(b - A @ rep.x))


def test_non_convergence_is_reported(caplog):
    A, b = _system(60, seed=2, shift=0.5)
    with caplog.at_level(logging.WARNING):
        rep = gmres(lambda v: A @ v, b, GmresConfig(tol=1e-14, restart=3, max_iter=7))
    assert not rep.converged and rep.iterations == 7
    assert "gmres stopped" in caplog.text


def test_relative_criterion():
    A, b = _system()
    b = 1e6 * b
    rep = gmres(lambda v: A @ v, b, GmresConfig(tol=1e-8, relative=True))
    assert rep.converged
    assert rep.residual <= 1e-8 * np.linalg.norm(b)
    assert rep.residual > 1e-8


def test_preconditioner_hook():
    A, b = _system()
    Ainv = np.linalg.inv(A)
    rep = gmres(lambda v: A @ v, b, preconditioner=lambda v: Ainv @ v)
    assert rep.iterations == 1
    np.testing.assert_allclose(rep.x, Ainv @ b, atol=1e-10)


class _Op:
    def __init__(self, A):
        self.A = A

    def matvec(self, v):
        return self.A @ v


def test_zero_rhs():
    A, _ = _system()
    rep = solve_scattering(_Op(A), np.zeros(50, dtype=complex), assembly_time=1.5)
    assert rep.converged and rep.iterations == 0
    assert not rep.x.any()
    assert rep.assembly_time == 1.5


def test_residual_dump(tmp_path):
    A, b = _system()
    rep = gmres(lambda v: A @ v, b)
    write_residual_history(rep, tmp_path / "res.csv")
    lines = (tmp_path / "res.csv").read_text().splitlines()
    assert lines[0] == "iteration,residual"
    assert len(lines) == len(rep.history) + 1
