"""Restarted GMRES for complex (non-Hermitian) systems."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GmresConfig:
    tol: float = 1e-8          # absolute residual norm
    restart: int = 1500
    max_iter: int = 20000
    relative: bool = False     # stop on ||r|| <= tol * ||b|| instead


@dataclass
class SolveReport:
    x: np.ndarray
    converged: bool
    iterations: int
    residual: float            # true residual norm at exit
    history: list[float] = field(default_factory=list)   # estimated residuals per iteration
    restarts: list[tuple[float, float]] = field(default_factory=list)  # (estimated, true) per cycle
    wall_time: float = 0.0             # solve time
    assembly_time: float = 0.0


def _givens(a: complex, b: complex) -> tuple[float, complex]:
    # c real, s complex with [c, s; -conj(s), c] [a; b] = [r; 0]
    if b == 0:
        return 1.0, 0.0
    if a == 0:
        return 0.0, np.conj(b) / abs(b)
    t = np.hypot(abs(a), abs(b))
    c = abs(a) / t
    s = (a / abs(a)) * np.conj(b) / t
    return c, s


def gmres(apply: Callable[[np.ndarray], np.ndarray], rhs: np.ndarray,
          config: GmresConfig = GmresConfig(), x0: np.ndarray | None = None,
          preconditioner: Callable[[np.ndarray], np.ndarray] | None = None) -> SolveReport:
    """Solve ``A x = rhs`` with restarted GMRES (modified Gram-Schmidt).

    ``preconditioner`` is applied from the right; the default is the identity.
    A run that does not reach the tolerance returns with ``converged=False``.
    """
    prec = preconditioner or (lambda v: v)
    start = time.perf_counter()
    b = np.asarray(rhs, dtype=complex)
    n = b.size
    x = np.zeros(n, dtype=complex) if x0 is None else np.array(x0, dtype=complex)
    target = config.tol * (np.linalg.norm(b) if config.relative else 1.0)
    history = []
    restarts = []
    total = 0
    r = b - apply(x) if x.any() else b.copy()
    beta = np.linalg.norm(r)
    history.append(beta)
    while beta > target and total < config.max_iter:
        m = min(config.restart, config.max_iter - total, n)
        V = np.zeros((m + 1, n), dtype=complex)
        H = np.zeros((m + 1, m), dtype=complex)
        cs = np.zeros(m)
        sn = np.zeros(m, dtype=complex)
        g = np.zeros(m + 1, dtype=complex)
        g[0] = beta
        V[0] = r / beta
        k = 0
        for k in range(m):
            w = apply(prec(V[k]))
            for i in range(k + 1):
                H[i, k] = np.vdot(V[i], w)
                w = w - H[i, k] * V[i]
            H[k + 1, k] = subdiag = np.linalg.norm(w)
            if subdiag > 0:
                V[k + 1] = w / subdiag
            for i in range(k):
                hi, hi1 = H[i, k], H[i + 1, k]
                H[i, k] = cs[i] * hi + sn[i] * hi1
                H[i + 1, k] = -np.conj(sn[i]) * hi + cs[i] * hi1
            cs[k], sn[k] = _givens(H[k, k], H[k + 1, k])
            H[k, k] = cs[k] * H[k, k] + sn[k] * H[k + 1, k]
            H[k + 1, k] = 0.0
            g[k + 1] = -np.conj(sn[k]) * g[k]
            g[k] = cs[k] * g[k]
            total += 1
            history.append(abs(g[k + 1]))
            if abs(g[k + 1]) <= target or subdiag == 0:
                k += 1
                break
        else:
            k = m
        y = np.linalg.solve(np.triu(H[:k, :k]), g[:k])
        x = x + prec(V[:k].T @ y)
        r = b - apply(x)
        beta = np.linalg.norm(r)
        restarts.append((float(abs(g[k])), float(beta)))
        log.debug("gmres cycle ends after %d iterations, residual %.3e", total, beta)
    converged = bool(beta <= target)
    if not converged:
        log.warning("gmres stopped after %d iterations with residual %.3e", total, beta)
    return SolveReport(x, converged, total, float(beta), [float(h) for h in history], restarts,
                       time.perf_counter() - start)


def write_residual_history(report: SolveReport, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration", "residual"])
        wr.writerows(enumerate(report.history))


def solve_scattering(operator, rhs: np.ndarray, config: GmresConfig = GmresConfig(),
                     assembly_time: float = 0.0) -> SolveReport:
    """GMRES on the compressed system; ``operator.matvec`` maps global coefficients."""
    report = gmres(operator.matvec, rhs, config)
    report.assembly_time = assembly_time
    if report.iterations == 0 and not np.any(rhs):
        report.converged = True
    return report
