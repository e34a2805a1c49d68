"""Incident fields, right-hand sides, potential evaluation and error metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .assembly import Discretisation, helmholtz_kernel
from .quadrature import tensor_rule
from .spaces import TransformationMatrix, local_basis, push_forward


# ---------------------------------------------------------------- excitations

def dipole_field(x, kappa: float, source=(0.0, 0.0, 0.0), moment=(0.0, 0.1, 0.1)) -> np.ndarray:
    """Electric field of a Hertz dipole at ``source`` with moment ``moment``; x (..., 3)."""
    d = np.asarray(x, dtype=float) - np.asarray(source, dtype=float)
    r = np.linalg.norm(d, axis=-1, keepdims=True)
    if np.any(r == 0.0):
        raise ZeroDivisionError("dipole field evaluated at the source point")
    n = d / r
    p0 = np.asarray(moment, dtype=complex)
    transverse = np.cross(np.cross(n, p0), n)
    radial = 3.0 * n * np.sum(n * p0, axis=-1, keepdims=True) - p0
    return np.exp(1j * kappa * r) * (kappa**2 / r * transverse + (1.0 / r**3 - 1j * kappa / r**2) * radial)


def plane_wave(x, kappa: float, direction=(0.0, 0.0, 1.0), polarization=(1.0, 0.0, 0.0)) -> np.ndarray:
    """``polarization * exp(i kappa direction . x)``."""
    d = np.asarray(direction, dtype=float)
    e = np.asarray(polarization, dtype=float)
    if abs(np.linalg.norm(d) - 1) > 1e-12 or abs(np.linalg.norm(e) - 1) > 1e-12:
        raise ValueError("direction and polarization must be unit vectors")
    if abs(d @ e) > 1e-12:
        raise ValueError("polarization must be orthogonal to the direction")
    phase = np.exp(1j * kappa * (np.asarray(x, dtype=float) @ d))
    return phase[..., None] * e


@dataclass(frozen=True)
class Excitation:
    kind: str                                  # "plane-wave" or "hertz-dipole"
    kappa: float
    direction: tuple = (0.0, 0.0, 1.0)
    polarization: tuple = (1.0, 0.0, 0.0)
    source: tuple = (0.0, 0.0, 0.0)
    moment: tuple = (0.0, 0.1, 0.1)

    def incident(self, x) -> np.ndarray:
        """The incident field ``e_i`` whose tangential trace the density cancels."""
        if self.kind == "plane-wave":
            return plane_wave(x, self.kappa, self.direction, self.polarization)
        if self.kind == "hertz-dipole":
            # manufactured solution: the scattered field is the dipole itself
            return -dipole_field(x, self.kappa, self.source, self.moment)
        raise ValueError(f"unknown excitation {self.kind!r}")


# ----------------------------------------------------------- right-hand side

def assemble_rhs_superspace(disc: Discretisation, field, order: int | None = None) -> np.ndarray:
    """Superspace vector of ``int field . phi`` over all test functions.

    ``field(x)`` maps points (..., 3) to complex 3-vectors.
    """
    ss = disc.ss
    u, w = tensor_rule(order or ss.degree + 4)
    el = np.arange(ss.n_elements)
    x, d1, d2 = disc.evaluate(el[:, None], u[None])
    f = field(x)
    B, _ = local_basis(ss.degree, u)
    out = np.empty((2, ss.n_elements, ss.n_local), dtype=complex)
    for alpha, d in enumerate((d1, d2)):
        g = np.sum(f * d, axis=-1) * (w * ss.h**2)
        out[alpha] = g @ B
    return out.reshape(-1)


def assemble_rhs(disc: Discretisation, Tm: TransformationMatrix, excitation: Excitation,
                 order: int | None = None) -> np.ndarray:
    """Right-hand side ``-T^T f`` of the global system."""
    return -(Tm.T.T @ assemble_rhs_superspace(disc, excitation.incident, order))


# ---------------------------------------------------------------- potential

@dataclass
class PotentialResult:
    values: np.ndarray            # (n, 3)
    too_close: np.ndarray         # (n,) bool


def eval_potential(disc: Discretisation, Tm: TransformationMatrix, coeffs, kappa: float, points,
                   order: int | None = None, chunk: int = 64) -> PotentialResult:
    """Electric single layer potential of the density at exterior points."""
    ss = disc.ss
    points = np.atleast_2d(np.asarray(points, dtype=float))
    u, w = tensor_rule(order or ss.degree + 6)
    el = np.arange(ss.n_elements)
    y, d1, d2 = disc.evaluate(el[:, None], u[None])
    X = (Tm.T @ np.asarray(coeffs, dtype=complex)).reshape(2, ss.n_elements, ss.n_local)
    B, dB = local_basis(ss.degree, u)
    fhat = np.stack([X[0] @ B.T, X[1] @ B.T], axis=-1)                       # (E, Q, 2)
    divhat = 2.0**ss.level * (X[0] @ dB[..., 0].T + X[1] @ dB[..., 1].T)    # (E, Q)
    wq = w * ss.h**2
    # density times surface measure, in patch coordinates
    dens = (fhat[..., 0:1] * d1 + fhat[..., 1:2] * d2) * wq[:, None]
    divd = divhat * wq
    y = y.reshape(-1, 3)
    dens = dens.reshape(-1, 3)
    divd = divd.reshape(-1)
    out = np.empty((points.shape[0], 3), dtype=complex)
    dmin = np.empty(points.shape[0])
    for start in range(0, points.shape[0], chunk):
        xs = points[start:start + chunk]
        diff = xs[:, None, :] - y[None, :, :]
        r = np.linalg.norm(diff, axis=-1)
        G = helmholtz_kernel(kappa, r)
        grad = (G * (1j * kappa - 1.0 / r) / r)[..., None] * diff
        out[start:start + chunk] = G @ dens + np.einsum("nqk,q->nk", grad, divd) / kappa**2
        dmin[start:start + chunk] = r.min(axis=1)
    return PotentialResult(out, dmin < np.sqrt(2.0) * ss.h * _patch_scale(disc))


def _patch_scale(disc: Discretisation) -> float:
    # largest element diameter measured on its corner points, per unit of h
    c = disc.corners
    diam = np.max(np.linalg.norm(c[:, [0, 1]] - c[:, [2, 3]], axis=-1))
    return diam / (np.sqrt(2.0) * disc.ss.h)


# ---------------------------------------------------------------- metrics

def fibonacci_sphere(n: int = 100, radius: float = 3.0) -> np.ndarray:
    """Quasi-uniform points on a sphere (Fibonacci lattice), deterministic."""
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    phi = np.pi * (1.0 + np.sqrt(5.0)) * k
    rho = np.sqrt(1.0 - z**2)
    return radius * np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)


def field_error(numeric, reference) -> float:
    """Maximum over points of the Euclidean norm of the complex difference."""
    diff = np.asarray(numeric) - np.asarray(reference)
    return float(np.max(np.sqrt(np.sum(np.abs(diff) ** 2, axis=-1)))) if diff.size else 0.0


def density_l2_error(disc: Discretisation, Tm: TransformationMatrix, coeffs, reference,
                     order: int | None = None) -> float:
    """L2 surface norm of ``w_h - reference``; ``reference(x)`` takes points (..., 3)."""
    ss = disc.ss
    u, w = tensor_rule(order or ss.degree + 4)
    el = np.arange(ss.n_elements)
    x, d1, d2 = disc.evaluate(el[:, None], u[None])
    X = (Tm.T @ np.asarray(coeffs, dtype=complex)).reshape(2, ss.n_elements, ss.n_local)
    B, _ = local_basis(ss.degree, u)
    fhat = np.stack([X[0] @ B.T, X[1] @ B.T], axis=-1)
    wh, _ = push_forward(fhat, np.zeros(fhat.shape[:-1]), d1, d2)
    tau = np.linalg.norm(np.cross(d1, d2), axis=-1)
    err2 = np.sum(np.abs(wh - reference(x)) ** 2, axis=-1) * tau * (w * ss.h**2)
    return float(np.sqrt(err2.sum()))


def export_grid_csv(path, points, values) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "y", "z", "re_ex", "im_ex", "re_ey", "im_ey", "re_ez", "im_ez"])
        for p, v in zip(points, values):
            wr.writerow([*p, v[0].real, v[0].imag, v[1].real, v[1].imag, v[2].real, v[2].imag])
