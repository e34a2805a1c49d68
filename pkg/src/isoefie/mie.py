"""Mie series for a plane wave scattered by a perfectly conducting sphere.

Conventions: time dependence ``exp(-i omega t)``, incident field
``x_hat * exp(i kappa z)``, outgoing Hankel functions of the first kind.
The surface current returned is ``n x curl E_total``, which is the density of
the electric single layer formulation with kernel ``exp(i kappa r)/(4 pi r)``.
Other propagation/polarisation directions are handled by a rotation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


# ------------------------------------------------------- spherical Bessel

def spherical_jn_all(n_max: int, x: np.ndarray) -> np.ndarray:
    """``j_0 .. j_n_max`` at ``x > 0`` (shape (n_max + 1,) + x.shape).

    Downward (Miller) recurrence from well above ``max(n_max, x)``,
    normalised with ``j_0`` or ``j_1`` depending on which is larger.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("spherical Bessel functions need x > 0")
    start = int(max(n_max, np.max(x))) + 30 + int(np.sqrt(40 * max(n_max, np.max(x), 1)))
    f = np.zeros((start + 2,) + x.shape)
    f[start] = 1e-300
    for n in range(start, 0, -1):
        f[n - 1] = (2 * n + 1) / x * f[n] - f[n + 1]
        big = np.abs(f[n - 1]) > 1e250
        if np.any(big):
            f[:, big] *= 1e-250
    j0 = np.sin(x) / x
    j1 = np.sin(x) / x**2 - np.cos(x) / x
    use0 = np.abs(j0) >= np.abs(j1)
    scale = np.where(use0, j0 / np.where(use0, f[0], 1.0), j1 / np.where(use0, 1.0, f[1]))
    return f[: n_max + 1] * scale


def spherical_yn_all(n_max: int, x: np.ndarray) -> np.ndarray:
    """``y_0 .. y_n_max`` by upward recurrence (stable for the growing solution)."""
    x = np.asarray(x, dtype=float)
    y = np.empty((n_max + 1,) + x.shape)
    y[0] = -np.cos(x) / x
    if n_max >= 1:
        y[1] = -np.cos(x) / x**2 - np.sin(x) / x
    for n in range(1, n_max):
        y[n + 1] = (2 * n + 1) / x * y[n] - y[n - 1]
    return y


def derivative_from_recurrence(f: np.ndarray, x: np.ndarray, f_minus1: np.ndarray) -> np.ndarray:
    """``f_n'(x) = f_{n-1}(x) - (n + 1)/x f_n(x)`` for a family f_0..f_N."""
    n = np.arange(f.shape[0]).reshape((-1,) + (1,) * np.ndim(x))
    prev = np.concatenate([f_minus1[None], f[:-1]], axis=0)
    return prev - (n + 1) / x * f


def spherical_bessel_with_derivatives(n_max: int, x):
    """``(j, j', y, y')`` for orders 0..n_max."""
    x = np.asarray(x, dtype=float)
    j = spherical_jn_all(n_max, x)
    y = spherical_yn_all(n_max, x)
    # j_{-1} = cos x / x, y_{-1} = sin x / x
    dj = derivative_from_recurrence(j, x, np.cos(x) / x)
    dy = derivative_from_recurrence(y, x, np.sin(x) / x)
    return j, dj, y, dy


# ----------------------------------------------------------- angular parts

def angular_functions(n_max: int, mu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``pi_n = P_n^1 / sin`` and ``tau_n = d P_n^1 / d theta`` for n = 0..n_max."""
    mu = np.asarray(mu, dtype=float)
    pi = np.zeros((n_max + 1,) + mu.shape)
    tau = np.zeros_like(pi)
    if n_max >= 1:
        pi[1] = 1.0
    for n in range(2, n_max + 1):
        pi[n] = (2 * n - 1) / (n - 1) * mu * pi[n - 1] - n / (n - 1) * pi[n - 2]
    for n in range(1, n_max + 1):
        tau[n] = n * mu * pi[n] - (n + 1) * pi[n - 1]
    return pi, tau


# ------------------------------------------------------------------ series

@dataclass
class MieSeries:
    kappa: float = 1.0
    radius: float = 1.0
    direction: tuple = (0.0, 0.0, 1.0)
    polarization: tuple = (1.0, 0.0, 0.0)
    n_terms: int | None = None
    tol: float = 1e-13

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        e = np.asarray(self.polarization, dtype=float)
        if abs(np.linalg.norm(d) - 1) > 1e-12 or abs(np.linalg.norm(e) - 1) > 1e-12 or abs(d @ e) > 1e-12:
            raise ValueError("direction and polarization must be orthonormal")
        # rows: lab coordinates of the frame (polarization, d x polarization, direction)
        self.frame = np.stack([e, np.cross(d, e), d])
        x = self.kappa * self.radius
        n_min = int(np.ceil(self.kappa)) + 15
        if self.n_terms is None:
            self.n_terms = self._choose_terms(x, n_min)
        self.n_terms = max(self.n_terms, n_min)
        self._coefficients(x)

    def _choose_terms(self, x: float, n_min: int) -> int:
        N = n_min
        while True:
            c = self._coefficients(x, N + 10)
            mag = np.abs(c[0]) + np.abs(c[1])
            if mag[N] <= self.tol * mag[1:].max():
                return N
            N += 5

    def _coefficients(self, x: float, N: int | None = None):
        N = self.n_terms if N is None else N
        j, dj, y, dy = spherical_bessel_with_derivatives(N, np.array(x))
        h = j + 1j * y
        dh = dj + 1j * dy
        psi, dpsi = x * j, j + x * dj
        xi, dxi = x * h, h + x * dh
        n = np.arange(N + 1)
        En = np.zeros(N + 1, dtype=complex)
        En[1:] = 1j ** n[1:] * (2 * n[1:] + 1) / (n[1:] * (n[1:] + 1))
        a = np.zeros(N + 1, dtype=complex)
        b = np.zeros(N + 1, dtype=complex)
        a[1:] = dpsi[1:] / dxi[1:]
        b[1:] = psi[1:] / xi[1:]
        if N == self.n_terms:
            self.En, self.a, self.b = En, a, b
        # per-order magnitude of the scattered coefficients times E_n
        return En * a, En * b

    def _local(self, points):
        """Spherical coordinates in the incidence frame and the unit vectors in the lab frame."""
        q = np.asarray(points, dtype=float) @ self.frame.T
        r = np.linalg.norm(q, axis=-1)
        theta = np.arccos(np.clip(q[..., 2] / r, -1, 1))
        phi = np.arctan2(q[..., 1], q[..., 0])
        st, ct, sp, cp = np.sin(theta), np.cos(theta), np.sin(phi), np.cos(phi)
        e_r = np.stack([st * cp, st * sp, ct], axis=-1) @ self.frame
        e_t = np.stack([ct * cp, ct * sp, -st], axis=-1) @ self.frame
        e_p = np.stack([-sp, cp, np.zeros_like(sp)], axis=-1) @ self.frame
        return r, ct, sp, cp, st, e_r, e_t, e_p

    def _harmonics(self, z, z_rho, dz_rho, ct, st, sp, cp):
        """(r, theta, phi) components of M_o1n, M_e1n, N_o1n, N_e1n for all n.

        ``z`` is the radial function, ``z_rho = z / rho`` and
        ``dz_rho = (rho z)' / rho``.
        """
        pi, tau = angular_functions(self.n_terms, ct)
        n = np.arange(self.n_terms + 1).reshape((-1,) + (1,) * ct.ndim)
        zero = np.zeros_like(pi * z)
        radial = n * (n + 1) * st * pi * z_rho
        M_o = np.stack([zero, cp * pi * z, -sp * tau * z], axis=-1)
        M_e = np.stack([zero, -sp * pi * z, -cp * tau * z], axis=-1)
        N_o = np.stack([sp * radial, sp * tau * dz_rho, cp * pi * dz_rho], axis=-1)
        N_e = np.stack([cp * radial, cp * tau * dz_rho, -sp * pi * dz_rho], axis=-1)
        return M_o, M_e, N_o, N_e

    def _fields(self, points, scattered: bool, incident: bool, curl: bool):
        N = self.n_terms
        k = self.kappa
        r, ct, sp, cp, st, e_r, e_t, e_p = self._local(points)
        rho = k * r
        j, dj, y, dy = spherical_bessel_with_derivatives(N, rho)
        total = np.zeros(r.shape + (3,), dtype=complex)
        parts = []
        if incident:
            # E_i = sum E_n (M_o1n - i N_e1n), curl E_i = k sum E_n (N_o1n - i M_e1n)
            parts.append((j, j + rho * dj, 1.0, -1j))
        if scattered:
            # E_s = sum E_n (i a_n N_e1n - b_n M_o1n), curl E_s = k sum E_n (i a_n M_e1n - b_n N_o1n)
            h = j + 1j * y
            dh = dj + 1j * dy
            parts.append((h, h + rho * dh, "s", None))
        for z, drz, c_m, c_n in parts:
            M_o, M_e, N_o, N_e = self._harmonics(z, z / rho, drz / rho, ct, st, sp, cp)
            if c_m == "s":
                cm = -self.b
                cn = 1j * self.a
            else:
                cm = np.full(N + 1, c_m, dtype=complex)
                cn = np.full(N + 1, c_n, dtype=complex)
            w = (self.En * cm).reshape((-1,) + (1,) * (r.ndim + 1))
            v = (self.En * cn).reshape((-1,) + (1,) * (r.ndim + 1))
            if not curl:
                sph = np.sum(w * M_o + v * N_e, axis=0)
            else:
                sph = k * np.sum(w * N_o + v * M_e, axis=0)
            total += sph[..., 0:1] * e_r + sph[..., 1:2] * e_t + sph[..., 2:3] * e_p
        return total

    def incident_field(self, points) -> np.ndarray:
        return self._fields(points, scattered=False, incident=True, curl=False)

    def scattered_field(self, points) -> np.ndarray:
        return self._fields(points, scattered=True, incident=False, curl=False)

    def total_field(self, points) -> np.ndarray:
        return self._fields(points, scattered=True, incident=True, curl=False)

    def total_curl(self, points) -> np.ndarray:
        return self._fields(points, scattered=True, incident=True, curl=True)

    def surface_current(self, points) -> np.ndarray:
        """``n x curl E_total`` at points on the sphere (..., 3)."""
        points = np.asarray(points, dtype=float)
        r = np.linalg.norm(points, axis=-1)
        if np.any(np.abs(r - self.radius) > 1e-10 * self.radius):
            raise ValueError("points must lie on the sphere")
        n = points / r[..., None]
        return np.cross(n, self.total_curl(points))
