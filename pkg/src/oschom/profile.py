"""Radial mollifier profiles and tabulated radial potential kernels.

A bump is a finite sum of scaled mollifiers

    phi(x) = sum_j c_j * eta(|x| / r_j),   eta(rho) = exp(-1 / (1 - rho**2)) for rho < 1.

Because phi is radial, the Newtonian potential U = G * phi is radial as well
and all derived kernels (u_i = d_i U, u_ij = d_i d_j U and their gradients)
follow from a handful of scalar radial functions.  For d = 2 we write
grad U(x) = A(r) x and tabulate A together with its derivatives in q = r**2;
for d = 1 we tabulate the symmetric mass m(t) = int_{-t}^{t} eta.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

# table resolution on [0, 1] (per unit-radius mollifier)
TABLE_SIZE = 8192


def eta(rho):
    """Standard mollifier shape exp(-1/(1-rho^2)) on |rho|<1, zero outside."""
    rho = np.asarray(rho, dtype=float)
    s = 1.0 - rho * rho
    out = np.zeros_like(s)
    m = s > 0
    out[m] = np.exp(-1.0 / s[m])
    return out


def _eta_q(q, order):
    """Derivatives in q of exp(-1/(1-q)) for q < 1."""
    q = np.asarray(q, dtype=float)
    s = 1.0 - q
    out = np.zeros_like(s)
    m = s > 0
    sm = s[m]
    e = np.exp(-1.0 / sm)
    if order == 0:
        out[m] = e
    elif order == 1:
        out[m] = -e / sm**2
    elif order == 2:
        out[m] = e * (1.0 / sm**4 - 2.0 / sm**3)
    elif order == 3:
        out[m] = e * (-1.0 / sm**6 + 6.0 / sm**5 - 6.0 / sm**4)
    else:
        raise ValueError("order must be 0..3")
    return out


def _composite_gl(a, b, nodes=32, panels=16):
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    pts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wts = (half[:, None] * w[None, :]).ravel()
    return pts, wts


@lru_cache(maxsize=None)
def unit_mass(dim: int) -> float:
    """Integral of eta(|x|) over R^dim."""
    r, w = _composite_gl(0.0, 1.0, nodes=32, panels=32)
    f = eta(r)
    if dim == 1:
        return float(2.0 * (f @ w))
    if dim == 2:
        return float(2.0 * np.pi * ((f * r) @ w))
    if dim == 3:
        return float(4.0 * np.pi * ((f * r * r) @ w))
    raise ValueError(f"unsupported dimension {dim}")


@lru_cache(maxsize=None)
def radial_table(dim: int) -> np.ndarray:
    """Tabulated radial functions for a unit-radius mollifier.

    Returns an array of shape (4, TABLE_SIZE + 1) on a uniform grid of [0, 1].
    For ``dim == 1`` rows are (m, m', 0, 0) in the radius t.  For ``dim == 2``
    rows are (A, A_q, A_qq, A_qqq) in q = r**2, where grad U = A(q) x.
    """
    n = TABLE_SIZE
    grid = np.linspace(0.0, 1.0, n + 1)
    tab = np.zeros((4, n + 1))
    u, w = _composite_gl(0.0, 1.0)
    if dim == 1:
        # m(t) = 2 t int_0^1 eta(t u) du
        vals = eta(grid[:, None] * u[None, :])
        tab[0] = 2.0 * grid * (vals @ w)
        tab[1] = 2.0 * eta(grid)
        return tab
    if dim == 2:
        for order in range(4):
            vals = _eta_q(grid[:, None] * u[None, :], order)
            tab[order] = 0.5 * (vals * u[None, :] ** order) @ w
        return tab
    raise ValueError(f"radial tables only for dim 1 or 2, got {dim}")


def hermite(tab_f, tab_df, x):
    """Cubic Hermite interpolation of tabulated f, f' on the uniform grid of [0, 1]."""
    n = tab_f.shape[0] - 1
    h = 1.0 / n
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    i = np.minimum((x * n).astype(np.int64), n - 1)
    t = x * n - i
    t2 = t * t
    t3 = t2 * t
    h00 = 2 * t3 - 3 * t2 + 1
    h10 = t3 - 2 * t2 + t
    h01 = -2 * t3 + 3 * t2
    h11 = t3 - t2
    return (h00 * tab_f[i] + h10 * h * tab_df[i]
            + h01 * tab_f[i + 1] + h11 * h * tab_df[i + 1])


class RadialProfile:
    """Finite sum of scaled mollifiers, with radial kernel evaluators.

    Parameters
    ----------
    dim : int
        Space dimension.
    terms : sequence of (coef, radius)
        Each term contributes ``coef * eta(|x| / radius)``.
    """

    def __init__(self, dim, terms):
        self.dim = int(dim)
        self.terms = np.array([[float(c), float(r)] for c, r in terms], dtype=float).reshape(-1, 2)
        if np.any(self.terms[:, 1] <= 0):
            raise ValueError("term radii must be positive")

    @property
    def radius(self) -> float:
        return float(self.terms[:, 1].max()) if len(self.terms) else 0.0

    @property
    def mass(self) -> float:
        """Exact integral (from the unit-mass constant)."""
        return float(sum(c * r**self.dim for c, r in self.terms) * unit_mass(self.dim))

    def value(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r2 = np.einsum("ij,ij->i", x, x)
        out = np.zeros(len(x))
        for c, r in self.terms:
            out += c * _eta_q(r2 / r**2, 0)
        return out

    def gradient(self, x):
        """Cartesian gradient, shape (n, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r2 = np.einsum("ij,ij->i", x, x)
        out = np.zeros_like(x)
        for c, r in self.terms:
            out += (2.0 * c / r**2) * _eta_q(r2 / r**2, 1)[:, None] * x
        return out

    def hessian(self, x):
        """Cartesian Hessian, shape (n, d, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = x.shape[1]
        r2 = np.einsum("ij,ij->i", x, x)
        out = np.zeros((len(x), d, d))
        eye = np.eye(d)
        for c, r in self.terms:
            q = r2 / r**2
            e1 = _eta_q(q, 1)
            e2 = _eta_q(q, 2)
            out += (2.0 * c / r**2) * e1[:, None, None] * eye
            out += (4.0 * c / r**4) * e2[:, None, None] * x[:, :, None] * x[:, None, :]
        return out

    def radial_value(self, r):
        """phi as a function of |x|."""
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for c, rad in self.terms:
            out += c * eta(r / rad)
        return out

    def radial_derivative(self, r):
        """d phi / d|x| (odd extension for 1D use)."""
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for c, rad in self.terms:
            out += (2.0 * c * r / rad**2) * _eta_q((r / rad) ** 2, 1)
        return out

    # -- 1D kernels -------------------------------------------------------
    def mass_within(self, t):
        """1D symmetric mass int_{-t}^{t} phi for t >= 0."""
        if self.dim != 1:
            raise ValueError("mass_within is defined for dim 1")
        tab = radial_table(1)
        t = np.abs(np.asarray(t, dtype=float))
        out = np.zeros_like(t)
        full = unit_mass(1)
        for c, rad in self.terms:
            s = t / rad
            inner = hermite(tab[0], tab[1], s)
            out += c * rad * np.where(s >= 1.0, full, inner)
        return out

    def antiderivative(self, x):
        """1D Phi(x) = int_{-inf}^{x} phi."""
        x = np.asarray(x, dtype=float)
        return 0.5 * self.mass + 0.5 * np.sign(x) * self.mass_within(x)

    # -- 2D kernels -------------------------------------------------------
    def radial_abc(self, r2):
        """Radial coefficients (A, B, C) of U = G * phi in 2D.

        grad U = A x, D^2 U = A I + B x x^T and
        d_k d_j d_i U = B (x_k d_ij + x_j d_ik + x_i d_jk) + C x_i x_j x_k.
        """
        if self.dim != 2:
            raise ValueError("radial_abc is defined for dim 2")
        tab = radial_table(2)
        r2 = np.asarray(r2, dtype=float)
        A = np.zeros_like(r2)
        B = np.zeros_like(r2)
        C = np.zeros_like(r2)
        mhat = unit_mass(2)
        for c, rad in self.terms:
            q = r2 / rad**2
            inside = q < 1.0
            qo = np.where(inside, 1.0, q)
            a_in = hermite(tab[0], tab[1], q)
            aq_in = hermite(tab[1], tab[2], q)
            aqq_in = hermite(tab[2], tab[3], q)
            a_out = mhat / (2 * np.pi * qo)
            aq_out = -mhat / (2 * np.pi * qo**2)
            aqq_out = 2 * mhat / (2 * np.pi * qo**3)
            A += c * np.where(inside, a_in, a_out)
            B += (2 * c / rad**2) * np.where(inside, aq_in, aq_out)
            C += (4 * c / rad**4) * np.where(inside, aqq_in, aqq_out)
        return A, B, C

    def grad_U(self, x):
        """Gradient of U = G * phi, shape (n, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.dim == 1:
            return (0.5 * np.sign(x[:, 0]) * self.mass_within(x[:, 0]))[:, None]
        A, _, _ = self.radial_abc(np.einsum("ij,ij->i", x, x))
        return A[:, None] * x

    def hess_U(self, x):
        """Hessian of U, i.e. grad u_i, shape (n, d, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.dim == 1:
            return self.value(x)[:, None, None]
        A, B, _ = self.radial_abc(np.einsum("ij,ij->i", x, x))
        return A[:, None, None] * np.eye(2) + B[:, None, None] * x[:, :, None] * x[:, None, :]

    def third_U(self, x):
        """Third derivatives of U, i.e. grad u_ij, shape (n, d, d, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.dim == 1:
            return self.gradient(x)[:, :, None, None]
        _, B, C = self.radial_abc(np.einsum("ij,ij->i", x, x))
        eye = np.eye(2)
        t = (np.einsum("nk,ij->nijk", x, eye) + np.einsum("nj,ik->nijk", x, eye)
             + np.einsum("ni,jk->nijk", x, eye))
        return B[:, None, None, None] * t + C[:, None, None, None] * np.einsum("ni,nj,nk->nijk", x, x, x)
