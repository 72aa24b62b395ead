"""Correctors of the Taylor split and estimators of the homogenized constant M.

The corrector is assembled as W = w_per - W~ + w2 with

    Delta w_per = V_per                      (periodic cell problem)
    grad w~     = sum_k sum_i (Z_k)_i grad u_i(. - k),  k in B_{1/beta}
    grad W~     = grad w~ - C_{eps,R}        (mean over B_{4R/eps} removed)
    grad w2     = sum_k sum_ij (Z_k)_i (Z_k)_j int_0^1 (1-t) grad u_ij(. - k - t Z_k) dt

All gradient fields are in cell units y = x / eps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from . import kernels
from .gridfield import GridField
from .greens import convolve_boxes
from .lattice import LatticeWindow, average_diagnostic, evaluate_box
from .potential import PotentialAssembly, sample_V, sample_V_per


class TailBudgetError(RuntimeError):
    """A lattice-sum truncation did not meet its error budget."""


# ---------------------------------------------------------------------------
# periodic corrector
# ---------------------------------------------------------------------------

@dataclass
class PeriodicCorrector:
    """Spectral solution of Delta w_per = V_per on the unit torus."""

    w_per: GridField
    grad: GridField
    cell_energy: float
    virial_pairing: float
    coeffs: np.ndarray = field(repr=False, default=None)

    @property
    def virial_defect(self) -> float:
        return abs(self.cell_energy + self.virial_pairing)

    @property
    def dim(self) -> int:
        return self.w_per.dim

    def _basis(self, y):
        n = self.coeffs.shape[0]
        xi = sfft.fftfreq(n, 1.0 / n)
        keep = np.abs(xi) < n / 2
        return np.exp(2j * np.pi * np.outer(np.asarray(y, dtype=float), xi[keep])), xi[keep], keep

    def evaluate_tensor(self, axes):
        """(w, grad w) on the tensor grid spanned by ``axes`` (cell units)."""
        d = self.dim
        if d == 1:
            E, xi, keep = self._basis(axes[0])
            c = self.coeffs[keep]
            w = (E @ c).real
            g = (E @ (2j * np.pi * xi * c)).real
            return w, g[None]
        E1, xi1, k1 = self._basis(axes[0])
        E2, xi2, k2 = self._basis(axes[1])
        c = self.coeffs[np.ix_(k1, k2)]
        w = (E1 @ c @ E2.T).real
        g1 = (E1 @ (2j * np.pi * xi1[:, None] * c) @ E2.T).real
        g2 = (E1 @ (2j * np.pi * xi2[None, :] * c) @ E2.T).real
        return w, np.stack([g1, g2])


def solve_periodic_corrector(assembly: PotentialAssembly, n: int | None = None,
                             mean_tol: float = 1e-8) -> PeriodicCorrector:
    """Solve the cell problem by dividing Fourier coefficients by -|2 pi xi|^2."""
    d = assembly.dim
    n = n or (512 if d == 1 else 128)
    grid = GridField(np.zeros((n,) * d), (1.0 / n,) * d, (0.0,) * d, 0, "periodic")
    V = sample_V_per(assembly, grid, 1.0).values
    if abs(V.mean()) > mean_tol:
        raise ValueError(f"sampled V_per has cell mean {V.mean():.3e} above {mean_tol:g}")
    Vh = sfft.fftn(V) / V.size
    xi = sfft.fftfreq(n, 1.0 / n)
    mesh = np.meshgrid(*([xi] * d), indexing="ij")
    k2 = sum((2 * np.pi * m) ** 2 for m in mesh)
    k2[(0,) * d] = 1.0
    wh = -Vh / k2
    wh[(0,) * d] = 0.0
    w = (sfft.ifftn(wh) * V.size).real
    grads = []
    for m in mesh:
        gh = 2j * np.pi * m * wh
        gh[np.abs(m) >= n / 2] = 0.0
        grads.append((sfft.ifftn(gh) * V.size).real)
    grad = np.stack(grads)
    energy = float(np.mean(np.sum(grad**2, axis=0)))
    virial = float(np.mean(V * w))
    return PeriodicCorrector(grid.with_values(w), GridField(grad, grid.spacing, grid.origin, 1, "periodic"),
                             energy, virial, wh)


def trig_cell_energy(periodic) -> float:
    """<|grad w_per|^2> for a pure trigonometric V_per (no bump): sum (a^2 + b^2) / (2 |2 pi m|^2).

    Modes must have distinct frequencies up to sign.
    """
    total = 0.0
    for m, a, b in periodic.modes:
        k2 = (2 * np.pi) ** 2 * float(np.dot(m, m))
        total += (a * a + b * b) / (2 * k2)
    return total


def _cell_samples(assembly, n):
    d = assembly.dim
    grid = GridField(np.zeros((n,) * d), (1.0 / n,) * d, (0.0,) * d, 0, "periodic")
    if assembly.bump.amplitude == 0:
        return assembly.periodic.value(grid.points()).reshape(grid.shape)
    return sample_V_per(assembly, grid, 1.0).values


def discrete_cell_mean(assembly: PotentialAssembly, n: int) -> float:
    """Nodal mean of V_per on n nodes per cell.

    Zero in the continuum; the lumped scheme sees it as a shift <V>_h / eps.
    """
    return float(_cell_samples(assembly, n).mean())


def discrete_cell_constant(assembly: PotentialAssembly, n: int) -> float:
    """Homogenized constant of the finite-difference scheme with n nodes per cell.

    Solves the periodic cell problem with the 3/5-point Laplacian (symbol
    sum_i 4 n^2 sin^2(pi xi_i / n)) and returns -<V_per w_h>; this is the
    limit seen by the discretized eps-problem at fixed h/eps = 1/n.
    """
    Vh = sfft.fftn(_cell_samples(assembly, n)) / n**assembly.dim
    d = assembly.dim
    xi = sfft.fftfreq(n, 1.0 / n)
    mesh = np.meshgrid(*([xi] * d), indexing="ij")
    sym = sum(4 * n * n * np.sin(np.pi * m / n) ** 2 for m in mesh)
    sym[(0,) * d] = np.inf
    return float(np.sum(np.abs(Vh) ** 2 / sym))


# ---------------------------------------------------------------------------
# lattice sums with a Chebyshev far field (2D)
# ---------------------------------------------------------------------------

def truncated_sites(assembly, radius, center=None):
    """Integer box covering B_radius with Z zeroed outside the ball."""
    d = assembly.dim
    c = np.zeros(d, dtype=np.int64) if center is None else np.asarray(center, dtype=np.int64)
    r = int(math.floor(radius))
    lo, hi = c - r, c + r
    zb = evaluate_box(assembly.seq, d, lo, hi)
    mask = LatticeWindow(d, tuple(c), radius).mask(lo, hi)
    return lo, zb * mask


def _restrict_sites(lo, zb, ylo, yhi, rad):
    """Sub-box of sites within ``rad`` cells of the point range [ylo, yhi]."""
    a = np.maximum(np.floor(ylo).astype(np.int64) - rad, lo)
    b = np.minimum(np.floor(yhi).astype(np.int64) + rad, lo + np.array(zb.shape[1:]) - 1)
    if np.any(b < a):
        return a, np.zeros((zb.shape[0],) + tuple(np.maximum(b - a + 1, 0)))
    sl = tuple(slice(int(x - l), int(y - l) + 1) for x, y, l in zip(a, b, lo))
    return a, zb[(slice(None),) + sl]


def _cheb_nodes(p):
    j = np.arange(p)
    return 0.5 - 0.5 * np.cos((2 * j + 1) * np.pi / (2 * p))


def _bary_matrix(nodes, t):
    """Barycentric interpolation matrix (len(t), len(nodes)) for first-kind Chebyshev nodes."""
    p = len(nodes)
    j = np.arange(p)
    w = (-1.0) ** j * np.sin((2 * j + 1) * np.pi / (2 * p))
    diff = t[:, None] - nodes[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-15)
    diff[exact] = 1.0
    M = w[None, :] / diff
    M /= M.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    if rows.any():
        M[rows] = exact[rows].astype(float)
    return M


def _far_field_2d(y, lo, zb, rad, mass, kind, n_cheb=8, order=None):
    """Far part (sites with |k - floor(y)|_inf > rad) of the 2D lattice sums.

    Uses exterior multipole kernels, exact outside the bump support:
    ``kind="wt"`` gives D^2 U(s) Z = -(M/2pi) conj(zeta / s^2) and
    ``kind="w2"`` gives (M/2pi) sum_{n>=2} conj(zeta^n / s^(n+1)),
    with complex numbers standing for planar vectors.
    """
    if mass == 0 or not np.any(zb):
        return np.zeros_like(y)
    zeta = zb[0] + 1j * zb[1]
    zsup = float(np.abs(zeta).max())
    if kind == "w2":
        q = zsup / rad
        if q >= 0.6:
            raise ValueError("near-zone radius too small for the multipole far field")
        if order is None:
            order = 2 if q == 0 else max(2, int(math.ceil(math.log(1e-14) / math.log(q))) + 1)
        powers = list(range(2, order + 1))
    else:
        powers = [1]
    cells = np.floor(y).astype(np.int64)
    mlo = cells.min(axis=0)
    mhi = cells.max(axis=0)
    nm = mhi - mlo + 1
    ns = np.array(zeta.shape)
    jlo = mlo - (lo + ns - 1)
    nk = nm + ns - 1
    ja = [np.arange(jlo[i], jlo[i] + nk[i]) for i in range(2)]
    J0, J1 = np.meshgrid(*ja, indexing="ij")
    excl = (np.abs(J0) <= rad) & (np.abs(J1) <= rad)
    nodes = _cheb_nodes(n_cheb)
    size = [sfft.next_fast_len(int(n)) for n in nk]
    wts = {p: sfft.fftn(np.conj(zeta) ** p, size) for p in powers}
    vals = np.zeros((n_cheb, n_cheb) + tuple(nm), dtype=complex)
    sl = tuple(slice(int(s - 1), int(s - 1 + n)) for s, n in zip(ns, nm))
    for a, ca in enumerate(nodes):
        for b, cb in enumerate(nodes):
            s = np.conj((J0 + ca) + 1j * (J1 + cb))
            s[excl] = 1.0
            inv = 1.0 / s
            inv[excl] = 0.0
            acc = np.zeros(size, dtype=complex)
            kp = inv ** (powers[0] + 1)
            for p in powers:
                acc += wts[p] * sfft.fftn(kp, size)
                kp = kp * inv
            vals[a, b] = sfft.ifftn(acc)[sl]
    vals *= (-1.0 if kind == "wt" else 1.0) * mass / (2 * np.pi)
    t = y - cells
    B0 = _bary_matrix(nodes, t[:, 0])
    B1 = _bary_matrix(nodes, t[:, 1])
    idx = tuple((cells - mlo).T)
    cv = vals[(slice(None), slice(None)) + idx]  # (p, p, P)
    out = np.einsum("pa,pb,abp->p", B0, B1, cv)
    return np.stack([out.real, out.imag], axis=1)


def lattice_gradient(assembly, y, kind, radius, method="closed", near_rad=6, n_cheb=8,
                     tq=16, panels=32, sites=None):
    """grad w~ (``kind="wt"``) or grad w2 (``kind="w2"``) at points y (cell units).

    Sites are restricted to the ball of ``radius`` about the origin.  In 1D
    the kernels are compactly supported and the sum is purely local.  In 2D
    sites within ``near_rad`` cells are summed directly and the rest through
    the multipole far field.  ``method`` selects the closed-form Taylor
    remainder or its Gauss-Legendre quadrature for w2.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    d = assembly.dim
    lo, zb = truncated_sites(assembly, radius) if sites is None else sites
    zsup = float(np.abs(zb).max()) if zb.size else 0.0
    a = assembly.bump.support_radius
    if kind == "wt":
        mode = kernels.GRAD_WT
        reach = int(math.ceil(a))
    elif kind == "w2":
        mode = kernels.GRAD_W2_CLOSED if method == "closed" else kernels.GRAD_W2_QUAD
        reach = int(math.ceil(a + zsup))
    else:
        raise ValueError(f"unknown lattice field {kind!r}")
    terms = assembly.bump.terms()
    if d == 1:
        slo, szb = _restrict_sites(lo, zb, y.min(axis=0), y.max(axis=0), reach)
        if szb.size == 0:
            return np.zeros_like(y)
        return kernels.local_sum(y, szb, slo, reach, mode, terms, tq=tq, panels=panels)
    rad = max(near_rad, reach + 1)
    near = kernels.local_sum(y, zb, lo, rad, mode, terms, tq=tq, panels=panels)
    far = _far_field_2d(y, lo, zb, rad, assembly.bump.integral, kind, n_cheb=n_cheb)
    return near + far


# ---------------------------------------------------------------------------
# renormalization constant
# ---------------------------------------------------------------------------

def renorm_constant(assembly, rho, radius, n_theta=96, n_r=24):
    """Mean of grad w~ over the ball B_rho (cell units), computed per site.

    Each site contributes Z_k^T int_{B_rho} D^2 U(y - k) dy.  Sites deep inside
    the ball give (int phi / d) Z_k exactly, sites far outside give the
    exterior harmonic value, and sites whose bump meets the sphere are
    integrated in polar coordinates about the bump center, split where the
    ray crosses the sphere.
    """
    d = assembly.dim
    lo, zb = truncated_sites(assembly, radius)
    k = np.stack(np.meshgrid(*[np.arange(lo[i], lo[i] + zb.shape[1 + i]) for i in range(d)],
                             indexing="ij"), axis=-1).reshape(-1, d).astype(float)
    Z = zb.reshape(d, -1).T
    nz = np.any(Z != 0, axis=1)
    k, Z = k[nz], Z[nz]
    prof = assembly.bump.profile
    if d == 1:
        h = prof.antiderivative(rho - k[:, 0]) - prof.antiderivative(-rho - k[:, 0])
        return np.array([np.sum(Z[:, 0] * h) / (2 * rho)])
    if d != 2:
        raise ValueError("renorm_constant supports dim 1 and 2")
    a = assembly.bump.support_radius
    M = assembly.bump.integral
    r = np.linalg.norm(k, axis=1)
    total = np.zeros(2)
    inner = r <= rho - a
    total += 0.5 * M * Z[inner].sum(axis=0)
    outer = r >= rho + a
    if outer.any():
        ko, zo, ro = k[outer], Z[outer], r[outer]
        kz = np.einsum("ij,ij->i", ko, zo)
        total += (M * rho**2 / 2) * (zo / ro[:, None] ** 2 - 2 * ko * (kz / ro**4)[:, None]).sum(axis=0)
    band = ~(inner | outer)
    if band.any():
        th = 2 * np.pi * np.arange(n_theta) / n_theta
        e = np.stack([np.cos(th), np.sin(th)], axis=1)
        gx, gw = np.polynomial.legendre.leggauss(n_r)
        for kk, zz in zip(k[band], Z[band]):
            # x = s e about the bump center; inside the big ball iff |kk + s e| < rho
            b = e @ kk
            c0 = kk @ kk - rho**2
            disc = b * b - c0
            acc = np.zeros(2)
            for it in range(n_theta):
                cuts = [0.0, a]
                if disc[it] > 0:
                    sq = math.sqrt(disc[it])
                    for root in (-b[it] - sq, -b[it] + sq):
                        if 0 < root < a:
                            cuts.append(root)
                cuts.sort()
                for s0, s1 in zip(cuts[:-1], cuts[1:]):
                    s = 0.5 * (s0 + s1) + 0.5 * (s1 - s0) * gx
                    w = 0.5 * (s1 - s0) * gw * s * (2 * np.pi / n_theta)
                    x = s[:, None] * e[it]
                    phi = prof.value(x)
                    y = kk + x
                    ry = np.linalg.norm(y, axis=1)
                    if np.linalg.norm(kk + 0.5 * (s0 + s1) * e[it]) < rho:
                        acc += 0.5 * zz * np.sum(w * phi)
                    else:
                        yz = y @ zz
                        val = (rho**2 / 2) * (zz[None, :] / ry[:, None] ** 2
                                              - 2 * y * (yz / ry**4)[:, None])
                        acc += (w * phi) @ val
            total += acc
    return total / (np.pi * rho**2)


# ---------------------------------------------------------------------------
# corrector pieces
# ---------------------------------------------------------------------------

def closed_grid(dim, eps, n_per_eps, box=(0.0, 1.0)):
    """Physical grid with spacing eps / n_per_eps covering ``box`` including its ends."""
    h = eps / n_per_eps
    L = box[1] - box[0]
    N = int(round(L / h))
    if abs(N * h - L) > 1e-9 * L:
        raise ValueError("box length must be a multiple of the grid spacing")
    return GridField(np.zeros((N + 1,) * dim), (h,) * dim, (box[0],) * dim)


def _cell_axes(grid, eps):
    return [grid.axis(i) / eps for i in range(grid.dim)]


def _vector_field(grid, vals):
    return GridField(vals.T.reshape((grid.dim,) + grid.shape), grid.spacing, grid.origin, 1, grid.boundary)


@dataclass
class FirstOrderCorrector:
    """grad w~_eps on a physical grid and its renormalization constant."""

    epsilon: float
    beta: float
    raw_gradient: GridField
    renorm_constant: np.ndarray
    tail_budget: float = 0.0
    rho: float = 0.0

    @property
    def gradient(self) -> GridField:
        c = self.renorm_constant.reshape((-1,) + (1,) * self.raw_gradient.dim)
        return self.raw_gradient.with_values(self.raw_gradient.values - c)


def default_beta(eps, exponent=1.5):
    return eps**exponent


def build_first_order(assembly, eps, R, grid, beta=None, renorm_center=None) -> FirstOrderCorrector:
    """grad w~ over the grid (physical coordinates), renormalized over B_{4R}."""
    beta = default_beta(eps) if beta is None else beta
    if beta / eps > 0.25:
        raise ValueError(f"truncation beta/eps = {beta / eps:.3f} exceeds 1/4")
    radius = 1.0 / beta
    y = grid.points() / eps
    g = lattice_gradient(assembly, y, "wt", radius)
    rho = 4 * R / eps
    C = renorm_constant(assembly, rho, radius)
    return FirstOrderCorrector(eps, beta, _vector_field(grid, g), C, 0.0, rho)


@dataclass
class SecondOrderCorrector:
    """grad w2 on a physical grid."""

    grad: GridField
    sup_norm: float
    tail_bound: float
    radius: float


def w2_tail_bound(assembly, radius, y_extent):
    """Bound on the neglected sites |k| > radius, from the exact r^-(d+1) far field."""
    d = assembly.dim
    if d == 1:
        return 0.0
    lo, zb = truncated_sites(assembly, 2 * radius)
    zsup = float(np.abs(zb).max()) if zb.size else 0.0
    gap = radius - y_extent - zsup
    if gap <= 1:
        return math.inf
    M = abs(assembly.bump.integral)
    # |grad u_ij| <= (M/pi) r^-3 outside the support; sum over |k| > radius ~ 2 pi / gap
    return 0.5 * zsup**2 * (M / np.pi) * 2 * np.pi / gap


def build_second_order(assembly, eps, grid, radius=None, method="closed", tail_tol=1e-2) -> SecondOrderCorrector:
    """grad w2 over the grid with sites truncated to B_radius (default 1/beta)."""
    radius = 1.0 / default_beta(eps) if radius is None else radius
    y = grid.points() / eps
    g = lattice_gradient(assembly, y, "w2", radius, method=method)
    sup = float(np.linalg.norm(g, axis=1).max()) if len(g) else 0.0
    extent = float(np.linalg.norm(y, axis=1).max())
    tail = w2_tail_bound(assembly, radius, extent)
    if sup > 0 and tail > tail_tol * sup:
        raise TailBudgetError(f"w2 tail bound {tail:.2e} exceeds {tail_tol:g} of sup norm {sup:.2e}; "
                              f"increase the truncation radius")
    return SecondOrderCorrector(_vector_field(grid, g), sup, tail, radius)


@dataclass
class CorrectorBundle:
    """Assembled corrector W = w_per - W~ + w2 on a closed physical grid."""

    epsilon: float
    R: float
    periodic: PeriodicCorrector
    first: FirstOrderCorrector
    second: SecondOrderCorrector
    gradient: GridField
    value: GridField
    V: GridField
    residual: float
    w_per_gradient: GridField = None

    def manifest(self):
        return {"epsilon": self.epsilon, "R": self.R, "beta": self.first.beta,
                "renorm_constant": self.first.renorm_constant.tolist(), "residual": self.residual,
                "w2_sup": self.second.sup_norm, "w2_tail_bound": self.second.tail_bound,
                "tail_budget": self.first.tail_budget}


def _cumtrapz4(g, h, axis):
    """Cumulative trapezoid with the Euler-Maclaurin end correction (fourth order)."""
    g = np.moveaxis(g, axis, 0)
    trap = np.concatenate([np.zeros((1,) + g.shape[1:]), np.cumsum(0.5 * h * (g[1:] + g[:-1]), axis=0)])
    dg = np.gradient(g, h, axis=0, edge_order=2)
    return np.moveaxis(trap - (h * h / 12) * (dg - dg[:1]), 0, axis)


def path_integrate(grad: GridField, eps: float) -> GridField:
    """W in cell units from grad W by path integration, W(first node) = 0.

    The path runs along axis 0 on the first row, then along axis 1.
    """
    hy = np.array(grad.spacing) / eps
    g = grad.values
    if grad.dim == 1:
        return GridField(_cumtrapz4(g[0], hy[0], 0), grad.spacing, grad.origin)
    row = _cumtrapz4(g[0][:, 0], hy[0], 0)
    cols = _cumtrapz4(g[1], hy[1], 1)
    return GridField(row[:, None] + cols, grad.spacing, grad.origin)


def corrector_residual(grad: GridField, V: GridField, eps: float) -> float:
    """max over interior nodes of |div_h grad W - V| in cell units (centered differences).

    In 1D this equals the 3-point Laplacian of the trapezoid-reconstructed W.
    """
    hy = np.array(grad.spacing) / eps
    div = 0.0
    inner = tuple(slice(1, -1) for _ in range(grad.dim))
    for i in range(grad.dim):
        g = grad.values[i]
        up = [slice(1, -1)] * grad.dim
        dn = [slice(1, -1)] * grad.dim
        up[i] = slice(2, None)
        dn[i] = slice(None, -2)
        div = div + (g[tuple(up)] - g[tuple(dn)]) / (2 * hy[i])
    return float(np.abs(div - V.values[inner]).max())


def assemble(periodic: PeriodicCorrector, first: FirstOrderCorrector, second: SecondOrderCorrector,
             assembly, eps, R) -> CorrectorBundle:
    """grad W = grad w_per - (grad w~ - C) + grad w2 on the common grid."""
    g1 = first.gradient
    g2 = second.grad
    if not g1.same_grid(g2):
        raise ValueError("corrector pieces live on different grids")
    axes = _cell_axes(g1, eps)
    _, gp = periodic.evaluate_tensor(axes)
    gper = g1.with_values(gp)
    grad = g1.with_values(gp - g1.values + g2.values)
    V = sample_V(assembly, GridField(np.zeros(g1.shape), g1.spacing, g1.origin), eps)
    res = corrector_residual(grad, V, eps)
    value = path_integrate(grad, eps)
    return CorrectorBundle(eps, R, periodic, first, second, grad, value, V, res, gper)


def build_bundle(assembly, eps, n_per_eps=32, R=None, box=(0.0, 1.0), beta=None, periodic=None,
                 method="closed", grid=None) -> CorrectorBundle:
    """All corrector pieces on the closed grid of ``box`` and their assembly."""
    d = assembly.dim
    R = math.sqrt(d) * (box[1] - box[0]) if R is None else R
    grid = closed_grid(d, eps, n_per_eps, box) if grid is None else grid
    periodic = solve_periodic_corrector(assembly) if periodic is None else periodic
    beta = default_beta(eps) if beta is None else beta
    first = build_first_order(assembly, eps, R, grid, beta)
    second = build_second_order(assembly, eps, grid, 1.0 / beta, method=method)
    return assemble(periodic, first, second, assembly, eps, R)


# ---------------------------------------------------------------------------
# homogenized constant
# ---------------------------------------------------------------------------

def dirichlet_eigenvalues(dim, L):
    """The L smallest Dirichlet eigenvalues of -Delta on (0,1)^dim, with multiplicity."""
    if dim == 1:
        return [(l * np.pi) ** 2 for l in range(1, L + 1)]
    vals = sorted(np.pi**2 * (a * a + b * b) for a in range(1, L + 2) for b in range(1, L + 2))
    return vals[:L]


@dataclass
class HomogenizedModel:
    M: float
    method: str
    nu: float = 0.0
    dim: int = 1
    details: dict = field(default_factory=dict)

    def spectrum_targets(self, L):
        return [mu - self.M for mu in dirichlet_eigenvalues(self.dim, L)]


def sub_balls(dim, box=(0.0, 1.0)):
    """Four disjoint sub-balls of the box: quarter intervals in 1D, quadrant disks in 2D."""
    a, b = box
    L = b - a
    if dim == 1:
        return [((a + (i + 0.5) * L / 4,), L / 8) for i in range(4)]
    return [((a + (i + 0.5) * L / 2, a + (j + 0.5) * L / 2), L / 4 * 0.95) for i in range(2) for j in range(2)]


def _ball_mask(grid, center, radius):
    return np.linalg.norm(grid.points() - np.asarray(center), axis=1).reshape(grid.shape) <= radius


def _ball_mean(field_values, grid, center, radius):
    """Mean over the ball; trapezoid rule on the sub-interval in 1D, node mean in 2D."""
    m = _ball_mask(grid, center, radius)
    if grid.dim == 1:
        w = m.astype(float)
        idx = np.nonzero(m)[0]
        if len(idx) > 1:
            w[idx[0]] = w[idx[-1]] = 0.5
        return (field_values[..., m] * w[m]).sum(axis=-1) / w.sum()
    return field_values[..., m].mean(axis=-1)


def richardson(eps, values, points=3):
    """Least-squares fit v = M + c eps over the last ``points`` ladder entries."""
    e = np.asarray(eps, dtype=float)[-points:]
    v = np.asarray(values, dtype=float)[-points:]
    A = np.stack([np.ones_like(e), e], axis=1)
    coef, *_ = np.linalg.lstsq(A, v, rcond=None)
    return float(coef[0]), float(coef[1])


def estimate_M_empirical(bundles, box=(0.0, 1.0)) -> HomogenizedModel:
    """Domain and sub-ball averages of |grad W(x/eps)|^2 along a ladder, extrapolated in eps."""
    if len(bundles) < 3:
        raise ValueError("estimate_M_empirical needs at least 3 eps values")
    eps, dom, spread, subs = [], [], [], []
    for b in bundles:
        g = b.gradient
        e2 = np.sum(g.values**2, axis=0)
        eps.append(b.epsilon)
        w = _trapezoid_weights(g)
        dom.append(float(np.sum(e2 * w) / np.sum(w)))
        s = [float(_ball_mean(e2, g, c, r)) for c, r in sub_balls(g.dim, box)]
        subs.append(s)
        spread.append((max(s) - min(s)) / max(abs(np.mean(s)), 1e-300))
    order = np.argsort(eps)[::-1]
    eps = [eps[i] for i in order]
    dom = [dom[i] for i in order]
    spread = [spread[i] for i in order]
    subs = [subs[i] for i in order]
    M, slope = richardson(eps, dom)
    shrinking = bool(spread[-1] <= spread[0])
    return HomogenizedModel(M, "empirical", dim=bundles[0].gradient.dim,
                            details={"eps": eps, "domain_means": dom, "sub_ball_means": subs,
                                     "spread": spread, "spread_shrinking": shrinking,
                                     "finest": dom[-1], "slope": slope})


def _integral_phi_hessU(assembly, lag, n=24, panels=6):
    """int phi(x) D^2 U(x - l) dx by tensor Gauss-Legendre over the support box."""
    bump = assembly.bump
    d = assembly.dim
    a = bump.support_radius
    gx, gw = np.polynomial.legendre.leggauss(n)
    edges = np.linspace(-a, a, panels + 1)
    half = 0.5 * np.diff(edges)
    pts = ((edges[:-1] + half)[:, None] + half[:, None] * gx).ravel()
    wts = (half[:, None] * gw).ravel()
    mesh = np.meshgrid(*([pts] * d), indexing="ij")
    X = np.stack([m.ravel() for m in mesh], axis=1)
    W = np.prod(np.meshgrid(*([wts] * d), indexing="ij"), axis=0).ravel()
    f = bump.profile.value(X) * W
    H = bump.profile.hess_U(X - np.asarray(lag, dtype=float))
    return np.einsum("n,nij->ij", f, H)


def _w2_density_1d(prof, z, x):
    """g(z, x) = z^2 int_0^1 (1-t) phi'(x - t z) dt = z phi(x) - (Phi(x) - Phi(x - z))."""
    return z * prof.value(x[:, None]) - (prof.antiderivative(x) - prof.antiderivative(x - z))


def estimate_M_formula(correlation, assembly, seq_window=None, tail_tol=1e-4) -> dict:
    """Correlation-driven parts of M: M~ = sum_l C_{l,ij} int phi d_i u_j(. - l) and, in 1D, M2.

    ``seq_window`` = (LatticeSequence, LatticeWindow) enables the 1D M2 sum
    kappa = sum_l C_{F_l, l} with F_l(y, z) = int g(y, x) g(z, x - l) dx.
    """
    d = assembly.dim
    lags = correlation.lags
    vals = correlation.values
    contrib = np.zeros(len(lags))
    for i, (lag, C) in enumerate(zip(lags, vals)):
        if not np.any(C):
            continue
        I = _integral_phi_hessU(assembly, lag)
        contrib[i] = float(np.sum(C * I))
    Mt = float(contrib.sum())
    r = np.linalg.norm(lags, axis=1)
    L = r.max()
    shell = float(np.abs(contrib[r > L - 1]).sum())
    tail_ok = shell <= tail_tol * max(abs(Mt), 1e-300) or shell == 0.0
    if not tail_ok:
        raise TailBudgetError(f"lag cutoff insufficient: outer shell {shell:.2e} vs partial sum {Mt:.2e}")
    out = {"M_tilde": Mt, "shell": shell, "M2": None}
    if d == 1 and seq_window is not None:
        out["M2"] = _kappa_w2_1d(assembly, *seq_window)
    return out


def _kappa_w2_1d(assembly, seq, window, nx=2001):
    prof = assembly.bump.profile
    a = assembly.bump.support_radius
    lo, hi = window.bounds()
    z = seq.box(np.array([lo[0] - 2]), np.array([hi[0] + 2]))[0]
    zsup = float(np.abs(z).max()) if z.size else 0.0
    span = a + zsup
    x = np.linspace(-span, span, nx)
    dx = x[1] - x[0]
    L = int(math.ceil(2 * span))
    total = 0.0
    ks = np.arange(lo[0], hi[0] + 1)
    zk = z[ks - (lo[0] - 2)]
    g_cache = {}
    for kk, zz in zip(ks, zk):
        if zz not in g_cache:
            g_cache[zz] = _w2_density_1d(prof, zz, x)
    for lag in range(-L, L + 1):
        acc = 0.0
        for kk, zz in zip(ks, zk):
            z2 = z[kk + lag - (lo[0] - 2)] if lo[0] - 2 <= kk + lag <= hi[0] + 2 else 0.0
            if zz == 0 or z2 == 0:
                continue
            g2 = g_cache.get(z2)
            if g2 is None:
                g2 = g_cache[z2] = _w2_density_1d(prof, z2, x)
            # F_l = int g(y, x) g(z, x - l) dx on the shifted grid
            shift = int(round(lag / dx))
            if abs(lag / dx - shift) > 1e-9:
                g2s = np.interp(x - lag, x, g2, left=0.0, right=0.0)
            else:
                g2s = np.roll(g2, shift)
                if shift > 0:
                    g2s[:shift] = 0.0
                elif shift < 0:
                    g2s[shift:] = 0.0
            acc += float(np.sum(g_cache[zz] * g2s) * dx)
        total += acc / len(ks)
    return total


# ---------------------------------------------------------------------------
# 1D oracle and the lattice-sum route to M
# ---------------------------------------------------------------------------

def defect_average(assembly, y, sites_lo, z):
    """A(y) = sum_k Z_k int_0^1 phi(y - k - t Z_k) dt = sum_k Phi(y - k) - Phi(y - k - Z_k)."""
    prof = assembly.bump.profile
    a = assembly.bump.support_radius
    out = np.zeros(len(y))
    zsup = float(np.abs(z).max()) if z.size else 0.0
    reach = int(math.ceil(a + zsup))
    base = np.floor(y).astype(np.int64)
    for off in range(-reach, reach + 1):
        k = base + off
        idx = k - sites_lo
        ok = (idx >= 0) & (idx < len(z))
        zz = np.where(ok, z[np.clip(idx, 0, len(z) - 1)], 0.0)
        s = y - k
        out += np.where(zz != 0, prof.antiderivative(s) - prof.antiderivative(s - zz), 0.0)
    return out


def oracle_corrector_1d(assembly, eps, x, radius=None, convention="sublinear", periodic=None,
                        average_radius=1024):
    """Closed-form w'(x/eps) in 1D and its constant C.

    w' = w'_per - sum_k Z_k int_0^1 phi(. - k - t Z_k) dt + C.  With int phi = 0
    the constant is 0.  Otherwise C = +<Z> int phi (``convention="sublinear"``,
    the value that gives w' zero mean) or C = -<Z> int phi
    (``convention="negative"``).  A Cesaro-average diagnostic must pass.
    """
    if assembly.dim != 1:
        raise ValueError("oracle_corrector_1d requires dim 1")
    x = np.asarray(x, dtype=float)
    y = x / eps
    radius = 1.0 / default_beta(eps) if radius is None else radius
    lo, zb = truncated_sites(assembly, radius)
    A = defect_average(assembly, y, lo[0], zb[0])
    m = assembly.bump.integral
    if abs(m) <= 1e-12:
        C = 0.0
    else:
        ok, avg, spread = average_diagnostic(assembly.seq, 1, average_radius)
        if not ok:
            raise ValueError(f"sequence shows no Cesaro average (spread {spread:.3e})")
        sign = {"sublinear": 1.0, "negative": -1.0}[convention]
        C = sign * float(avg[0]) * m
    periodic = solve_periodic_corrector(assembly) if periodic is None else periodic
    _, gp = periodic.evaluate_tensor([y])
    return gp[0] - A + C, C


def _autocorrelation(prof, a, n=4001):
    """psi(u) = int phi(x) phi(x - u) dx on a uniform u-grid over [-2a, 2a]."""
    x = np.linspace(-a, a, n)
    dx = x[1] - x[0]
    f = prof.value(x[:, None])
    full = np.correlate(f, f, mode="full") * dx
    u = dx * np.arange(-(n - 1), n)
    return u, full


def estimate_M_oneD(assembly, eps_list, box=(0.0, 1.0), periodic=None, renorm_R=None,
                    n_t=24, radius_fn=None) -> HomogenizedModel:
    """M along a 1D ladder from lattice sums, extrapolated in eps.

    For the window Omega/eps the mean of |w'|^2 splits into
    <|w'_per|^2> + S/|Omega| - 2 X + C^2 - 2 C <A>, where
    S = sum_l sum_k F_l(Z_k, Z_{k+l}) with
    F_l(y, z) = y z int phi(x) int int phi(x - l + t y - s z) dt ds,
    X = sum_k Z_k int_0^1 g(t Z_k) dt with g(s) = int phi(x) w'_per(x + s) dx,
    and C is the renormalization constant over B_{4R/eps}.
    """
    if assembly.dim != 1:
        raise ValueError("estimate_M_oneD requires dim 1")
    if len(eps_list) < 3:
        raise ValueError("estimate_M_oneD needs at least 3 eps values")
    prof = assembly.bump.profile
    a = assembly.bump.support_radius
    m = assembly.bump.integral
    periodic = solve_periodic_corrector(assembly) if periodic is None else periodic
    E_per = periodic.cell_energy
    R = (box[1] - box[0]) if renorm_R is None else renorm_R
    # g(s) Fourier coefficients: g_hat_m = conj(phi_hat_m) * (w'_per)_hat_m
    n = periodic.coeffs.shape[0]
    xs = np.arange(n) / n
    phi_per = np.zeros(n)
    for sh in range(-1, 2):
        phi_per += prof.value((xs - sh)[:, None])
    xi = sfft.fftfreq(n, 1.0 / n)
    wp_hat = 2j * np.pi * xi * periodic.coeffs
    wp_hat[np.abs(xi) >= n / 2] = 0.0
    phi_hat = sfft.fft(phi_per) / n
    g_hat = np.conj(phi_hat) * wp_hat
    u_grid, psi = _autocorrelation(prof, a)
    tg, tw = np.polynomial.legendre.leggauss(n_t)
    tg = 0.5 * (tg + 1)
    tw = 0.5 * tw
    out = []
    for eps in eps_list:
        radius = 1.0 / default_beta(eps) if radius_fn is None else radius_fn(eps)
        lo, zb = truncated_sites(assembly, radius)
        z_all = zb[0]
        k0 = int(math.floor(box[0] / eps))
        k1 = int(math.ceil(box[1] / eps))
        ks = np.arange(k0, k1)
        zk = z_all[ks - lo[0]]
        width = (box[1] - box[0]) / eps
        Lmax = int(math.ceil(2 * a + 2 * float(np.abs(zk).max(initial=0.0))))
        S = 0.0
        for lag in range(-Lmax, Lmax + 1):
            kl = ks + lag
            ok = (kl >= lo[0]) & (kl < lo[0] + len(z_all))
            zl = np.where(ok, z_all[np.clip(kl - lo[0], 0, len(z_all) - 1)], 0.0)
            nz = (zk != 0) & (zl != 0)
            if not nz.any():
                continue
            yv, zv = zk[nz], zl[nz]
            arg = lag - yv[:, None, None] * tg[None, :, None] + zv[:, None, None] * tg[None, None, :]
            F = np.interp(arg, u_grid, psi, left=0.0, right=0.0)
            F = np.einsum("nij,i,j->n", F, tw, tw) * yv * zv
            S += float(F.sum())
        # X: sum_k Z_k int_0^1 g(t Z_k) dt via Fourier series of g
        nzk = zk != 0
        zz = zk[nzk]
        ph = 2j * np.pi * np.outer(zz, xi)
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.where(np.abs(ph) > 1e-12, (np.exp(ph) - 1) / np.where(ph == 0, 1, ph), 1.0)
        X = float(np.sum(zz * (fac @ g_hat).real))
        SA = float(zk.sum() * m)
        C = float(renorm_constant(assembly, 4 * R / eps, radius)[0])
        Mval = E_per + (S - 2 * X - 2 * C * SA) / width + C * C
        out.append(Mval)
    Mx, slope = richardson(eps_list, out)
    return HomogenizedModel(Mx, "oneD_Seps", dim=1,
                            details={"eps": list(eps_list), "values": out, "finest": out[-1],
                                     "E_per": E_per, "slope": slope})


# ---------------------------------------------------------------------------
# pairing V W
# ---------------------------------------------------------------------------

def smooth_bump(center, radius):
    """Test function exp(-1/(1 - |x-c|^2/r^2)) on the ball B_r(c)."""
    c = np.atleast_1d(np.asarray(center, dtype=float))

    def f(x):
        x = np.atleast_2d(x)
        q = np.sum((x - c) ** 2, axis=1) / radius**2
        out = np.zeros(len(x))
        m = q < 1
        out[m] = np.exp(-1.0 / (1.0 - q[m]))
        return out

    return f


def _trapezoid_weights(grid):
    ws = []
    for i in range(grid.dim):
        w = np.full(grid.shape[i], grid.spacing[i])
        w[0] *= 0.5
        w[-1] *= 0.5
        ws.append(w)
    if grid.dim == 1:
        return ws[0]
    return np.outer(ws[0], ws[1])


def pairing_VW(bundles, tests, M) -> dict:
    """int V(x/eps) W(x/eps) test(x) dx along a ladder, against -M int test."""
    rows = []
    for b in bundles:
        g = b.value
        w = _trapezoid_weights(g)
        pts = g.points()
        VW = b.V.values * b.value.values
        row = {"eps": b.epsilon, "pairings": [], "targets": [], "errors": []}
        for f in tests:
            tf = f(pts).reshape(g.shape)
            p = float(np.sum(VW * tf * w))
            target = -M * float(np.sum(tf * w))
            row["pairings"].append(p)
            row["targets"].append(target)
            row["errors"].append(abs(p - target))
        rows.append(row)
    return {"rows": rows}


def sublinearity(bundle, box=(0.0, 1.0)) -> float:
    """max over the domain of |eps W(x/eps)|."""
    return float(bundle.epsilon * np.abs(bundle.value.values).max())


def sub_ball_gradient_means(bundle, box=(0.0, 1.0)):
    g = bundle.gradient
    return [np.atleast_1d(_ball_mean(g.values, g, c, r)) for c, r in sub_balls(g.dim, box)]
