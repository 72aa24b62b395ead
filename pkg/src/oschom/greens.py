"""Green kernels of the Laplacian, Newtonian potentials and grid diagnostics."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import pickle
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import fft as sfft
from scipy import integrate

from .gridfield import GridField


class ConvergenceError(RuntimeError):
    """An iterative solve did not reach its tolerance."""


@dataclass(frozen=True)
class GreenKernel:
    """Fundamental solution with Delta G = delta on R^dim.

    d=1: |x|/2, d=2: ln|x|/(2 pi), d=3: -1/(4 pi |x|).
    """

    dim: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError("GreenKernel supports dim 1, 2, 3")

    def value(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x, axis=1)
        if self.dim == 1:
            return 0.5 * r
        with np.errstate(divide="ignore"):
            if self.dim == 2:
                return np.log(r) / (2 * np.pi)
            return -1.0 / (4 * np.pi * r)

    def gradient(self, x):
        """C(d) x / |x|^d with C(1) = 1/2, C(2) = 1/(2 pi), C(3) = 1/(4 pi)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x, axis=1)
        c = {1: 0.5, 2: 1 / (2 * np.pi), 3: 1 / (4 * np.pi)}[self.dim]
        with np.errstate(divide="ignore", invalid="ignore"):
            return c * x / r[:, None] ** self.dim

    def hessian(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = self.dim
        n = len(x)
        if d == 1:
            return np.zeros((n, 1, 1))
        r2 = np.einsum("ij,ij->i", x, x)
        c = {2: 1 / (2 * np.pi), 3: 1 / (4 * np.pi)}[d]
        with np.errstate(divide="ignore", invalid="ignore"):
            rd = r2 ** (d / 2)
            return c * (np.eye(d)[None] / rd[:, None, None]
                        - d * x[:, :, None] * x[:, None, :] / (rd * r2)[:, None, None])


@lru_cache(maxsize=None)
def _unit_cell_integral(dim):
    """Integral of G over the unit cube centered at the origin."""
    if dim == 1:
        return 1.0 / 8.0
    d = 0.5
    if dim == 2:
        # four triangles with apex at the origin, one per edge
        f = lambda u: 0.5 * math.log(d * d + u * u) / 2 - 0.25  # noqa: E731
        val = 4 * d * integrate.quad(f, -0.5, 0.5, epsabs=1e-15, epsrel=1e-14)[0]
        return val / (2 * np.pi)
    # six pyramids, one per face: int 1/r dV = (d/2) int_face dA / r_face
    g = lambda v, u: 1.0 / math.sqrt(d * d + u * u + v * v)  # noqa: E731
    val = 6 * (d / 2) * integrate.dblquad(g, -0.5, 0.5, -0.5, 0.5, epsabs=1e-14, epsrel=1e-13)[0]
    return -val / (4 * np.pi)


def self_cell_integral(dim: int, h: float) -> float:
    """Exact integral of G over the cell [-h/2, h/2]^dim."""
    base = _unit_cell_integral(dim)
    if dim == 1:
        return base * h**2
    if dim == 2:
        return h**2 * (base + math.log(h) / (2 * np.pi))
    return base * h**2


def convolve_boxes(weights, kernel, offset_lo, out_shape):
    """Aperiodic convolution restricted to the requested outputs.

    Computes out[i] = sum_j weights[j] * kernel[i - j - offset_lo] for i in
    ``out_shape``, where ``kernel[a]`` holds the kernel at lattice offset
    ``offset_lo + a``.  The kernel must cover offsets
    ``[-(n_w - 1), n_out - 1]`` shifted by ``offset_lo``; FFT size equals the
    kernel shape, so nothing wraps onto the outputs.
    """
    weights = np.asarray(weights)
    kernel = np.asarray(kernel)
    nw = np.array(weights.shape[-kernel.ndim:])
    nk = np.array(kernel.shape)
    nout = np.array(out_shape)
    if np.any(nk < nw + nout - 1):
        raise ValueError("kernel table too small for the requested outputs")
    size = [sfft.next_fast_len(int(n), real=not np.iscomplexobj(kernel)) for n in nk]
    axes = tuple(range(-kernel.ndim, 0))
    cplx = np.iscomplexobj(kernel) or np.iscomplexobj(weights)
    if cplx:
        fw = sfft.fftn(weights, size, axes=axes)
        fk = sfft.fftn(kernel, size, axes=axes)
        full = sfft.ifftn(fw * fk, size, axes=axes)
    else:
        fw = sfft.rfftn(weights, size, axes=axes)
        fk = sfft.rfftn(kernel, size, axes=axes)
        full = sfft.irfftn(fw * fk, size, axes=axes)
    start = nw - 1
    sl = tuple(slice(int(s), int(s + n)) for s, n in zip(start, nout))
    return full[(Ellipsis,) + sl]


@dataclass
class PotentialTable:
    """Sampled potential with its gradient and far-field decay fit."""

    which: str
    values: GridField
    gradient: GridField
    far_field: dict = field(default_factory=dict)

    def sidecar(self):
        return {"which": self.which, "far_field": self.far_field}


def _aligned_offset(eval_grid: GridField, dens: GridField):
    h = np.array(dens.spacing)
    he = np.array(eval_grid.spacing)
    if eval_grid.dim != dens.dim:
        raise ValueError("density and evaluation grids differ in dimension")
    if np.any(he > h * (1 + 1e-12)):
        raise ValueError("evaluation grid is coarser than the density grid (aliasing)")
    if not np.allclose(he, h, rtol=1e-12):
        raise ValueError("evaluation grid spacing must equal the density spacing")
    s = (np.array(eval_grid.origin) - np.array(dens.origin)) / h
    si = np.round(s)
    if np.any(np.abs(s - si) > 1e-8):
        raise ValueError("evaluation grid is not aligned with the density grid")
    return si.astype(np.int64)


def _kernel_table(d, h, lo, n):
    axes = [h * np.arange(lo[i], lo[i] + n[i]) for i in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    K = GreenKernel(d).value(pts).reshape([len(a) for a in axes]) * h**d
    zero = tuple(int(-lo[i]) for i in range(d))
    if all(0 <= z < K.shape[i] for i, z in enumerate(zero)):
        K[zero] = self_cell_integral(d, h)
    return K


def _check_density(psi):
    if psi.rank != 0:
        raise ValueError("density must be a scalar field")
    vals = psi.values
    edge = np.concatenate([np.take(vals, [0, -1], axis=i).ravel() for i in range(psi.dim)])
    if np.abs(edge).max(initial=0.0) > 1e-12 * max(np.abs(vals).max(initial=0.0), 1e-300):
        raise ValueError("density is not compactly supported inside its sample box")
    if not np.allclose(psi.spacing, psi.spacing[0]):
        raise ValueError("newtonian_potential needs a uniform spacing in all axes")


def newtonian_batch(psis, eval_grid: GridField, names, fit_center=None, fit_range=None):
    """Newtonian potentials of several densities sharing one grid and kernel table."""
    first = psis[0]
    for psi in psis:
        _check_density(psi)
        if not psi.same_grid(first):
            raise ValueError("batched densities must share one grid")
    d = first.dim
    h = first.spacing[0]
    s0 = _aligned_offset(eval_grid, first)
    nw = np.array(first.shape)
    nout = np.array(eval_grid.shape)
    lo = s0 - (nw - 1)
    K = _kernel_table(d, h, lo, nw + nout - 1)
    size = [sfft.next_fast_len(int(n), real=True) for n in K.shape]
    fk = sfft.rfftn(K, size)
    sl = tuple(slice(int(s), int(s + n)) for s, n in zip(nw - 1, nout))
    out = []
    for psi, name in zip(psis, names):
        u = sfft.irfftn(sfft.rfftn(psi.values, size) * fk, size)[sl]
        ufield = GridField(u, eval_grid.spacing, eval_grid.origin, 0, "none")
        if d > 1:
            grad = np.stack(np.gradient(u, *eval_grid.spacing, edge_order=2), axis=0)
        else:
            grad = np.gradient(u, eval_grid.spacing[0], edge_order=2)[None]
        gfield = GridField(grad, eval_grid.spacing, eval_grid.origin, 1, "none")
        fit = fit_decay(gfield, fit_center, *fit_range) if fit_range is not None else {}
        out.append(PotentialTable(name, ufield, gfield, fit))
    return out


def newtonian_potential(psi: GridField, eval_grid: GridField, which: str = "u",
                        fit_center=None, fit_range=None) -> PotentialTable:
    """u = G * psi by tensor midpoint quadrature with an exact self-cell.

    The density is treated as cell-constant; the singular cell integrates G
    exactly.  The gradient is taken by centered differences of u.  The
    evaluation grid must share the density spacing and be node-aligned.
    """
    return newtonian_batch([psi], eval_grid, [which], fit_center, fit_range)[0]


def fit_decay(field_: GridField, center=None, r_min=1.0, r_max=None, bins=24, floor_rel=1e-11):
    """Least-squares slope of log max|f| versus log r over radial bins in [r_min, r_max].

    Returns the exponent and constant of |f| ~ c r^p.  A field that vanishes
    (below ``floor_rel`` of its maximum) beyond ``r_min`` is reported as
    compactly supported with exponent None.
    """
    pts = field_.points()
    c = np.zeros(field_.dim) if center is None else np.asarray(center, dtype=float)
    r = np.linalg.norm(pts - c, axis=1)
    vals = field_.values.reshape(field_.ncomp, -1) if field_.rank else field_.values.reshape(1, -1)
    mag = np.linalg.norm(vals, axis=0)
    if r_max is None:
        r_max = r.max()
    sel = (r >= r_min) & (r <= r_max)
    peak = mag.max(initial=0.0)
    if not sel.any():
        raise ValueError("no samples in the fit range")
    if mag[sel].max() <= floor_rel * peak:
        return {"exponent": None, "constant": 0.0, "compact": True, "r_min": r_min, "r_max": float(r_max),
                "tail_max": float(mag[sel].max()), "peak": float(peak)}
    edges = np.geomspace(r_min, r_max, bins + 1)
    xs, ys = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        m = sel & (r >= a) & (r < b)
        if m.any():
            xs.append(np.log(np.sqrt(a * b)))
            ys.append(np.log(mag[m].max()))
    slope, icpt = np.polyfit(xs, ys, 1)
    return {"exponent": float(slope), "constant": float(np.exp(icpt)), "compact": False,
            "r_min": float(r_min), "r_max": float(r_max), "peak": float(peak)}


def bump_potentials(bump, side: float | None = None, h: float | None = None):
    """Tables of u_i = G * d_i phi and u_ij = G * d_i d_j phi on a centered box.

    Parameters
    ----------
    bump : BumpSpec
    side : float
        Side of the evaluation box (>= 16 a); defaults to 80 a in 1D and 40 a in 2D.
    h : float
        Grid spacing; defaults to a/256 in 1D and a/48 in 2D.  The midpoint
        moments of d_i d_j phi only vanish to round-off once the steep edge of
        the mollifier is resolved, and a residual monopole would dominate the
        far field.

    Returns
    -------
    dict mapping names ``"u_1"``, ``"u_12"``, ... to :class:`PotentialTable`.
    """
    a = bump.support_radius
    d = bump.dim
    side = (80 * a if d == 1 else 40 * a) if side is None else float(side)
    if side < 16 * a * (1 - 1e-12):
        raise ValueError(f"evaluation box side {side} below 16 * support radius")
    h = (a / 256 if d == 1 else a / 48) if h is None else float(h)
    nd = int(math.ceil(a / h)) + 1
    ne = int(math.floor(side / (2 * h)))
    dens_axis = h * np.arange(-nd, nd + 1)
    mesh = np.meshgrid(*([dens_axis] * d), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    grad = bump.gradient(pts)
    hess = bump.hessian(pts)
    shape = (len(dens_axis),) * d
    origin = (-nd * h,) * d
    eval_grid = GridField(np.zeros((2 * ne + 1,) * d), (h,) * d, (-ne * h,) * d)
    fit_range = (4 * a, side / 2)
    psis, names = [], []
    for i in range(d):
        psis.append(GridField(grad[:, i].reshape(shape), (h,) * d, origin))
        names.append(f"u_{i + 1}")
    for i in range(d):
        for j in range(d):
            psis.append(GridField(hess[:, i, j].reshape(shape), (h,) * d, origin))
            names.append(f"u_{i + 1}{j + 1}")
    tables = newtonian_batch(psis, eval_grid, names, fit_range=fit_range)
    return dict(zip(names, tables))


def cached_bump_potentials(bump, cache_dir=None, side=None, h=None):
    """:func:`bump_potentials` backed by a pickle cache keyed by the bump parameters.

    Without ``cache_dir`` the ``OSCHOM_CACHE`` environment variable is used;
    with neither, the tables are recomputed.
    """
    cache_dir = cache_dir or os.environ.get("OSCHOM_CACHE")
    if not cache_dir:
        return bump_potentials(bump, side, h)
    key = json.dumps({"bump": dataclasses.asdict(bump), "side": side, "h": h}, sort_keys=True)
    path = Path(cache_dir) / f"bump_{hashlib.sha256(key.encode()).hexdigest()[:16]}.pkl"
    if path.is_file():
        with open(path, "rb") as fh:
            return pickle.load(fh)
    tables = bump_potentials(bump, side, h)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(f".{os.getpid()}.tmp")
    with open(tmp, "wb") as fh:
        pickle.dump(tables, fh)
    os.replace(tmp, path)
    return tables


# ---------------------------------------------------------------------------
# bounded-domain Poisson solve
# ---------------------------------------------------------------------------

def laplacian_matrix(shape, spacing):
    """Dirichlet finite-difference Laplacian (3-point / 5-point) on interior nodes."""
    mats = []
    for n, h in zip(shape, spacing):
        mats.append(sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]) / h**2)
    if len(mats) == 1:
        return mats[0].tocsr()
    eyes = [sp.identity(n, format="csr") for n in shape]
    L = sp.kron(mats[0], eyes[1]) + sp.kron(eyes[0], mats[1])
    return L.tocsr()


def dirichlet_poisson(rhs: GridField, ball=None, rtol: float = 1e-10) -> GridField:
    """Solve Delta psi = rhs with psi = 0 outside the grid (or outside a ball).

    ``rhs`` lives on interior nodes.  With ``ball=(center, radius)`` nodes
    outside the ball are held at zero, giving a staircase Dirichlet boundary.
    CG runs on -Delta_h to relative residual ``rtol`` with an iteration cap
    of 20 N per dimension.
    """
    shape = rhs.shape
    A = -laplacian_matrix(shape, rhs.spacing)
    b = -rhs.values.ravel().astype(float)
    if not np.all(np.isfinite(b)):
        raise ValueError("rhs must be bounded")
    keep = np.ones(b.size, dtype=bool)
    if ball is not None:
        c, r = ball
        keep = np.linalg.norm(rhs.points() - np.asarray(c, dtype=float), axis=1) < r
        A = A[keep][:, keep]
        b = b[keep]
    x = np.zeros(rhs.values.size)
    if np.any(b):
        cap = 20 * max(shape) * len(shape)
        sol, info = spla.cg(A, b, rtol=rtol, atol=0.0, maxiter=cap)
        if info != 0:
            raise ConvergenceError(f"CG did not converge within {cap} iterations")
        x[keep] = sol
    return rhs.with_values(x.reshape(shape))


def bmo_seminorm(field_: GridField, max_level: int | None = None) -> float:
    """Largest mean oscillation over dyadic sub-cubes of the field's box."""
    vals = field_.values
    if field_.rank:
        vals = np.moveaxis(vals, 0, -1)
    else:
        vals = vals[..., None]
    shape = np.array(field_.shape)
    if max_level is None:
        max_level = max(0, int(math.floor(math.log2(shape.min() / 2))))
    best = 0.0
    for level in range(max_level + 1):
        cuts = [np.linspace(0, n, 2**level + 1).astype(int) for n in shape]
        for idx in np.ndindex(*(2**level,) * field_.dim):
            sl = tuple(slice(c[i], c[i + 1]) for c, i in zip(cuts, idx))
            block = vals[sl].reshape(-1, vals.shape[-1])
            if len(block) < 2:
                continue
            mo = np.linalg.norm(block - block.mean(axis=0), axis=1).mean()
            best = max(best, float(mo))
    return best
