"""The bump, the periodic part and the sampled potential fields.

The potential is V(y) = g_per(y) + sum_k phi(y - k - Z_k).  Its Taylor split in
Z reads V = V_per - V1 + V2 with

    V_per = g_per + sum_k phi(. - k)
    V1    = sum_k Z_k . grad phi(. - k)
    V2    = sum_k int_0^1 (1 - t) Z_k^T D^2 phi(. - k - t Z_k) Z_k dt.

All samplers take physical grids and evaluate at y = x / eps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .gridfield import GridField
from .lattice import Zero, descriptor_from_dict, evaluate_box
from .profile import RadialProfile

TOL_COMPAT = 1e-8


class CompatibilityError(ValueError):
    """The bump integral and the periodic mean violate the compatibility condition."""


class ResolutionError(ValueError):
    """A grid is too coarse to resolve the bump at the fine scale."""


@dataclass(frozen=True)
class BumpSpec:
    """Radial bump phi built from the standard mollifier.

    Parameters
    ----------
    dim : int
        Space dimension.
    support_radius : float
        a in (0, 1/2]; phi vanishes for |x| >= a.
    amplitude : float
        Overall factor c_phi.
    kind : {"mollifier", "zero_mean"}
        ``"mollifier"`` is c eta(|x|/a).  ``"zero_mean"`` is the difference
        c (eta(|x|/a) - 2^d eta(2|x|/a)), whose integral vanishes exactly.
    """

    dim: int = 1
    support_radius: float = 0.45
    amplitude: float = 1.0
    kind: str = "mollifier"
    quad_panels: int = 32

    def __post_init__(self):
        if not 0 < self.support_radius <= 0.5:
            raise ValueError("support radius must lie in (0, 1/2]")
        if self.kind not in ("mollifier", "zero_mean"):
            raise ValueError(f"unknown bump kind {self.kind!r}")
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")

    def terms(self):
        a, c = self.support_radius, self.amplitude
        if self.kind == "mollifier":
            return [(c, a)]
        return [(c, a), (-c * 2.0**self.dim, 0.5 * a)]

    @property
    def profile(self) -> RadialProfile:
        return _profile(self.dim, tuple(self.terms()))

    def moments(self, panels: int | None = None):
        """(int phi, int x phi) by tensor Gauss-Legendre quadrature on the support box."""
        n = panels or self.quad_panels
        a = self.support_radius
        x, w = np.polynomial.legendre.leggauss(16)
        edges = np.linspace(-a, a, n + 1)
        half = 0.5 * np.diff(edges)
        pts = ((edges[:-1] + half)[:, None] + half[:, None] * x).ravel()
        wts = (half[:, None] * w).ravel()
        mesh = np.meshgrid(*([pts] * self.dim), indexing="ij")
        P = np.stack([m.ravel() for m in mesh], axis=1)
        W = np.prod(np.meshgrid(*([wts] * self.dim), indexing="ij"), axis=0).ravel()
        f = self.profile.value(P) * W
        return float(f.sum()), f @ P

    @property
    def integral(self) -> float:
        return _moment_cache(self)[0]

    def value(self, x):
        return self.profile.value(np.atleast_2d(x))

    def gradient(self, x):
        return self.profile.gradient(np.atleast_2d(x))

    def hessian(self, x):
        return self.profile.hessian(np.atleast_2d(x))

    def to_dict(self):
        return {"support_radius": self.support_radius, "amplitude": self.amplitude, "kind": self.kind}


_PROFILES = {}
_MOMENTS = {}


def _profile(dim, terms):
    key = (dim, terms)
    if key not in _PROFILES:
        _PROFILES[key] = RadialProfile(dim, terms)
    return _PROFILES[key]


def _moment_cache(bump):
    if bump not in _MOMENTS:
        _MOMENTS[bump] = bump.moments()
    return _MOMENTS[bump]


@dataclass(frozen=True)
class PeriodicPart:
    """Trigonometric polynomial g_per(y) = c0 + sum a cos(2 pi m.y) + b sin(2 pi m.y).

    ``modes`` is a tuple of (m, a, b) with integer frequency vectors m != 0.
    """

    dim: int
    modes: tuple = ()
    mean: float = 0.0

    def __post_init__(self):
        for m, _, _ in self.modes:
            if len(m) != self.dim or not any(m):
                raise ValueError("mode frequencies must be nonzero integer vectors of length dim")

    @classmethod
    def product_cos(cls, dim, s=1.0, mean=0.0):
        """s * prod_i cos(2 pi y_i) + mean, expanded into single modes."""
        if dim == 1:
            return cls(1, (((1,), s, 0.0),), mean)
        if dim == 2:
            return cls(2, (((1, 1), 0.5 * s, 0.0), ((1, -1), 0.5 * s, 0.0)), mean)
        raise ValueError("product_cos is provided for dim 1 and 2")

    def value(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        out = np.full(len(y), float(self.mean))
        for m, a, b in self.modes:
            ph = 2 * np.pi * (y @ np.asarray(m, dtype=float))
            if a:
                out += a * np.cos(ph)
            if b:
                out += b * np.sin(ph)
        return out

    def with_mean(self, mean):
        return replace(self, mean=float(mean))

    def to_dict(self):
        return {"modes": [[list(m), a, b] for m, a, b in self.modes], "mean": self.mean}

    @classmethod
    def from_dict(cls, dim, d):
        modes = tuple((tuple(int(v) for v in m), float(a), float(b)) for m, a, b in d.get("modes", []))
        return cls(dim, modes, float(d.get("mean", 0.0)))


@dataclass(frozen=True)
class PotentialAssembly:
    """Bump, periodic part and perturbation sequence of a potential V."""

    bump: BumpSpec
    periodic: PeriodicPart
    seq: object = field(default_factory=Zero)
    tol_compat: float = TOL_COMPAT

    def __post_init__(self):
        if self.bump.dim != self.periodic.dim:
            raise ValueError("bump and periodic part have different dimensions")
        if self.compatibility_residual > self.tol_compat:
            raise CompatibilityError(
                f"int phi + <g_per> = {self.bump.integral + self.periodic.mean:.3e} violates the "
                f"compatibility condition (tolerance {self.tol_compat:g})")

    @property
    def dim(self) -> int:
        return self.bump.dim

    @property
    def compatibility_residual(self) -> float:
        return abs(self.bump.integral + self.periodic.mean)

    def zbox(self, lo, hi):
        return evaluate_box(self.seq, self.dim, lo, hi)

    def to_dict(self):
        return {"dim": self.dim, "bump": self.bump.to_dict(), "periodic": self.periodic.to_dict(),
                "sequence": self.seq.to_dict()}

    @classmethod
    def from_dict(cls, d):
        dim = int(d["dim"])
        bump = BumpSpec(dim=dim, **d.get("bump", {}))
        per = PeriodicPart.from_dict(dim, d.get("periodic", {}))
        seq = descriptor_from_dict(d.get("sequence", {"kind": "zero"}))
        return cls(bump, per, seq)


def make_compatible(bump: BumpSpec, periodic: PeriodicPart, mode: str = "scale", tol: float = TOL_COMPAT):
    """Adjust the bump amplitude or the periodic mean so that int phi = -<g_per>.

    Returns the adjusted ``(bump, periodic)`` pair.
    """
    m = bump.integral
    g = periodic.mean
    if abs(m + g) <= tol:
        return bump, periodic
    if abs(m) <= tol and abs(g) > tol:
        raise CompatibilityError("int phi = 0 while <g_per> != 0: no admissible rescaling")
    if mode == "scale":
        return replace(bump, amplitude=bump.amplitude * (-g / m)), periodic
    if mode == "shift":
        return bump, periodic.with_mean(-m)
    raise ValueError(f"unknown compatibility mode {mode!r}")


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _cell_points(grid: GridField, eps: float):
    return grid.points() / eps


def _check_resolution(assembly, grid, eps):
    if assembly.bump.amplitude == 0:
        return
    h = max(grid.spacing)
    limit = eps * assembly.bump.support_radius / 8
    if h > limit * (1 + 1e-12):
        raise ResolutionError(f"grid spacing {h:.3e} exceeds eps*a/8 = {limit:.3e}; refine the grid")


def site_box(assembly, y, rad):
    """Integer box of sites reachable within ``rad`` cells of the points y, with Z values."""
    lo = np.floor(y.min(axis=0)).astype(np.int64) - rad
    hi = np.floor(y.max(axis=0)).astype(np.int64) + rad
    return lo, assembly.zbox(lo, hi)


def _reach(assembly, zsup):
    return int(math.ceil(zsup + assembly.bump.support_radius))


def _local(assembly, y, mode, shift=True, tq=16, panels=32):
    # first pass with the a-priori radius 1 to get Z on the touched box, then widen if needed
    rad = 1
    while True:
        lo, zb = site_box(assembly, y, rad)
        zsup = float(np.abs(zb).max()) if zb.size else 0.0
        need = _reach(assembly, zsup if shift else 0.0)
        if need <= rad:
            break
        rad = need
    return kernels.local_sum(y, zb, lo, rad, mode, assembly.bump.terms(), tq=tq, panels=panels)


def _field(grid, vals, rank=0):
    shape = grid.shape
    if rank == 0:
        return GridField(vals[:, 0].reshape(shape), grid.spacing, grid.origin, 0, grid.boundary)
    return GridField(vals.T.reshape((vals.shape[1],) + shape), grid.spacing, grid.origin, 1, grid.boundary)


def sample_V(assembly: PotentialAssembly, grid: GridField, eps: float) -> GridField:
    """V(x/eps) at the grid nodes."""
    _check_resolution(assembly, grid, eps)
    y = _cell_points(grid, eps)
    vals = _local(assembly, y, kernels.PHI_SHIFTED)
    vals[:, 0] += assembly.periodic.value(y)
    return _field(grid, vals)


def sample_V_per(assembly: PotentialAssembly, grid: GridField, eps: float) -> GridField:
    """Periodic reference V_per(x/eps) = g_per + sum_k phi(. - k)."""
    _check_resolution(assembly, grid, eps)
    y = _cell_points(grid, eps)
    vals = _local(assembly, y, kernels.PHI_LATTICE, shift=False)
    vals[:, 0] += assembly.periodic.value(y)
    return _field(grid, vals)


def sample_taylor_parts(assembly: PotentialAssembly, grid: GridField, eps: float,
                        tq: int = 16, panels: int = 32):
    """(V1, V2) at x/eps; the t-integral of V2 uses ``panels`` clipped GL panels of ``tq`` nodes."""
    _check_resolution(assembly, grid, eps)
    y = _cell_points(grid, eps)
    v1 = _local(assembly, y, kernels.V1, shift=False)
    v2 = _local(assembly, y, kernels.V2, tq=tq, panels=panels)
    return _field(grid, v1), _field(grid, v2)


def sample_script_V(assembly: PotentialAssembly, grid: GridField, eps: float) -> GridField:
    """Vector field sum_k Z_k phi(x/eps - k)."""
    _check_resolution(assembly, grid, eps)
    y = _cell_points(grid, eps)
    return _field(grid, _local(assembly, y, kernels.SCRIPT, shift=False), rank=1)


def evaluate_V(assembly: PotentialAssembly, y) -> np.ndarray:
    """V at arbitrary points given in cell units (no resolution check)."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    return _local(assembly, y, kernels.PHI_SHIFTED)[:, 0] + assembly.periodic.value(y)


def default_assembly(dim=1, seq=None, support_radius=0.45, amplitude=1.0, kind="mollifier", s=1.0):
    """Default model: mollifier bump and g_per = s prod cos(2 pi y_i) - int phi."""
    bump = BumpSpec(dim, support_radius, amplitude, kind)
    per = PeriodicPart.product_cos(dim, s, -bump.integral)
    return PotentialAssembly(bump, per, seq if seq is not None else Zero())
