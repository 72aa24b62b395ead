"""Finite-difference Dirichlet solvers for the eps-problem and the homogenized problem.

The eps-problem on Omega = (0,1)^d is

    -Delta u + (1/eps) V(x/eps) u + nu u = f,   u = 0 on the boundary,

discretized with the 3/5-point Laplacian and the potential lumped at nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .corrector import dirichlet_eigenvalues
from .greens import laplacian_matrix
from .gridfield import GridField, interior_grid
from .potential import PotentialAssembly, sample_V

MARGIN = 1e-3


class ResonanceError(RuntimeError):
    """An eigenvalue of the operator lies within the margin of -nu."""


class SolverError(RuntimeError):
    """A linear or eigenvalue solve missed its tolerance or iteration cap."""


@dataclass(frozen=True)
class DomainSpec:
    """Unit interval or square with n intervals per axis and Dirichlet boundary."""

    dim: int
    n: int

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def diameter(self) -> float:
        return math.sqrt(self.dim)

    def grid(self) -> GridField:
        return interior_grid(self.dim, self.n)

    def check_eps(self, eps, ratio=16):
        if self.h > eps / ratio * (1 + 1e-12):
            raise ValueError(f"grid spacing {self.h:.3e} exceeds eps/{ratio} = {eps / ratio:.3e}")

    @classmethod
    def for_eps(cls, dim, eps, per_eps=32):
        return cls(dim, int(round(per_eps / eps)))


@dataclass
class EpsProblem:
    assembly: PotentialAssembly
    eps: float
    nu: float
    f: GridField
    domain: DomainSpec


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    reference: list
    targets: list
    residuals: np.ndarray
    errors: list = field(default_factory=list)
    gaps: list = field(default_factory=list)


def potential_diagonal(problem: EpsProblem) -> np.ndarray:
    grid = problem.domain.grid()
    return sample_V(problem.assembly, grid, problem.eps).values.ravel() / problem.eps


def eps_operator(problem: EpsProblem, include_nu=True) -> sp.csr_matrix:
    """Sparse symmetric matrix of -Delta_h + V(x/eps)/eps (+ nu)."""
    problem.domain.check_eps(problem.eps)
    grid = problem.domain.grid()
    A = -laplacian_matrix(grid.shape, grid.spacing)
    diag = potential_diagonal(problem) + (problem.nu if include_nu else 0.0)
    return (A + sp.diags(diag)).tocsr()


def homogenized_operator(M, nu, domain: DomainSpec) -> sp.csr_matrix:
    grid = domain.grid()
    A = -laplacian_matrix(grid.shape, grid.spacing)
    return (A + (nu - M) * sp.identity(A.shape[0])).tocsr()


def _gershgorin_lower(A) -> float:
    A = A.tocsr()
    d = A.diagonal()
    off = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(d)
    return float((d - off).min())


def _residual_tol(A) -> float:
    # eps_mach * ||A|| bounds the attainable residual; ||A||_inf is a cheap proxy
    norm = float(abs(A).sum(axis=1).max())
    return max(1e-8, 100 * np.finfo(float).eps * norm)


def eigen_pairs(A, L, sigma=None, tol=0.0, maxiter=None):
    """L eigenpairs of the symmetric matrix A closest to ``sigma`` by shift-invert Lanczos.

    With the default ``sigma`` (a Gershgorin lower bound) these are the L
    smallest.  Returns sorted eigenvalues, eigenvectors and residual norms.
    """
    if L > 8:
        raise ValueError("eigen_pairs supports L <= 8")
    if sigma is None:
        sigma = _gershgorin_lower(A) - 1.0
    n = A.shape[0]
    k = min(L, n - 2) if n > 2 else 1
    try:
        vals, vecs = spla.eigsh(A, k=k, sigma=sigma, which="LM", tol=tol,
                                ncv=min(n - 1, max(2 * k + 10, 24)), maxiter=maxiter or 20 * n)
    except spla.ArpackNoConvergence as exc:
        raise SolverError(f"eigenvalue iteration cap exceeded: {exc}") from exc
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    res = np.linalg.norm(A @ vecs - vecs * vals, axis=0) / np.linalg.norm(vecs, axis=0)
    bound = _residual_tol(A)
    if np.any(res > bound):
        raise SolverError(f"eigen residual {res.max():.2e} exceeds {bound:.2e}")
    return vals, vecs, res


def eigen_smallest(problem: EpsProblem | None = None, L=3, operator=None, M=0.0) -> SpectrumReport:
    """L smallest eigenvalues of -Delta_h + V(x/eps)/eps (nu excluded) or of ``operator``."""
    A = eps_operator(problem, include_nu=False) if operator is None else operator
    vals, _, res = eigen_pairs(A, L)
    dim = problem.domain.dim if problem is not None else (1 if operator is None else _guess_dim(A))
    mu = dirichlet_eigenvalues(dim, L)
    targets = [m - M for m in mu]
    errs = [abs(v - t) for v, t in zip(vals, targets)]
    gaps = list(np.diff(vals))
    return SpectrumReport(vals, mu, targets, res, errs, gaps)


def _guess_dim(A):
    n = A.shape[0]
    r = int(round(math.sqrt(n)))
    return 2 if r * r == n and A.nnz > 4 * n else 1


def coercivity_margin(problem: EpsProblem) -> float:
    """lambda_1^eps + nu."""
    return float(eigen_smallest(problem, 1).eigenvalues[0] + problem.nu)


def _linear_solve(A, b, method, rtol):
    if method == "direct":
        x = spla.splu(A.tocsc()).solve(b)
    elif method == "cg":
        x, info = spla.cg(A, b, rtol=rtol, maxiter=20 * len(b))
        if info != 0:
            raise SolverError(f"CG did not converge (info={info})")
    elif method == "minres":
        # the MINRES stopping test uses a recurrence estimate that drifts from
        # the true residual; restart on the true residual until it agrees
        x = np.zeros_like(b)
        bn = max(np.linalg.norm(b), 1e-300)
        for _ in range(6):
            r = b - A @ x
            if np.linalg.norm(r) <= rtol * bn:
                break
            dx, info = spla.minres(A, r, rtol=rtol, maxiter=20 * len(b))
            if info != 0:
                raise SolverError(f"MINRES did not converge (info={info})")
            x = x + dx
    else:
        raise ValueError(f"unknown linear solver {method!r}")
    r = np.linalg.norm(A @ x - b)
    if method == "direct":
        # normwise backward error; the forward residual of LU scales with cond(A)
        anorm = float(abs(A).sum(axis=1).max())
        rel = r / max(anorm * np.linalg.norm(x) + np.linalg.norm(b), 1e-300)
    else:
        rel = r / max(np.linalg.norm(b), 1e-300)
    if rel > rtol:
        raise SolverError(f"relative residual {rel:.2e} above {rtol:g}")
    return x, rel


def _fredholm_gate(A_nonu, nu, L=8, margin=MARGIN):
    """Eigenvalues of A nearest -nu must stay outside the margin."""
    vals, _, _ = eigen_pairs(A_nonu, min(L, A_nonu.shape[0] - 2), sigma=-nu)
    near = float(np.min(np.abs(vals + nu)))
    if near < margin:
        raise ResonanceError(f"eigenvalue within {near:.2e} of -nu = {-nu:g} (margin {margin:g})")
    return vals, near


def solve_eps(problem: EpsProblem, method="direct", fredholm=False, rtol=1e-10, margin=MARGIN):
    """Nodal solution u^eps on the interior grid.

    The coercive route requires lambda_1^eps + nu >= margin.  With
    ``fredholm=True`` the operator may be indefinite; every eigenvalue near
    -nu must then keep the margin, and CG is replaced by MINRES.
    """
    A0 = eps_operator(problem, include_nu=False)
    if fredholm:
        _, near = _fredholm_gate(A0, problem.nu, margin=margin)
        if method == "cg":
            method = "minres"
        info = {"mode": "fredholm", "margin": near}
    else:
        lam1 = eigen_pairs(A0, 1)[0][0]
        m = lam1 + problem.nu
        if m < margin:
            raise ResonanceError(f"lambda_1 + nu = {m:.3e} below margin {margin:g}; "
                                 "request the Fredholm route explicitly")
        info = {"mode": "coercive", "margin": float(m)}
    A = (A0 + problem.nu * sp.identity(A0.shape[0])).tocsr()
    x, rel = _linear_solve(A, problem.f.values.ravel(), method, rtol)
    info["residual"] = rel
    out = problem.f.with_values(x.reshape(problem.f.shape))
    out.meta.update(info)
    return out


def solve_homogenized(M, nu, f: GridField, domain: DomainSpec, method="direct", rtol=1e-10,
                      margin=MARGIN, fredholm=False):
    """Nodal solution of -Delta u - M u + nu u = f."""
    mu = dirichlet_eigenvalues(domain.dim, 8)
    if not fredholm and mu[0] - M + nu <= 0:
        raise ResonanceError(f"mu_1 - M + nu = {mu[0] - M + nu:.3e} is not positive")
    near = min(abs(m - M + nu) for m in mu)
    if near < margin:
        raise ResonanceError(f"mu_l - M + nu within {near:.2e} of zero")
    A = homogenized_operator(M, nu, domain)
    x, rel = _linear_solve(A, f.values.ravel(), method, rtol)
    return f.with_values(x.reshape(f.shape))


def _pad_zero(values):
    return np.pad(values, 1)


def h1_norms(field: GridField):
    """(L2, H1) discrete norms of a field vanishing on the boundary; forward differences."""
    h = field.spacing
    vol = float(np.prod(h))
    v = _pad_zero(field.values)
    l2 = vol * float(np.sum(field.values**2))
    grad = 0.0
    for i in range(field.dim):
        grad += vol * float(np.sum((np.diff(v, axis=i) / h[i]) ** 2))
    return math.sqrt(l2), math.sqrt(l2 + grad)


def remainder(u_eps: GridField, u_star: GridField, bundle):
    """R = u^eps - u* - eps u* W(x/eps) on the interior nodes, with L2 and H1 norms."""
    if not u_eps.same_grid(u_star):
        raise ValueError("u_eps and u_star live on different grids")
    W = bundle.value
    inner = tuple(slice(1, -1) for _ in range(W.dim))
    Wi = W.values[inner]
    if (Wi.shape != u_eps.shape or not np.allclose(W.spacing, u_eps.spacing)
            or not np.allclose(np.array(W.origin) + np.array(W.spacing), u_eps.origin)):
        raise ValueError("corrector bundle grid does not match the solution grid")
    R = u_eps.values - u_star.values - bundle.epsilon * u_star.values * Wi
    field_R = u_eps.with_values(R)
    l2, h1 = h1_norms(field_R)
    return field_R, l2, h1


def sine_mode_rhs(domain: DomainSpec, scale=None):
    """f = pi^2 prod sin(pi x_i) (times ``scale``) on the interior grid."""
    g = domain.grid()
    pts = g.points()
    v = np.prod(np.sin(np.pi * pts), axis=1)
    s = (np.pi**2 if domain.dim == 1 else 2 * np.pi**2) if scale is None else scale
    return g.with_values((s * v).reshape(g.shape))
