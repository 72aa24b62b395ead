"""Pure numpy implementation of the local lattice-sum kernels.

This is the reference backend; ``_kernels.pyx`` mirrors it loop for loop.
Every routine evaluates, at points y, a sum over lattice sites k in a box
around floor(y) of a kernel applied to s = y - k and the perturbation Z_k.
"""
from __future__ import annotations

import itertools

import numpy as np

from .profile import unit_mass

# mode tags, shared with the compiled backend
PHI_SHIFTED = 0     # phi(s - z)
PHI_LATTICE = 1     # phi(s)
V1 = 2              # z . grad phi(s)
V2 = 3              # int (1-t) z^T D^2 phi(s - t z) z dt
SCRIPT = 4          # z phi(s)                       (vector)
GRAD_WT = 5         # D^2 U(s) z                      (vector)
GRAD_W2_CLOSED = 6  # grad U(s-z) - grad U(s) + D^2 U(s) z
GRAD_W2_QUAD = 7    # sum z_i z_j int (1-t) grad u_ij(s - t z) dt

VECTOR_MODES = (SCRIPT, GRAD_WT, GRAD_W2_CLOSED, GRAD_W2_QUAD)


def n_components(mode, dim):
    return dim if mode in VECTOR_MODES else 1


def _eta_derivs(q):
    """e0, e1, e2 = d^n/dq^n exp(-1/(1-q)), zero for q >= 1."""
    s = 1.0 - q
    inside = s > 0
    ss = np.where(inside, s, 1.0)
    e0 = np.where(inside, np.exp(-1.0 / ss), 0.0)
    e1 = -e0 / ss**2
    e2 = e0 * (1.0 / ss**4 - 2.0 / ss**3)
    return e0, e1, e2


def _hermite(tf, tdf, x):
    n = tf.shape[0] - 1
    x = np.clip(x, 0.0, 1.0)
    i = np.minimum((x * n).astype(np.int64), n - 1)
    t = x * n - i
    t2 = t * t
    t3 = t2 * t
    h = 1.0 / n
    return ((2 * t3 - 3 * t2 + 1) * tf[i] + (t3 - 2 * t2 + t) * h * tdf[i]
            + (-2 * t3 + 3 * t2) * tf[i + 1] + (t3 - t2) * h * tdf[i + 1])


def _abc(p2, terms, tab, mhat):
    A = np.zeros_like(p2)
    B = np.zeros_like(p2)
    C = np.zeros_like(p2)
    for c, rad in terms:
        q = p2 / rad**2
        inside = q < 1.0
        qo = np.where(inside, 1.0, q)
        A += c * np.where(inside, _hermite(tab[0], tab[1], q), mhat / (2 * np.pi * qo))
        B += (2 * c / rad**2) * np.where(inside, _hermite(tab[1], tab[2], q), -mhat / (2 * np.pi * qo**2))
        C += (4 * c / rad**4) * np.where(inside, _hermite(tab[2], tab[3], q), mhat / (np.pi * qo**3))
    return A, B, C


def _grad_U(p, terms, tab, mhat, dim):
    if dim == 1:
        t = np.abs(p[:, 0])
        m = np.zeros_like(t)
        for c, rad in terms:
            s = t / rad
            m += c * rad * np.where(s >= 1.0, mhat, _hermite(tab[0], tab[1], s))
        return (0.5 * np.sign(p[:, 0]) * m)[:, None]
    A, _, _ = _abc(np.einsum("ij,ij->i", p, p), terms, tab, mhat)
    return A[:, None] * p


def _hess_U_z(p, z, terms, tab, mhat, dim):
    if dim == 1:
        phi = np.zeros(len(p))
        for c, rad in terms:
            phi += c * _eta_derivs(p[:, 0] ** 2 / rad**2)[0]
        return (phi * z[:, 0])[:, None]
    A, B, _ = _abc(np.einsum("ij,ij->i", p, p), terms, tab, mhat)
    pz = np.einsum("ij,ij->i", p, z)
    return A[:, None] * z + (B * pz)[:, None] * p


def _clip_interval(s, z, rad):
    """Sub-interval of [0, 1] where |s - t z| < rad, as (lo, hi), lo >= hi if empty."""
    a = np.einsum("ij,ij->i", z, z)
    b = -2.0 * np.einsum("ij,ij->i", s, z)
    c0 = np.einsum("ij,ij->i", s, s) - rad * rad
    lo = np.zeros(len(s))
    hi = np.zeros(len(s))
    flat = a <= 1e-300
    hi[flat & (c0 < 0)] = 1.0
    disc = b * b - 4 * a * c0
    ok = (~flat) & (disc > 0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    aa = np.where(ok, a, 1.0)
    t1 = (-b - sq) / (2 * aa)
    t2 = (-b + sq) / (2 * aa)
    lo[ok] = np.clip(t1[ok], 0.0, 1.0)
    hi[ok] = np.clip(t2[ok], 0.0, 1.0)
    return lo, hi


def _panel_nodes(lo, hi, gx, gw, panels):
    """Yield (t, weight) arrays for composite GL on [lo, hi] per point."""
    width = (hi - lo) / panels
    for j in range(panels):
        a = lo + j * width
        half = 0.5 * width
        mid = a + half
        for x, w in zip(gx, gw):
            yield mid + half * x, half * w


def _v2_term(s, z, c, rad, gx, gw, panels):
    lo, hi = _clip_interval(s, z, rad)
    out = np.zeros(len(s))
    active = hi > lo
    if not np.any(active):
        return out
    s, z, lo, hi = s[active], z[active], lo[active], hi[active]
    z2 = np.einsum("ij,ij->i", z, z)
    acc = np.zeros(len(s))
    for t, w in _panel_nodes(lo, hi, gx, gw, panels):
        p = s - t[:, None] * z
        q = np.einsum("ij,ij->i", p, p) / rad**2
        _, e1, e2 = _eta_derivs(q)
        pz = np.einsum("ij,ij->i", p, z)
        val = (2 * c / rad**2) * e1 * z2 + (4 * c / rad**4) * e2 * pz * pz
        acc += w * (1.0 - t) * val
    out[active] = acc
    return out


def _w2_quad(s, z, terms, tab, mhat, dim, gx, gw, panels):
    """sum_ij z_i z_j int_0^1 (1-t) grad u_ij(s - t z) dt."""
    n = len(s)
    if dim == 1:
        out = np.zeros((n, 1))
        for c, rad in terms:
            lo, hi = _clip_interval(s, z, rad)
            active = hi > lo
            if not np.any(active):
                continue
            sa, za = s[active], z[active]
            acc = np.zeros(len(sa))
            for t, w in _panel_nodes(lo[active], hi[active], gx, gw, panels):
                p = sa[:, 0] - t * za[:, 0]
                _, e1, _ = _eta_derivs(p * p / rad**2)
                acc += w * (1.0 - t) * (2 * c / rad**2) * e1 * p * za[:, 0] ** 2
            out[active, 0] += acc
        return out
    # 2D: breakpoints at support crossings of every term
    brk = [np.zeros(n), np.ones(n)]
    for _, rad in terms:
        lo, hi = _clip_interval(s, z, rad)
        brk += [lo, hi]
    brk = np.sort(np.stack(brk, axis=1), axis=1)
    z2 = np.einsum("ij,ij->i", z, z)
    out = np.zeros((n, 2))
    for seg in range(brk.shape[1] - 1):
        lo, hi = brk[:, seg], brk[:, seg + 1]
        for t, w in _panel_nodes(lo, hi, gx, gw, panels):
            p = s - t[:, None] * z
            _, B, C = _abc(np.einsum("ij,ij->i", p, p), terms, tab, mhat)
            pz = np.einsum("ij,ij->i", p, z)
            val = (B * z2)[:, None] * p + (2 * B * pz)[:, None] * z + (C * pz * pz)[:, None] * p
            out += (w * (1.0 - t))[:, None] * val
    return out


def local_sum(y, zbox, zlo, rad, mode, terms, gx, gw, panels, tab, r_cut):
    """Sum a local kernel over lattice sites near each point.

    Parameters
    ----------
    y : ndarray, shape (P, d)
        Evaluation points in cell units.
    zbox : ndarray, shape (d, n_1, ..., n_d)
        Perturbations Z_k for sites k = zlo + index; sites outside the box are absent.
    zlo : ndarray of int, shape (d,)
        Lattice index of the first box entry.
    rad : int
        Sites with |k_i - floor(y_i)| <= rad are visited.
    mode : int
        Kernel tag (see module constants).
    terms : ndarray, shape (T, 2)
        Profile terms (coef, radius).
    gx, gw : ndarray
        Gauss-Legendre nodes and weights on [-1, 1].
    panels : int
        Composite panels per t-interval.
    tab : ndarray, shape (4, N+1)
        Radial table for the dimension.
    r_cut : float
        Only pairs with |y - k| < r_cut contribute.

    Returns
    -------
    ndarray, shape (P, ncomp)
    """
    y = np.ascontiguousarray(y, dtype=float)
    P, dim = y.shape
    zlo = np.asarray(zlo, dtype=np.int64)
    shape = np.array(zbox.shape[1:], dtype=np.int64)
    out = np.zeros((P, n_components(mode, dim)))
    mhat = unit_mass(dim)
    base = np.floor(y).astype(np.int64)
    for off in itertools.product(range(-rad, rad + 1), repeat=dim):
        k = base + np.array(off, dtype=np.int64)
        idx = k - zlo
        inbox = np.all((idx >= 0) & (idx < shape), axis=1)
        s = y - k
        inbox &= np.einsum("ij,ij->i", s, s) < r_cut * r_cut
        if not np.any(inbox):
            continue
        sel = np.nonzero(inbox)[0]
        s = s[sel]
        ii = idx[sel]
        z = np.stack([zbox[(c,) + tuple(ii.T)] for c in range(dim)], axis=1)
        out[sel] += _site_contrib(mode, s, z, terms, gx, gw, panels, tab, mhat, dim)
    return out


def _site_contrib(mode, s, z, terms, gx, gw, panels, tab, mhat, dim):
    n = len(s)
    if mode in (PHI_SHIFTED, PHI_LATTICE, V1, SCRIPT):
        p = s - z if mode == PHI_SHIFTED else s
        q2 = np.einsum("ij,ij->i", p, p)
        val = np.zeros(n)
        for c, rad in terms:
            e0, e1, _ = _eta_derivs(q2 / rad**2)
            if mode == V1:
                val += (2 * c / rad**2) * e1 * np.einsum("ij,ij->i", p, z)
            else:
                val += c * e0
        if mode == SCRIPT:
            return z * val[:, None]
        return val[:, None]
    if mode == V2:
        val = np.zeros(n)
        for c, rad in terms:
            val += _v2_term(s, z, c, rad, gx, gw, panels)
        return val[:, None]
    if mode == GRAD_WT:
        return _hess_U_z(s, z, terms, tab, mhat, dim)
    if mode == GRAD_W2_CLOSED:
        g1 = _grad_U(s - z, terms, tab, mhat, dim)
        g0 = _grad_U(s, terms, tab, mhat, dim)
        return g1 - g0 + _hess_U_z(s, z, terms, tab, mhat, dim)
    if mode == GRAD_W2_QUAD:
        return _w2_quad(s, z, terms, tab, mhat, dim, gx, gw, panels)
    raise ValueError(f"unknown mode {mode}")
