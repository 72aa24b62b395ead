# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled local lattice-sum kernels (mirror of _kernels_py.local_sum)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor, sqrt, fabs, M_PI

cnp.import_array()

from .profile import unit_mass

DEF MAXT = 8


cdef inline void eta_derivs(double q, double* e0, double* e1, double* e2) noexcept nogil:
    cdef double s = 1.0 - q, e
    if s <= 0.0:
        e0[0] = 0.0
        e1[0] = 0.0
        e2[0] = 0.0
        return
    e = exp(-1.0 / s)
    e0[0] = e
    e1[0] = -e / (s * s)
    e2[0] = e * (1.0 / (s * s * s * s) - 2.0 / (s * s * s))


cdef inline double herm(const double[:, ::1] tab, int row, double x) noexcept nogil:
    cdef Py_ssize_t n = tab.shape[1] - 1
    cdef double h = 1.0 / n, t, t2, t3
    cdef Py_ssize_t i
    if x < 0.0:
        x = 0.0
    if x > 1.0:
        x = 1.0
    i = <Py_ssize_t>(x * n)
    if i > n - 1:
        i = n - 1
    t = x * n - i
    t2 = t * t
    t3 = t2 * t
    return ((2 * t3 - 3 * t2 + 1) * tab[row, i] + (t3 - 2 * t2 + t) * h * tab[row + 1, i]
            + (-2 * t3 + 3 * t2) * tab[row, i + 1] + (t3 - t2) * h * tab[row + 1, i + 1])


cdef inline void abc(double p2, const double[:, ::1] terms, const double[:, ::1] tab,
                     double mhat, double* A, double* B, double* C) noexcept nogil:
    cdef Py_ssize_t j
    cdef double c, rad, q
    A[0] = 0.0
    B[0] = 0.0
    C[0] = 0.0
    for j in range(terms.shape[0]):
        c = terms[j, 0]
        rad = terms[j, 1]
        q = p2 / (rad * rad)
        if q < 1.0:
            A[0] += c * herm(tab, 0, q)
            B[0] += (2 * c / (rad * rad)) * herm(tab, 1, q)
            C[0] += (4 * c / (rad * rad * rad * rad)) * herm(tab, 2, q)
        else:
            A[0] += c * mhat / (2 * M_PI * q)
            B[0] += (2 * c / (rad * rad)) * (-mhat / (2 * M_PI * q * q))
            C[0] += (4 * c / (rad * rad * rad * rad)) * (mhat / (M_PI * q * q * q))


cdef inline double grad_u_1d(double p, const double[:, ::1] terms, const double[:, ::1] tab,
                             double mhat) noexcept nogil:
    cdef Py_ssize_t j
    cdef double m = 0.0, t = fabs(p), s, c, rad
    for j in range(terms.shape[0]):
        c = terms[j, 0]
        rad = terms[j, 1]
        s = t / rad
        if s >= 1.0:
            m += c * rad * mhat
        else:
            m += c * rad * herm(tab, 0, s)
    if p > 0:
        return 0.5 * m
    if p < 0:
        return -0.5 * m
    return 0.0


cdef inline void clip_interval(double* s, double* z, int dim, double rad,
                               double* lo, double* hi) noexcept nogil:
    cdef double a = 0.0, b = 0.0, c0 = -rad * rad, disc, sq, t1, t2
    cdef int i
    for i in range(dim):
        a += z[i] * z[i]
        b -= 2.0 * s[i] * z[i]
        c0 += s[i] * s[i]
    lo[0] = 0.0
    hi[0] = 0.0
    if a <= 1e-300:
        if c0 < 0:
            hi[0] = 1.0
        return
    disc = b * b - 4 * a * c0
    if disc <= 0:
        return
    sq = sqrt(disc)
    t1 = (-b - sq) / (2 * a)
    t2 = (-b + sq) / (2 * a)
    lo[0] = min(max(t1, 0.0), 1.0)
    hi[0] = min(max(t2, 0.0), 1.0)


cdef void site_contrib(int mode, int dim, double* s, double* z, double* acc,
                       const double[:, ::1] terms, const double[::1] gx, const double[::1] gw,
                       int panels, const double[:, ::1] tab, double mhat) noexcept nogil:
    cdef Py_ssize_t j, g, pn, nt = terms.shape[0], ng = gx.shape[0]
    cdef int i, seg, nb
    cdef double c, rad, q2, e0, e1, e2, val, pz, z2, lo, hi, width, half, mid, t, w
    cdef double A, B, C, A1, g1, g0
    cdef double p[2]
    cdef double brk[2 * MAXT + 2]
    if mode == 0 or mode == 1 or mode == 2 or mode == 4:
        for i in range(dim):
            p[i] = s[i] - z[i] if mode == 0 else s[i]
        q2 = 0.0
        pz = 0.0
        for i in range(dim):
            q2 += p[i] * p[i]
            pz += p[i] * z[i]
        val = 0.0
        for j in range(nt):
            c = terms[j, 0]
            rad = terms[j, 1]
            eta_derivs(q2 / (rad * rad), &e0, &e1, &e2)
            if mode == 2:
                val += (2 * c / (rad * rad)) * e1 * pz
            else:
                val += c * e0
        if mode == 4:
            for i in range(dim):
                acc[i] += z[i] * val
        else:
            acc[0] += val
        return
    if mode == 3:
        z2 = 0.0
        for i in range(dim):
            z2 += z[i] * z[i]
        for j in range(nt):
            c = terms[j, 0]
            rad = terms[j, 1]
            clip_interval(s, z, dim, rad, &lo, &hi)
            if hi <= lo:
                continue
            width = (hi - lo) / panels
            for pn in range(panels):
                half = 0.5 * width
                mid = lo + pn * width + half
                for g in range(ng):
                    t = mid + half * gx[g]
                    w = half * gw[g]
                    q2 = 0.0
                    pz = 0.0
                    for i in range(dim):
                        p[i] = s[i] - t * z[i]
                        q2 += p[i] * p[i]
                        pz += p[i] * z[i]
                    eta_derivs(q2 / (rad * rad), &e0, &e1, &e2)
                    acc[0] += w * (1.0 - t) * ((2 * c / (rad * rad)) * e1 * z2
                                               + (4 * c / (rad * rad * rad * rad)) * e2 * pz * pz)
        return
    if mode == 5:
        if dim == 1:
            val = 0.0
            for j in range(nt):
                c = terms[j, 0]
                rad = terms[j, 1]
                eta_derivs(s[0] * s[0] / (rad * rad), &e0, &e1, &e2)
                val += c * e0
            acc[0] += val * z[0]
            return
        abc(s[0] * s[0] + s[1] * s[1], terms, tab, mhat, &A, &B, &C)
        pz = s[0] * z[0] + s[1] * z[1]
        acc[0] += A * z[0] + B * pz * s[0]
        acc[1] += A * z[1] + B * pz * s[1]
        return
    if mode == 6:
        if dim == 1:
            g1 = grad_u_1d(s[0] - z[0], terms, tab, mhat)
            g0 = grad_u_1d(s[0], terms, tab, mhat)
            val = 0.0
            for j in range(nt):
                c = terms[j, 0]
                rad = terms[j, 1]
                eta_derivs(s[0] * s[0] / (rad * rad), &e0, &e1, &e2)
                val += c * e0
            acc[0] += g1 - g0 + val * z[0]
            return
        p[0] = s[0] - z[0]
        p[1] = s[1] - z[1]
        abc(p[0] * p[0] + p[1] * p[1], terms, tab, mhat, &A1, &B, &C)
        abc(s[0] * s[0] + s[1] * s[1], terms, tab, mhat, &A, &B, &C)
        pz = s[0] * z[0] + s[1] * z[1]
        acc[0] += A1 * p[0] - A * p[0] + B * pz * s[0]
        acc[1] += A1 * p[1] - A * p[1] + B * pz * s[1]
        return
    if mode == 7:
        if dim == 1:
            for j in range(nt):
                c = terms[j, 0]
                rad = terms[j, 1]
                clip_interval(s, z, 1, rad, &lo, &hi)
                if hi <= lo:
                    continue
                width = (hi - lo) / panels
                for pn in range(panels):
                    half = 0.5 * width
                    mid = lo + pn * width + half
                    for g in range(ng):
                        t = mid + half * gx[g]
                        w = half * gw[g]
                        p[0] = s[0] - t * z[0]
                        eta_derivs(p[0] * p[0] / (rad * rad), &e0, &e1, &e2)
                        acc[0] += w * (1.0 - t) * (2 * c / (rad * rad)) * e1 * p[0] * z[0] * z[0]
            return
        nb = 2
        brk[0] = 0.0
        brk[1] = 1.0
        for j in range(nt):
            clip_interval(s, z, 2, terms[j, 1], &lo, &hi)
            brk[nb] = lo
            brk[nb + 1] = hi
            nb += 2
        # insertion sort of breakpoints
        for i in range(1, nb):
            t = brk[i]
            seg = i - 1
            while seg >= 0 and brk[seg] > t:
                brk[seg + 1] = brk[seg]
                seg -= 1
            brk[seg + 1] = t
        z2 = z[0] * z[0] + z[1] * z[1]
        for seg in range(nb - 1):
            lo = brk[seg]
            hi = brk[seg + 1]
            width = (hi - lo) / panels
            for pn in range(panels):
                half = 0.5 * width
                mid = lo + pn * width + half
                for g in range(ng):
                    t = mid + half * gx[g]
                    w = half * gw[g] * (1.0 - t)
                    p[0] = s[0] - t * z[0]
                    p[1] = s[1] - t * z[1]
                    abc(p[0] * p[0] + p[1] * p[1], terms, tab, mhat, &A, &B, &C)
                    pz = p[0] * z[0] + p[1] * z[1]
                    acc[0] += w * (B * z2 * p[0] + 2 * B * pz * z[0] + C * pz * pz * p[0])
                    acc[1] += w * (B * z2 * p[1] + 2 * B * pz * z[1] + C * pz * pz * p[1])
        return


def local_sum(y, zbox, zlo, int rad, int mode, terms, gx, gw, int panels, tab, double r_cut):
    """Compiled counterpart of :func:`oschom._kernels_py.local_sum`."""
    cdef double[:, ::1] Y = np.ascontiguousarray(y, dtype=np.float64)
    cdef int dim = Y.shape[1]
    if dim not in (1, 2):
        raise ValueError("compiled kernels support dim 1 and 2")
    cdef const double[:, ::1] T = np.ascontiguousarray(terms, dtype=np.float64)
    if T.shape[0] > MAXT:
        raise ValueError("too many profile terms")
    cdef const double[::1] GX = np.ascontiguousarray(gx, dtype=np.float64)
    cdef const double[::1] GW = np.ascontiguousarray(gw, dtype=np.float64)
    cdef const double[:, ::1] TAB = np.ascontiguousarray(tab, dtype=np.float64)
    zb = np.ascontiguousarray(zbox, dtype=np.float64)
    cdef Py_ssize_t n1 = zb.shape[1]
    cdef Py_ssize_t n2 = zb.shape[2] if dim == 2 else 1
    cdef const double[:, ::1] Z = zb.reshape(dim, -1)
    cdef long lo0 = int(zlo[0])
    cdef long lo1 = int(zlo[1]) if dim == 2 else 0
    cdef int ncomp = dim if mode in (4, 5, 6, 7) else 1
    out = np.zeros((Y.shape[0], ncomp))
    cdef double[:, ::1] O = out
    cdef double mhat = unit_mass(dim)
    cdef Py_ssize_t P = Y.shape[0], ip, flat
    cdef long b0, b1, k0, k1, i0, i1, o0, o1
    cdef double s[2]
    cdef double z[2]
    cdef double acc[2]
    cdef double rc2 = r_cut * r_cut if r_cut < 1e150 else 1e300
    with nogil:
        for ip in range(P):
            b0 = <long>floor(Y[ip, 0])
            b1 = <long>floor(Y[ip, 1]) if dim == 2 else 0
            acc[0] = 0.0
            acc[1] = 0.0
            for o0 in range(-rad, rad + 1):
                k0 = b0 + o0
                i0 = k0 - lo0
                if i0 < 0 or i0 >= n1:
                    continue
                s[0] = Y[ip, 0] - k0
                if dim == 1:
                    if s[0] * s[0] >= rc2:
                        continue
                    z[0] = Z[0, i0]
                    site_contrib(mode, 1, s, z, acc, T, GX, GW, panels, TAB, mhat)
                    continue
                for o1 in range(-rad, rad + 1):
                    k1 = b1 + o1
                    i1 = k1 - lo1
                    if i1 < 0 or i1 >= n2:
                        continue
                    s[1] = Y[ip, 1] - k1
                    if s[0] * s[0] + s[1] * s[1] >= rc2:
                        continue
                    flat = i0 * n2 + i1
                    z[0] = Z[0, flat]
                    z[1] = Z[1, flat]
                    site_contrib(mode, 2, s, z, acc, T, GX, GW, panels, TAB, mhat)
            O[ip, 0] = acc[0]
            if ncomp == 2:
                O[ip, 1] = acc[1]
    return out
