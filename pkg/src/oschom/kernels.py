"""Backend selection for the lattice-sum kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation is used.  Set ``OSCHOM_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py
from ._kernels_py import (  # noqa: F401  re-exported mode tags
    GRAD_W2_CLOSED,
    GRAD_W2_QUAD,
    GRAD_WT,
    PHI_LATTICE,
    PHI_SHIFTED,
    SCRIPT,
    V1,
    V2,
    n_components,
)

_compiled = None
if os.environ.get("OSCHOM_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


def gauss_legendre(nodes: int):
    """Gauss-Legendre nodes and weights on [-1, 1]."""
    return np.polynomial.legendre.leggauss(int(nodes))


def local_sum(y, zbox, zlo, rad, mode, terms, tq=16, panels=32, tab=None, r_cut=np.inf, backend=None):
    """Evaluate a local lattice sum at points ``y`` (see ``_kernels_py.local_sum``).

    ``tq`` is the number of Gauss-Legendre nodes per panel.  ``backend`` may be
    ``"cython"`` or ``"python"`` to override the import-time choice.
    """
    from .profile import radial_table

    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    dim = y.shape[1]
    if tab is None:
        tab = radial_table(dim) if dim in (1, 2) else np.zeros((4, 2))
    gx, gw = gauss_legendre(tq)
    zbox = np.asarray(zbox, dtype=float)
    terms = np.asarray(terms, dtype=float).reshape(-1, 2)
    use = backend or BACKEND
    if use == "cython":
        if _compiled is None:
            raise RuntimeError("compiled backend is not available")
        return _compiled.local_sum(y, zbox, np.asarray(zlo, dtype=np.int64), int(rad), int(mode),
                                   terms, gx, gw, int(panels), tab, float(r_cut))
    return _kernels_py.local_sum(y, zbox, zlo, int(rad), int(mode), terms, gx, gw, int(panels),
                                 tab, float(r_cut))
