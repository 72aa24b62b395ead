"""Perturbation sequences Z_k on Z^d and their windowed statistics.

Descriptors are small immutable records that evaluate Z_k for any array of
lattice indices.  A :class:`LatticeSequence` caches the values over a
:class:`LatticeWindow`; every statistic reads from that cache.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# descriptors
# ---------------------------------------------------------------------------

def _unit_diagonal(dim):
    return np.full(dim, 1.0 / math.sqrt(dim))


@dataclass(frozen=True)
class Zero:
    kind = "zero"

    def evaluate(self, k, dim):
        return np.zeros((len(k), dim))

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class Constant:
    value: tuple

    kind = "constant"

    def evaluate(self, k, dim):
        v = np.broadcast_to(np.asarray(self.value, dtype=float), (dim,))
        return np.tile(v, (len(k), 1))

    def to_dict(self):
        return {"kind": self.kind, "value": list(map(float, self.value))}


@dataclass(frozen=True)
class Periodic:
    """Z_k = table[k mod period]; ``table`` has shape (d, *period)."""

    period: tuple
    table: tuple  # nested lists, shape (d, *period)

    kind = "periodic"

    def evaluate(self, k, dim):
        tab = np.asarray(self.table, dtype=float).reshape((dim,) + tuple(self.period))
        idx = tuple((np.asarray(k)[:, i] % self.period[i]) for i in range(dim))
        return np.stack([tab[(c,) + idx] for c in range(dim)], axis=1)

    def to_dict(self):
        return {"kind": self.kind, "period": list(self.period), "table": np.asarray(self.table).tolist()}


@dataclass(frozen=True)
class PowerDecay:
    """Z_k = amplitude (1 + |k|)^(-p) u with u = (1, ..., 1)/sqrt(d)."""

    p: float
    amplitude: float = 0.5

    kind = "power_decay"

    def __post_init__(self):
        if self.p <= 0:
            raise ValueError("PowerDecay needs p > 0")

    def evaluate(self, k, dim):
        r = np.linalg.norm(np.asarray(k, dtype=float), axis=1)
        return (self.amplitude * (1.0 + r) ** (-self.p))[:, None] * _unit_diagonal(dim)

    def to_dict(self):
        return {"kind": self.kind, "p": self.p, "amplitude": self.amplitude}


@dataclass(frozen=True)
class LogDecay:
    """Z_k = amplitude (1 + ln(1 + |k|))^(-alpha) u, alpha > 1/2."""

    alpha: float
    amplitude: float = 0.5

    kind = "log_decay"

    def __post_init__(self):
        if not self.alpha > 0.5:
            raise ValueError("LogDecay needs alpha > 1/2")

    def evaluate(self, k, dim):
        r = np.linalg.norm(np.asarray(k, dtype=float), axis=1)
        return (self.amplitude * (1.0 + np.log1p(r)) ** (-self.alpha))[:, None] * _unit_diagonal(dim)

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha, "amplitude": self.amplitude}


@dataclass(frozen=True)
class FracPower:
    """Z_k = {k^p theta} (fractional part), one-dimensional.

    The double ``theta`` is converted to its exact binary rational and the
    fractional part is taken in integer arithmetic, so large k lose nothing.
    """

    theta: float
    p: int = 2

    kind = "frac_power"

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 2:
            raise ValueError("FracPower needs an integer p >= 2")
        if not math.isfinite(self.theta):
            raise ValueError("theta must be finite")

    def evaluate(self, k, dim):
        if dim != 1:
            raise ValueError("FracPower is defined for dim 1 only")
        fr = Fraction(self.theta)
        num, den = fr.numerator, fr.denominator
        p = int(self.p)
        out = np.empty((len(k), 1))
        for i, kk in enumerate(np.asarray(k)[:, 0].tolist()):
            out[i, 0] = Fraction((kk**p * num) % den, den).__float__()
        return out

    def to_dict(self):
        return {"kind": self.kind, "theta": self.theta, "p": int(self.p)}


@dataclass(frozen=True)
class TrigLattice:
    """Z_(k1,k2) = (cos(sqrt(2) k1), sin(sqrt(2) k2)), two-dimensional."""

    kind = "trig_lattice"

    def evaluate(self, k, dim):
        if dim != 2:
            raise ValueError("TrigLattice requires dim 2")
        k = np.asarray(k, dtype=float)
        return np.stack([np.cos(SQRT2 * k[:, 0]), np.sin(SQRT2 * k[:, 1])], axis=1)

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class Explicit:
    """Tabulated Z over the box lo + index; ``fill`` is used outside (None: error)."""

    lo: tuple
    table: tuple
    fill: float | None = None

    kind = "explicit"

    def evaluate(self, k, dim):
        tab = np.asarray(self.table, dtype=float)
        if tab.shape[0] != dim or tab.ndim != dim + 1:
            raise ValueError("Explicit table must have shape (d, n_1, ..., n_d)")
        idx = np.asarray(k) - np.asarray(self.lo, dtype=np.int64)
        inside = np.all((idx >= 0) & (idx < np.array(tab.shape[1:])), axis=1)
        if not np.all(inside) and self.fill is None:
            raise ValueError("Explicit sequence evaluated outside its table")
        out = np.full((len(idx), dim), 0.0 if self.fill is None else float(self.fill))
        sel = np.nonzero(inside)[0]
        for c in range(dim):
            out[sel, c] = tab[(c,) + tuple(idx[sel].T)]
        return out

    def to_dict(self):
        d = {"kind": self.kind, "lo": list(self.lo), "table": np.asarray(self.table).tolist()}
        if self.fill is not None:
            d["fill"] = self.fill
        return d


@dataclass(frozen=True)
class Centered:
    """Z_k = base(k) - shift; used to move a known average into the bump position."""

    base: object
    shift: tuple

    kind = "centered"

    def evaluate(self, k, dim):
        return self.base.evaluate(k, dim) - np.broadcast_to(np.asarray(self.shift, dtype=float), (dim,))

    def to_dict(self):
        return {"kind": self.kind, "base": self.base.to_dict(), "shift": list(map(float, self.shift))}


DESCRIPTORS = {cls.kind: cls for cls in (Zero, Constant, Periodic, PowerDecay, LogDecay,
                                          FracPower, TrigLattice, Explicit, Centered)}


def descriptor_from_dict(d: dict):
    """Build a descriptor from its config/serialized form."""
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in DESCRIPTORS:
        raise ValueError(f"unknown sequence kind {kind!r}; expected one of {sorted(DESCRIPTORS)}")
    cls = DESCRIPTORS[kind]
    if cls in (Constant,):
        return cls(tuple(np.atleast_1d(d.pop("value")).tolist()), **d)
    if cls is Periodic:
        return cls(tuple(int(p) for p in d["period"]), np.asarray(d["table"], dtype=float).tolist())
    if cls is Explicit:
        return cls(tuple(d["lo"]), np.asarray(d["table"]).tolist(), d.get("fill"))
    if cls is Centered:
        return cls(descriptor_from_dict(d["base"]), tuple(np.atleast_1d(d["shift"]).tolist()))
    return cls(**d)


# ---------------------------------------------------------------------------
# windows and cached sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LatticeWindow:
    """Lattice points of the Euclidean ball B_R(center), or of a box.

    ``shape="box"`` selects the half-open cube -R <= k_i - c_i < R (integer R),
    which tiles whole periods exactly.
    """

    dim: int
    center: tuple = None
    radius: float = 1.0
    shape: str = "ball"

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")
        if not self.radius > 0:
            raise ValueError("window radius must be positive")
        c = (0,) * self.dim if self.center is None else tuple(int(v) for v in np.atleast_1d(self.center))
        if len(c) != self.dim:
            raise ValueError("center must have dim entries")
        object.__setattr__(self, "center", c)
        if self.shape not in ("ball", "box"):
            raise ValueError("shape must be 'ball' or 'box'")

    def bounds(self):
        """Inclusive integer bounding box (lo, hi)."""
        r = int(math.floor(self.radius))
        c = np.array(self.center)
        if self.shape == "box":
            return c - r, c + r - 1
        return c - r, c + r

    def contains(self, k):
        k = np.atleast_2d(k)
        d = k - np.array(self.center)
        if self.shape == "box":
            r = int(math.floor(self.radius))
            return np.all((d >= -r) & (d < r), axis=1)
        return np.einsum("ij,ij->i", d, d) <= self.radius**2 * (1 + 1e-14)

    def mask(self, lo, hi):
        """Boolean mask of the window on the inclusive box [lo, hi]."""
        axes = [np.arange(lo[i], hi[i] + 1) for i in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        return self.contains(pts).reshape([len(a) for a in axes])

    def indices(self):
        lo, hi = self.bounds()
        axes = [np.arange(lo[i], hi[i] + 1) for i in range(self.dim)]
        pts = np.array(list(itertools.product(*axes)), dtype=np.int64).reshape(-1, self.dim)
        return pts[self.contains(pts)]

    def shrink(self, by):
        return LatticeWindow(self.dim, self.center, self.radius - by, self.shape)


def box_indices(lo, hi):
    axes = [np.arange(lo[i], hi[i] + 1) for i in range(len(lo))]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1).astype(np.int64)


def evaluate_box(descriptor, dim, lo, hi):
    """Z over the inclusive integer box [lo, hi] as an array (d, n_1, ..., n_d)."""
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    k = box_indices(lo, hi)
    vals = descriptor.evaluate(k, dim)
    if not np.all(np.isfinite(vals)):
        raise ValueError("sequence produced non-finite values")
    return vals.T.reshape((dim,) + tuple(hi - lo + 1))


@dataclass
class LatticeSequence:
    """A descriptor together with cached values over a window."""

    dim: int
    generator: object
    window: LatticeWindow
    lo: np.ndarray = field(repr=False, default=None)
    hi: np.ndarray = field(repr=False, default=None)
    cache: np.ndarray = field(repr=False, default=None)

    def box(self, lo, hi):
        """Z over an arbitrary inclusive box, from the cache when possible."""
        lo = np.asarray(lo, dtype=np.int64)
        hi = np.asarray(hi, dtype=np.int64)
        if self.cache is not None and np.all(lo >= self.lo) and np.all(hi <= self.hi):
            sl = tuple(slice(int(a - b), int(c - b) + 1) for a, b, c in zip(lo, self.lo, hi))
            return self.cache[(slice(None),) + sl]
        return evaluate_box(self.generator, self.dim, lo, hi)

    def values(self, k):
        return self.generator.evaluate(np.atleast_2d(np.asarray(k, dtype=np.int64)), self.dim)

    @property
    def sup_norm(self) -> float:
        return float(np.abs(self.cache).max()) if self.cache is not None and self.cache.size else 0.0

    def covers(self, window: LatticeWindow) -> bool:
        lo, hi = window.bounds()
        return bool(np.all(lo >= self.lo) and np.all(hi <= self.hi))


def generate(descriptor, window: LatticeWindow) -> LatticeSequence:
    """Evaluate a descriptor over a window (cached on its bounding box)."""
    lo, hi = window.bounds()
    cache = evaluate_box(descriptor, window.dim, lo, hi)
    return LatticeSequence(window.dim, descriptor, window, np.asarray(lo), np.asarray(hi), cache)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def _window_values(seq: LatticeSequence, window: LatticeWindow):
    if window.dim != seq.dim:
        raise ValueError("window and sequence dimensions differ")
    if not seq.covers(window):
        raise ValueError("window is not inside the sequence's cached range")
    lo, hi = window.bounds()
    mask = window.mask(lo, hi)
    if not mask.any():
        raise ValueError("empty window")
    return seq.box(lo, hi), mask, lo


def cesaro_average(seq: LatticeSequence, window: LatticeWindow) -> np.ndarray:
    """Mean of Z_k over the lattice points of the window."""
    z, mask, _ = _window_values(seq, window)
    return np.array([z[c][mask].mean() for c in range(seq.dim)])


@dataclass
class CorrelationTable:
    """Empirical C_{l,i,j} for all lags |l| <= L_max."""

    lags: np.ndarray
    values: np.ndarray
    mean: np.ndarray
    convergence_rate: dict = field(default_factory=dict)

    def at(self, lag):
        lag = np.atleast_1d(lag)
        hit = np.nonzero(np.all(self.lags == lag, axis=1))[0]
        if not len(hit):
            raise KeyError(f"lag {tuple(lag)} not in table")
        return self.values[hit[0]]

    def rows(self):
        d = self.lags.shape[1]
        for lag, val in zip(self.lags, self.values):
            yield [*lag.tolist(), *[val[i, j] for i in range(d) for j in range(d)]]


def lag_set(dim, L_max):
    r = int(math.floor(L_max))
    pts = np.array(list(itertools.product(range(-r, r + 1), repeat=dim)), dtype=np.int64)
    return pts[np.einsum("ij,ij->i", pts, pts) <= L_max**2 + 1e-12]


def _lag_means(zbar, inner, lags, lo_inner_offset):
    """Windowed means of zbar_i(k) zbar_j(k+l) over the inner mask."""
    dim = zbar.shape[0]
    n = inner.sum()
    core = tuple(slice(o, o + s) for o, s in zip(lo_inner_offset, inner.shape))
    a = zbar[(slice(None),) + core]
    out = np.empty((len(lags), dim, dim))
    for il, lag in enumerate(lags):
        sl = tuple(slice(o + int(l), o + int(l) + s) for o, l, s in zip(lo_inner_offset, lag, inner.shape))
        b = zbar[(slice(None),) + sl]
        for i in range(dim):
            ai = np.where(inner, a[i], 0.0)
            for j in range(dim):
                out[il, i, j] = np.sum(ai * b[j]) / n
    return out


def correlation_constants(seq: LatticeSequence, window: LatticeWindow, L_max: float,
                          rate_windows: int = 3) -> CorrelationTable:
    """Empirical correlation constants C_{l,i,j} over a window.

    The centering uses the Cesaro average over the whole window; products
    are averaged over k in the window shrunk by ``L_max`` so that every
    lagged index k + l stays inside.  The convergence rate compares nested
    windows R/2^j (j = 1..rate_windows) against R.
    """
    if window.radius < 4 * L_max:
        raise ValueError(f"window radius {window.radius} is below 4*L_max = {4 * L_max}")
    z, mask, lo = _window_values(seq, window)
    mean = np.array([z[c][mask].mean() for c in range(seq.dim)])
    zbar = z - mean.reshape((-1,) + (1,) * seq.dim)
    lags = lag_set(seq.dim, L_max)

    def table_for(win):
        ilo, ihi = win.bounds()
        inner = win.mask(ilo, ihi)
        return _lag_means(zbar, inner, lags, np.asarray(ilo) - lo)

    values = table_for(window.shrink(L_max))
    rate = {}
    radii, errs = [], []
    for j in range(1, rate_windows + 1):
        r = window.radius / 2**j
        if r - L_max < 1:
            break
        sub = table_for(LatticeWindow(seq.dim, window.center, r - L_max, window.shape))
        radii.append(r)
        errs.append(float(np.abs(sub - values).max()))
    if len(radii) >= 2 and all(e > 0 for e in errs):
        slope, icpt = np.polyfit(np.log(radii), np.log(errs), 1)
        rate = {"exponent": float(-slope), "constant": float(np.exp(icpt)), "radii": radii, "errors": errs}
    else:
        rate = {"exponent": None, "constant": 0.0 if all(e == 0 for e in errs) else None,
                "radii": radii, "errors": errs}
    return CorrelationTable(lags, values, mean, rate)


@dataclass
class GeneralCorrelation:
    lag: tuple
    value: float
    count: int


def general_correlation(seq: LatticeSequence, window: LatticeWindow,
                        F: Callable[[np.ndarray, np.ndarray], np.ndarray], lag) -> GeneralCorrelation:
    """Windowed mean of F(Z_k, Z_{k+l}) over k with k and k + l in the window.

    ``F`` receives two arrays of shape (n, d) and returns n values.
    """
    lag = np.atleast_1d(np.asarray(lag, dtype=np.int64))
    z, mask, lo = _window_values(seq, window)
    inner = window.shrink(float(np.linalg.norm(lag))) if np.any(lag) else window
    if inner.radius <= 0:
        raise ValueError("lag too large for the window")
    ilo, ihi = inner.bounds()
    imask = inner.mask(ilo, ihi)
    off = np.asarray(ilo) - lo
    core = tuple(slice(o, o + s) for o, s in zip(off, imask.shape))
    shifted = tuple(slice(o + int(l), o + int(l) + s) for o, l, s in zip(off, lag, imask.shape))
    a = np.stack([z[(c,) + core][imask] for c in range(seq.dim)], axis=1)
    b = np.stack([z[(c,) + shifted][imask] for c in range(seq.dim)], axis=1)
    vals = np.asarray(F(a, b), dtype=float)
    val = float(np.mean(vals))
    if not math.isfinite(val):
        raise ValueError("general correlation is not finite")
    return GeneralCorrelation(tuple(lag.tolist()), val, int(len(vals)))


def average_diagnostic(descriptor, dim, radius=1024, tol=2e-2, centers=None):
    """Empirical check of the Cesaro-average assumption.

    Compares window averages at radii R and R/2 around several centers; the
    sequence passes when all of them agree with the central R-average within
    ``tol`` (absolute, relative to 1 + |average|).
    """
    if centers is None:
        centers = [(0,) * dim, (radius // 2,) * dim, (-(radius // 2),) * dim]
    ref = None
    spread = 0.0
    for c in centers:
        for r in (radius, radius / 2):
            w = LatticeWindow(dim, c, r)
            avg = cesaro_average(generate(descriptor, w), w)
            if ref is None:
                ref = avg
            spread = max(spread, float(np.abs(avg - ref).max()))
    ok = spread <= tol * (1 + float(np.abs(ref).max()))
    return ok, ref, spread


def uniform_correlation_rate(descriptor, dim: int, eps_list: Sequence[float],
                             lag_schedule: Callable[[float], float] | None = None,
                             ref_factor: float | None = None, center=None) -> dict:
    """Empirical uniform correlation rate gamma(eps) over windows of radius 1/eps.

    Returns gamma-hat per eps (sup over |l| <= L(eps) of the deviation from the
    reference table at radius ``ref_factor / min(eps)``; default factor 16 in
    1D and 2 in 2D), the products with
    |ln eps| and a PASS flag when the product is non-increasing over the final
    three points (strictly decreasing unless identically zero).
    """
    eps = np.asarray(eps_list, dtype=float)
    if len(eps) < 3:
        raise ValueError("uniform_correlation_rate needs at least 3 schedule points")
    if np.any(np.diff(eps) >= 0):
        raise ValueError("eps schedule must be strictly decreasing (windows increasing)")
    if lag_schedule is None:
        lag_schedule = lambda e: math.ceil(e ** -0.25)  # noqa: E731
    lags = [float(lag_schedule(e)) for e in eps]
    if np.any(np.diff(lags) < 0):
        raise ValueError("lag cutoff must be non-decreasing along the schedule")
    L_ref = max(lags)
    if ref_factor is None:
        ref_factor = 16.0 if dim == 1 else 2.0
    R_ref = ref_factor / eps.min()
    ref_win = LatticeWindow(dim, center, R_ref)
    ref_seq = generate(descriptor, ref_win)
    ref = correlation_constants(ref_seq, ref_win, L_ref, rate_windows=0)
    gam = []
    for e, L in zip(eps, lags):
        w = LatticeWindow(dim, center, 1.0 / e)
        tab = correlation_constants(ref_seq, w, L, rate_windows=0) if ref_seq.covers(w) else \
            correlation_constants(generate(descriptor, w), w, L, rate_windows=0)
        keep = np.einsum("ij,ij->i", ref.lags, ref.lags) <= L * L + 1e-12
        gam.append(float(np.abs(tab.values - ref.values[keep]).max()))
    gam = np.array(gam)
    prod = gam * np.abs(np.log(eps))
    tail = prod[-3:]
    if np.all(tail <= 1e-15):
        passed = True
    else:
        passed = bool(np.all(np.diff(tail) < 0))
    fit = None
    if np.all(gam > 0):
        slope, icpt = np.polyfit(np.log(eps), np.log(gam), 1)
        fit = {"exponent": float(slope), "constant": float(np.exp(icpt))}
    return {"eps": eps.tolist(), "lag_cutoff": lags, "gamma": gam.tolist(),
            "gamma_log": prod.tolist(), "pass": passed, "fit": fit, "reference_radius": R_ref}


def emit_point_cloud(seq: LatticeSequence, window: LatticeWindow):
    """Indices k and perturbed points X_k = k + Z_k for k in the window."""
    k = window.indices()
    lo = seq.lo if seq.cache is not None else None
    if lo is not None and seq.covers(window):
        idx = k - lo
        z = np.stack([seq.cache[(c,) + tuple(idx.T)] for c in range(seq.dim)], axis=1)
    else:
        z = seq.values(k)
    return k, k + z


def write_csv(path, index_rows, value_rows, index_names, value_names):
    """CSV with a header row: k-index columns then value columns."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(index_names) + list(value_names))
        for a, b in zip(index_rows, value_rows):
            w.writerow([int(v) for v in np.atleast_1d(a)] + [repr(float(v)) for v in np.atleast_1d(b)])
