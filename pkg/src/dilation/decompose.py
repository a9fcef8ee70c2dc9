"""Recover a scale-separated form from samples of an oscillatory coefficient.

The pipeline splits a uniformly sampled trace into a smooth part (mollified,
then fitted by a sparse polynomial) and oscillatory intrinsic mode functions
found by empirical mode decomposition. Each mode can then be slowed down by a
factor ``m`` in phase while keeping its amplitude envelope, which mimics
rescaling the fast variable when the two-scale form is not available.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

__all__ = [
    "SampledTrace",
    "SparsePolynomial",
    "ModeSet",
    "HybridCoefficient",
    "lowpass_split",
    "interior_mask",
    "fit_monomials",
    "count_extrema",
    "emd_sift",
    "decompose",
    "stretch_mode",
    "hybrid_dilate",
]


@dataclass
class SampledTrace:
    """Samples of one tensor entry on a uniform grid."""

    x: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.x.shape != self.values.shape or self.x.ndim != 1 or len(self.x) < 3:
            raise ValueError("need matching 1D abscissae and values with at least 3 samples")
        dx = np.diff(self.x)
        if not np.allclose(dx, dx[0], rtol=1e-9, atol=0) or dx[0] <= 0:
            raise ValueError("abscissae must be uniformly spaced and increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trace contains non-finite values")

    @property
    def spacing(self) -> float:
        return float(self.x[1] - self.x[0])

    @classmethod
    def sample(cls, func, n: int = 2001, a: float = 0.0, b: float = 1.0) -> "SampledTrace":
        x = np.linspace(a, b, n)
        return cls(x, np.asarray(func(x), dtype=float))


def _as_trace(trace, x=None) -> SampledTrace:
    if isinstance(trace, SampledTrace):
        return trace
    values = np.asarray(trace, dtype=float)
    if x is None:
        x = np.linspace(0.0, 1.0, len(values))
    return SampledTrace(x, values)


def lowpass_split(trace, width: float, x=None):
    """Mollify with the bump ``(1 - (t/width)^2)^4`` supported on ``|t| <= width``.

    The signal is extended by odd reflection about each endpoint, so linear
    functions pass through unchanged. Returns ``(smooth, residual)`` with
    ``smooth + residual`` equal to the input.
    """
    tr = _as_trace(trace, x)
    h = tr.spacing
    span = tr.x[-1] - tr.x[0]
    if width < 2 * h:
        raise ValueError(f"width {width:g} is below two grid spacings ({2 * h:g})")
    if width > span:
        raise ValueError(f"width {width:g} exceeds the sampled interval ({span:g})")
    k = int(math.floor(width / h))
    t = np.arange(-k, k + 1) * h / width
    kernel = np.clip(1.0 - t * t, 0.0, None) ** 4
    kernel /= kernel.sum()
    padded = np.pad(tr.values, k, mode="reflect", reflect_type="odd")
    smooth = np.convolve(padded, kernel, mode="valid")
    return smooth, tr.values - smooth


def interior_mask(x, width: float) -> np.ndarray:
    """Samples whose mollifier window stays inside the sampled interval."""
    x = np.asarray(x, dtype=float)
    mask = (x >= x[0] + width) & (x <= x[-1] - width)
    return mask if mask.sum() >= 2 else np.ones(len(x), dtype=bool)


@dataclass
class SparsePolynomial:
    """Polynomial ``sum_k c_k x^alpha_k`` in one or two variables."""

    exponents: np.ndarray  # (K, d) integer
    coefficients: np.ndarray  # (K,)

    @property
    def dim(self) -> int:
        return self.exponents.shape[1]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pts = x.reshape(-1, 1) if self.dim == 1 else x.reshape(-1, self.dim)
        out = np.zeros(len(pts))
        for alpha, c in zip(self.exponents, self.coefficients):
            out += c * np.prod(pts ** alpha, axis=1)
        return out.reshape(x.shape[:-1] if self.dim > 1 else x.shape)

    def coefficient(self, *alpha) -> float:
        """Coefficient of ``x^alpha`` (zero if the term was pruned)."""
        hit = np.all(self.exponents == np.asarray(alpha), axis=1)
        return float(self.coefficients[hit][0]) if hit.any() else 0.0

    def terms(self) -> dict:
        return {tuple(int(a) for a in alpha): float(c)
                for alpha, c in zip(self.exponents, self.coefficients) if c != 0.0}


def _monomial_exponents(dim: int, degree: int) -> np.ndarray:
    return np.array([a for a in product(range(degree + 1), repeat=dim) if sum(a) <= degree])


def fit_monomials(samples, degree: int, threshold: float = 1e-3, x=None) -> SparsePolynomial:
    """Sparse least-squares fit in the monomial basis of total degree ``degree``.

    Coefficients smaller than ``threshold`` times the largest one are dropped
    and the remaining terms refitted.

    Parameters
    ----------
    samples : (N,) array
    x : (N,) or (N, 2) array, optional
        Sample locations; defaults to a uniform grid on ``[0, 1]``.
    """
    if not 0 <= degree <= 6:
        raise ValueError("degree must lie in [0, 6]")
    y = np.asarray(samples, dtype=float).reshape(-1)
    if x is None:
        x = np.linspace(0.0, 1.0, len(y))
    x = np.asarray(x, dtype=float)
    pts = x.reshape(-1, 1) if x.ndim == 1 else x
    exps = _monomial_exponents(pts.shape[1], degree)

    def lstsq(e):
        V = np.prod(pts[:, None, :] ** e[None, :, :], axis=2)
        # column scaling improves conditioning of the monomial basis
        scale = np.linalg.norm(V, axis=0)
        scale[scale == 0] = 1.0
        c, _, rank, _ = np.linalg.lstsq(V / scale, y, rcond=None)
        if rank < len(e):
            raise np.linalg.LinAlgError(f"rank-deficient monomial fit (rank {rank} < {len(e)})")
        return c / scale

    coef = lstsq(exps)
    big = np.abs(coef).max()
    keep = np.abs(coef) >= threshold * big if big > 0 else np.zeros(len(coef), bool)
    if not keep.any():
        return SparsePolynomial(exps[:1], np.zeros(1))
    exps = exps[keep]
    return SparsePolynomial(exps, lstsq(exps))


def _extrema(v):
    d = np.diff(v)
    maxima = np.flatnonzero((d[:-1] > 0) & (d[1:] <= 0)) + 1
    minima = np.flatnonzero((d[:-1] < 0) & (d[1:] >= 0)) + 1
    return maxima, minima


def count_extrema(values) -> int:
    maxima, minima = _extrema(np.asarray(values, dtype=float))
    return len(maxima) + len(minima)


def _envelope(x, v, idx, n_mirror=2):
    """Cubic spline through ``(x[idx], v[idx])`` with extrema mirrored at both ends."""
    px, pv = x[idx], v[idx]
    left = min(n_mirror, len(idx))
    right = min(n_mirror, len(idx))
    lx = 2 * x[0] - px[:left][::-1]
    rx = 2 * x[-1] - px[-right:][::-1]
    pos = np.concatenate([lx, px, rx])
    val = np.concatenate([pv[:left][::-1], pv, pv[-right:][::-1]])
    pos, uniq = np.unique(pos, return_index=True)
    return CubicSpline(pos, val[uniq])(x)


def _sift(x, r, tol, max_sifts):
    h = r.copy()
    for _ in range(max_sifts):
        maxima, minima = _extrema(h)
        if len(maxima) < 2 or len(minima) < 2:
            break
        mean = 0.5 * (_envelope(x, h, maxima) + _envelope(x, h, minima))
        h = h - mean
        if np.max(np.abs(mean)) <= tol * np.max(np.abs(h)):
            break
    return h


def emd_sift(residual, max_imfs: int = 8, x=None, tol: float = 1e-3, max_sifts: int = 50,
             floor: float = 0.0):
    """Empirical mode decomposition by envelope sifting.

    Returns ``(imfs, remainder)`` where ``sum(imfs) + remainder`` is the input.
    Peeling stops when the remainder has fewer than four extrema, its max-norm
    is at most ``floor``, or ``max_imfs`` modes were extracted.
    """
    tr = _as_trace(residual, x)
    r = tr.values.copy()
    imfs = []
    while len(imfs) < max_imfs and np.max(np.abs(r)) > floor:
        maxima, minima = _extrema(r)
        if len(maxima) + len(minima) < 4 or len(maxima) < 2 or len(minima) < 2:
            break
        imf = _sift(tr.x, r, tol, max_sifts)
        imfs.append(imf)
        r = r - imf
    return imfs, r


@dataclass
class ModeSet:
    """Additive decomposition ``smooth(x) + sum(imfs) + residual`` of a trace."""

    x: np.ndarray
    smooth: SparsePolynomial
    imfs: list = field(default_factory=list)
    residual: np.ndarray | None = None

    def smooth_values(self) -> np.ndarray:
        return self.smooth(self.x)

    def reconstruct(self) -> np.ndarray:
        out = self.smooth_values() + self.residual
        for imf in self.imfs:
            out = out + imf
        return out

    def to_csv(self, path) -> None:
        cols = ["x", "smooth"] + [f"imf{k + 1}" for k in range(len(self.imfs))] + ["residual"]
        data = np.column_stack([self.x, self.smooth_values(), *self.imfs, self.residual])
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in data:
                fh.write(",".join(f"{v:.12g}" for v in row) + "\n")


def decompose(trace, width: float, degree: int = 3, threshold: float = 1e-3,
              max_imfs: int = 8, x=None) -> ModeSet:
    """Mollify, fit the smooth part, and run EMD on what the fit leaves over.

    The fit only uses samples at least ``width`` away from both ends, where
    the mollifier does not see the reflected extension.
    """
    tr = _as_trace(trace, x)
    smooth, _ = lowpass_split(tr, width)
    inner = interior_mask(tr.x, width)
    poly = fit_monomials(smooth[inner], degree, threshold, x=tr.x[inner])
    # leftovers at rounding level are not oscillations
    floor = 1e-10 * max(np.max(np.abs(tr.values)), 1e-300)
    imfs, rest = emd_sift(tr.values - poly(tr.x), max_imfs, x=tr.x, floor=floor)
    return ModeSet(tr.x, poly, imfs, rest)


def _zero_crossings(x, v):
    up = np.flatnonzero((v[:-1] < 0) & (v[1:] >= 0))
    down = np.flatnonzero((v[:-1] > 0) & (v[1:] <= 0))

    def locate(i):
        return x[i] - v[i] * (x[i + 1] - x[i]) / (v[i + 1] - v[i])

    return locate(up), locate(down)


def _refined_extrema(x, v, idx):
    """Parabolic vertex through three samples around each discrete extremum."""
    a, b, c = v[idx - 1], v[idx], v[idx + 1]
    denom = a - 2 * b + c
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(denom != 0, 0.5 * (a - c) / denom, 0.0)
    delta = np.clip(delta, -0.5, 0.5)
    h = x[1] - x[0]
    return x[idx] + delta * h, b - 0.25 * (a - c) * delta


def stretch_mode(imf, m: float, x=None, origin: float | None = None) -> np.ndarray:
    """Slow an intrinsic mode down by ``m`` while keeping its envelope.

    Zero crossings and extrema fix the phase at quarter-period marks; the
    phase is interpolated linearly in between, scaled about its value at
    ``origin`` (default: the first sample) and recombined with a spline
    envelope through the extrema magnitudes.
    """
    if m < 1:
        raise ValueError(f"stretch factor must satisfy m >= 1, got {m}")
    tr = _as_trace(imf, x)
    xs, v = tr.x, tr.values
    if m == 1:
        return v.copy()
    ups, downs = _zero_crossings(xs, v)
    maxima, minima = _extrema(v)
    if len(ups) + len(downs) == 0 or len(maxima) + len(minima) == 0:
        warnings.warn("mode has no zero crossings; returned unchanged", RuntimeWarning,
                      stacklevel=2)
        return v.copy()
    px_max, pv_max = _refined_extrema(xs, v, maxima)
    px_min, pv_min = _refined_extrema(xs, v, minima)

    quarter = 0.5 * math.pi
    pos = np.concatenate([ups, px_max, downs, px_min])
    kind = np.concatenate([np.full(len(ups), 0), np.full(len(px_max), 1),
                           np.full(len(downs), 2), np.full(len(px_min), 3)])
    order = np.argsort(pos, kind="stable")
    pos, kind = pos[order], kind[order]
    steps = np.mod(np.diff(kind), 4)
    steps[steps == 0] = 4
    phase = kind[0] * quarter + np.concatenate([[0.0], np.cumsum(steps) * quarter])

    theta = np.interp(xs, pos, phase)
    if len(pos) >= 2:
        lo_slope = (phase[1] - phase[0]) / (pos[1] - pos[0])
        hi_slope = (phase[-1] - phase[-2]) / (pos[-1] - pos[-2])
        theta = np.where(xs < pos[0], phase[0] + (xs - pos[0]) * lo_slope, theta)
        theta = np.where(xs > pos[-1], phase[-1] + (xs - pos[-1]) * hi_slope, theta)

    ex = np.concatenate([px_max, px_min])
    ev = np.abs(np.concatenate([pv_max, pv_min]))
    o = np.argsort(ex)
    ex, ev = ex[o], ev[o]
    ex, uniq = np.unique(ex, return_index=True)
    ev = ev[uniq]
    if len(ex) >= 2:
        envelope = PchipInterpolator(ex, ev)(np.clip(xs, ex[0], ex[-1]))
    else:
        envelope = np.full_like(xs, ev[0])

    x0 = xs[0] if origin is None else origin
    theta0 = np.interp(x0, xs, theta)
    return envelope * np.sin(theta0 + (theta - theta0) / m)


@dataclass
class HybridCoefficient:
    """Frequency-stretched trace, evaluable by linear interpolation."""

    x: np.ndarray
    values: np.ndarray
    modes: ModeSet
    m: float

    def __call__(self, x) -> np.ndarray:
        return np.interp(np.asarray(x, dtype=float), self.x, self.values)


def hybrid_dilate(trace, m: float, width: float, degree: int = 3, x=None,
                  threshold: float = 1e-3, max_imfs: int = 8,
                  origin: float | None = None) -> HybridCoefficient:
    """Smooth fit plus stretched modes plus the slow remainder."""
    tr = _as_trace(trace, x)
    modes = decompose(tr, width, degree, threshold, max_imfs)
    values = modes.smooth_values() + modes.residual
    for imf in modes.imfs:
        values = values + stretch_mode(imf, m, x=tr.x, origin=origin)
    return HybridCoefficient(tr.x, values, modes, m)
