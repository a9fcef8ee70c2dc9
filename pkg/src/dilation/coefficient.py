"""Coefficient fields, the three dilation operators and the built-in systems.

Fields are evaluable maps rather than sampled arrays. Every field takes a batch
of points of shape ``(N, d)`` and returns tensors of shape ``(N, d, d)``; a
two-scale field additionally takes the fast variable ``lam`` with the same
shape as ``x``. Sampling only happens when a solver asks for values at its
quadrature points, so dilation (a reparameterization of the input) is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

__all__ = [
    "TensorField",
    "ScaleSeparatedField",
    "StructuredField",
    "DilationParams",
    "System",
    "as_points",
    "anchor",
    "shrink",
    "dilate_local",
    "wrap",
    "dilate_partial",
    "dilate_structure_aware",
    "represent_dilated",
    "sample_grid",
    "min_eigenvalue",
    "make_system",
    "SYSTEMS",
]

TWO_PI = 2.0 * math.pi


def as_points(x, dim: int) -> np.ndarray:
    """Coerce scalars, 1D arrays and point lists to an ``(N, dim)`` float array."""
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1) if dim == 1 else pts.reshape(1, -1)
    elif pts.ndim == 1:
        pts = pts.reshape(-1, 1) if dim == 1 else pts.reshape(1, -1)
    if pts.shape[-1] != dim:
        raise ValueError(f"expected points with {dim} coordinates, got shape {pts.shape}")
    return pts


def _as_tensors(values, n: int, dim: int) -> np.ndarray:
    out = np.asarray(values, dtype=float)
    if out.shape == (n,):
        # scalar coefficient times identity
        return out[:, None, None] * np.eye(dim)
    if out.shape == (n, dim, dim):
        return out
    return np.broadcast_to(out, (n, dim, dim)).copy()


def min_eigenvalue(tensors: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue of a batch of symmetric tensors."""
    tensors = np.asarray(tensors, dtype=float)
    if tensors.shape[-1] == 1:
        return tensors[..., 0, 0]
    a, b, c = tensors[..., 0, 0], tensors[..., 0, 1], tensors[..., 1, 1]
    return 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b * b)


def sample_grid(dim: int, n: int = 33) -> np.ndarray:
    """Uniform ``n**dim`` grid of points on the closed unit cube."""
    t = np.linspace(0.0, 1.0, n)
    if dim == 1:
        return t[:, None]
    g1, g2 = np.meshgrid(t, t, indexing="ij")
    return np.column_stack([g1.ravel(), g2.ravel()])


class TensorField:
    """Single-argument symmetric tensor field on the unit cube.

    ``func`` receives an ``(N, d)`` array and returns either ``(N, d, d)``
    tensors or ``(N,)`` scalars, the latter meaning a multiple of the identity.
    ``r`` and ``M`` are the declared ellipticity and boundedness constants;
    they are only spot-checked, see :meth:`check`.
    """

    def __init__(self, func: Callable, dim: int, name: str = "", r: float | None = None,
                 M: float | None = None):
        if dim not in (1, 2):
            raise ValueError("only d = 1 and d = 2 are supported")
        self.func = func
        self.dim = dim
        self.name = name
        self.r = r
        self.M = M

    def __call__(self, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        return _as_tensors(self.func(pts), len(pts), self.dim)

    def __add__(self, other: "TensorField") -> "TensorField":
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        return TensorField(lambda x: self(x) + other(x), self.dim,
                           name=f"({self.name}+{other.name})")

    def __repr__(self):
        return f"TensorField(name={self.name!r}, dim={self.dim})"

    def check(self, n: int = 33) -> float:
        """Sample on an ``n**d`` grid; return the smallest eigenvalue seen.

        Raises ``ValueError`` if a sample is not symmetric or falls below the
        declared ``r``.
        """
        values = self(sample_grid(self.dim, n))
        if not np.allclose(values, np.swapaxes(values, 1, 2), atol=1e-12):
            raise ValueError(f"field {self.name!r} is not symmetric")
        lo = float(min_eigenvalue(values).min())
        bound = 0.0 if self.r is None else self.r
        if lo < bound - 1e-12 or lo <= 0.0:
            raise ValueError(f"field {self.name!r} has eigenvalue {lo:.3g} below r={bound}")
        return lo

    @classmethod
    def constant(cls, value, dim: int) -> "TensorField":
        tensor = np.asarray(value, dtype=float)
        if tensor.ndim == 0:
            tensor = float(tensor) * np.eye(dim)
        lo = float(min_eigenvalue(tensor[None])[0])
        return cls(lambda x: np.broadcast_to(tensor, (len(x), dim, dim)).copy(), dim,
                   name="constant", r=lo, M=float(np.abs(np.linalg.eigvalsh(tensor)).max()))


class ScaleSeparatedField:
    """Two-scale field ``A(x, lam)``, 1-periodic in ``lam``.

    ``func(x, lam)`` receives two ``(N, d)`` arrays.
    """

    def __init__(self, func: Callable, dim: int, name: str = "", r: float | None = None,
                 M: float | None = None):
        if dim not in (1, 2):
            raise ValueError("only d = 1 and d = 2 are supported")
        self.func = func
        self.dim = dim
        self.name = name
        self.r = r
        self.M = M

    def __call__(self, x, lam) -> np.ndarray:
        pts = as_points(x, self.dim)
        fast = as_points(lam, self.dim)
        pts, fast = np.broadcast_arrays(pts, fast)
        return _as_tensors(self.func(pts, fast), len(pts), self.dim)

    def __repr__(self):
        return f"ScaleSeparatedField(name={self.name!r}, dim={self.dim})"

    def at(self, x) -> Callable[[np.ndarray], np.ndarray]:
        """Freeze the slow variable: returns the cell map ``lam -> A(x, lam)``."""
        x0 = as_points(x, self.dim)[:1]

        def cell(lam):
            fast = as_points(lam, self.dim)
            return self(np.repeat(x0, len(fast), axis=0), fast)

        return cell


@dataclass(frozen=True)
class StructuredField:
    """Additive split ``structure + oscillation`` used by structure-aware dilation."""

    structure: TensorField
    oscillation: TensorField

    @property
    def dim(self) -> int:
        return self.structure.dim

    def total(self) -> TensorField:
        return self.structure + self.oscillation


@dataclass(frozen=True)
class DilationParams:
    """Mesoscopic length ``L``, scaling factor ``m`` and anchoring factor ``nu``."""

    L: float
    m: float = 1.0
    nu: float = 0.5

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError(f"mesoscopic length must be positive, got L={self.L}")
        if not self.m >= 1:
            raise ValueError(f"scaling factor must satisfy m >= 1, got m={self.m}")
        if not 0.0 <= self.nu <= 1.0:
            raise ValueError(f"anchoring factor must lie in [0, 1], got nu={self.nu}")

    @property
    def n_cells(self) -> int:
        """Number of mesoscopic cells per unit length; requires ``1/L`` integer."""
        k = round(1.0 / self.L)
        if k < 1 or abs(1.0 / self.L - k) > 1e-9 * max(1, k):
            raise ValueError(f"1/L must be a positive integer to tile [0,1], got L={self.L}")
        return k


def _cell_index(y, params: DilationParams, n_cells: int | None = None) -> np.ndarray:
    k = np.floor(np.asarray(y, dtype=float) / params.L)
    if n_cells is not None:
        # right endpoint y = 1 belongs to the last cell
        k = np.minimum(k, n_cells - 1)
    return k


def anchor(y, params: DilationParams, n_cells: int | None = None):
    """Anchor point ``(floor(y/L) + nu) L`` of the cell containing ``y``."""
    out = (_cell_index(y, params, n_cells) + params.nu) * params.L
    return float(out) if np.ndim(out) == 0 else out


def shrink(y, params: DilationParams, n_cells: int | None = None):
    """Contract ``y`` towards its anchor by the factor ``1/m`` (componentwise)."""
    y = np.asarray(y, dtype=float)
    if params.m == 1:
        return float(y) if y.ndim == 0 else y.copy()
    a = (_cell_index(y, params, n_cells) + params.nu) * params.L
    out = (y - a) / params.m + a
    return float(out) if out.ndim == 0 else out


def dilate_local(field: TensorField, params: DilationParams) -> TensorField:
    """Local dilation: evaluate ``field`` at the shrunk coordinates."""
    n_cells = params.n_cells

    def func(x):
        return field(shrink(x, params, n_cells))

    return TensorField(func, field.dim, name=f"D[{field.name}]", r=field.r, M=field.M)


def wrap(A: ScaleSeparatedField, eps: float) -> TensorField:
    """The eps-wrapping ``x -> A(x, x/eps)``."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")

    def func(x):
        return A(x, x / eps)

    return TensorField(func, A.dim, name=f"{A.name}^eps", r=A.r, M=A.M)


def dilate_partial(A: ScaleSeparatedField, m: float) -> ScaleSeparatedField:
    """Partial dilation ``(x, lam) -> A(x, lam/m)``; only the fast argument is rescaled."""
    if not m >= 1:
        raise ValueError(f"scaling factor must satisfy m >= 1, got m={m}")
    if m == 1:
        return A

    def func(x, lam):
        return A(x, lam / m)

    return ScaleSeparatedField(func, A.dim, name=f"Dp[{A.name}]", r=A.r, M=A.M)


def dilate_structure_aware(field: StructuredField, params: DilationParams) -> TensorField:
    """Dilate the oscillatory summand only; the structure is kept as is."""
    dilated = dilate_local(field.oscillation, params)
    out = field.structure + dilated
    out.name = f"Ds[{field.structure.name}+{field.oscillation.name}]"
    return out


def represent_dilated(A: ScaleSeparatedField, eps: float,
                      params: DilationParams) -> ScaleSeparatedField:
    """Two-scale representative of the locally dilated coefficient.

    Returns ``B`` with ``B(x, lam) = A(shrink(x), lam + phase(x))`` where the
    phase ``(1 - 1/m) anchor(x) / eps`` is constant on each mesoscopic cell, so
    that wrapping ``B`` at ``m*eps`` reproduces ``dilate_local(wrap(A, eps))``.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    n_cells = params.n_cells

    def func(x, lam):
        a = anchor(x, params, n_cells)
        phi = (x - a) / params.m + a
        phase = (1.0 - 1.0 / params.m) * a / eps
        return A(phi, lam + phase)

    return ScaleSeparatedField(func, A.dim, name=f"R[{A.name}]", r=A.r, M=A.M)


# ---------------------------------------------------------------------------
# built-in systems


@dataclass(frozen=True)
class System:
    """A named test problem: two-scale coefficient, source and scale ``eps``.

    For the channel system ``structure`` and ``oscillation`` hold the additive
    split of ``field``.
    """

    name: str
    dim: int
    field: ScaleSeparatedField
    source: Callable[[np.ndarray], np.ndarray]
    eps: float
    params: dict = field(default_factory=dict)
    structure: TensorField | None = None
    oscillation: ScaleSeparatedField | None = None

    def coefficient(self, eps: float | None = None) -> TensorField:
        """The oscillatory coefficient ``A(x, x/eps)``."""
        return wrap(self.field, self.eps if eps is None else eps)

    def structured(self, eps: float | None = None) -> StructuredField:
        if self.structure is None or self.oscillation is None:
            raise ValueError(f"system {self.name!r} has no structure/oscillation split")
        return StructuredField(self.structure, wrap(self.oscillation, self.eps if eps is None else eps))

    def with_eps(self, eps: float) -> "System":
        return replace(self, eps=eps)


def _layered(eps=1 / 64, eta=1.0, theta=0.0, dim=2) -> System:
    amp = 0.9 * eta
    if dim == 1:
        def func(x, lam):
            return 1.0 + 0.1 * x[:, 0] + amp * np.sin(TWO_PI * lam[:, 0])

        def source(x):
            x1 = x[:, 0]
            return np.exp(-60 * (x1 - 0.3) ** 2) + np.exp(-60 * (x1 - 0.7) ** 2)
    else:
        c, s = math.cos(theta), math.sin(theta)

        def func(x, lam):
            slow = 1.0 + 0.1 * x[:, 0] + 0.05 * x[:, 1]
            return slow + amp * np.sin(TWO_PI * (c * lam[:, 0] - s * lam[:, 1]))

        def source(x):
            r1 = (x[:, 0] - 0.3) ** 2 + (x[:, 1] - 0.3) ** 2
            r2 = (x[:, 0] - 0.7) ** 2 + (x[:, 1] - 0.7) ** 2
            return np.exp(-60 * r1) + np.exp(-60 * r2)

    A = ScaleSeparatedField(func, dim, name="layered", r=1.0 - amp, M=1.15 + amp)
    return System("layered", dim, A, source, eps, dict(eta=eta, theta=theta, dim=dim))


def _het(eps=1 / 64, eta=1.0) -> System:
    def func(x, lam):
        x1, x2 = x[:, 0], x[:, 1]
        s1 = np.sin(TWO_PI * lam[:, 0])
        s2 = np.sin(TWO_PI * lam[:, 1])
        out = np.empty((len(x), 2, 2))
        out[:, 0, 0] = 1 + 0.1 * x1 + 0.8 * eta * ((4 + x1) / 5) * s1
        out[:, 0, 1] = out[:, 1, 0] = 0.1 * eta * (1 - 0.3 * x2) * s1
        out[:, 1, 1] = 1 + 0.8 * eta * ((7 + 3 * np.sin(TWO_PI * x2)) / 10) * s2
        return out

    def source(x):
        return 10.0 * (x[:, 0] - x[:, 1])

    A = ScaleSeparatedField(func, 2, name="het", r=1.0 - 0.9 * eta, M=1.1 + 0.9 * eta)
    return System("het", 2, A, source, eps, dict(eta=eta))


def bridge(y, width: float, s: float):
    """Smooth plateau: 1 for ``|y/width| <= s``, 0 beyond ``s + 1``, C1 in between."""
    t = np.abs(np.asarray(y, dtype=float)) / width
    ramp = ((t - s) ** 2 - 1.0) ** 2
    return np.where(t <= s, 1.0, np.where(t <= s + 1.0, ramp, 0.0))


def _channel(eps=1 / 32, eps_c=0.03, k=1.0, b=-1 / 8, eta_c=9.0, eta_o=0.6, s=0.5,
             sigma=0.2) -> System:
    norm = math.sqrt(k * k + 1)

    def structure_values(x):
        dist = (x[:, 1] - k * x[:, 0] - b) / norm
        return 1.0 + eta_c * bridge(dist, eps_c, s)

    def oscillation_func(x, lam):
        out = np.zeros((len(x), 2, 2))
        out[:, 0, 0] = eta_o * np.sin(TWO_PI * lam[:, 0])
        out[:, 1, 1] = eta_o * np.sin(TWO_PI * lam[:, 1])
        return out

    def func(x, lam):
        return oscillation_func(x, lam) + structure_values(x)[:, None, None] * np.eye(2)

    c_plus = np.array([0.25, 0.25 * k + b])
    c_minus = np.array([0.75, 0.75 * k + b])

    def source(x):
        gp = np.exp(-np.sum((x - c_plus) ** 2, axis=1) / (2 * sigma ** 2))
        gm = np.exp(-np.sum((x - c_minus) ** 2, axis=1) / (2 * sigma ** 2))
        return gp - gm

    structure = TensorField(structure_values, 2, name="A_s", r=1.0, M=1.0 + eta_c)
    oscillation = ScaleSeparatedField(oscillation_func, 2, name="A_o")
    A = ScaleSeparatedField(func, 2, name="channel", r=1.0 - eta_o, M=1.0 + eta_c + eta_o)
    params = dict(eps_c=eps_c, k=k, b=b, eta_c=eta_c, eta_o=eta_o, s=s, sigma=sigma)
    return System("channel", 2, A, source, eps, params, structure=structure,
                  oscillation=oscillation)


def _sin1d(eps=0.04) -> System:
    A = ScaleSeparatedField(lambda x, lam: 2.0 + np.sin(TWO_PI * lam[:, 0]), 1,
                            name="sin1d", r=1.0, M=3.0)
    return System("sin1d", 1, A, lambda x: np.ones(len(x)), eps, {})


SYSTEMS = {
    "layered": _layered,
    "het": _het,
    "channel": _channel,
    "sin1d": _sin1d,
}


def make_system(name: str, **params) -> System:
    """Build a registered system; unknown keyword parameters are rejected."""
    try:
        factory = SYSTEMS[name]
    except KeyError:
        raise ValueError(f"unknown system {name!r}; choose from {sorted(SYSTEMS)}") from None
    return factory(**params)
