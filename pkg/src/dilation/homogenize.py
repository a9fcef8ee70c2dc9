"""Homogenized tensors of two-scale fields.

Three routes are available: the 1D harmonic mean, closed forms for layered
and for separable diagonal media, and a P1 cell-problem solver on the periodic
unit cell. The closed forms are cheap enough to evaluate at every quadrature
point of a fine mesh; the cell solver is used to tabulate general fields on a
coarse grid and to cross-check the closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator

from .coefficient import ScaleSeparatedField, TensorField, as_points, min_eigenvalue
from .fem import SolverError, element_geometry, local_stiffness

__all__ = [
    "harmonic_mean_1d",
    "layered_closed_form",
    "separable_closed_form",
    "closed_form_field",
    "PeriodicMesh",
    "CorrectorField",
    "solve_cell_problem",
    "homogenized_tensor",
    "TensorTable",
    "tensor_table",
]

_CHUNK = 1 << 19


def _midpoints(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def harmonic_mean_1d(A: ScaleSeparatedField, x, n_quad: int = 4096):
    """Harmonic mean of ``A(x, .)`` over one period by the midpoint rule.

    ``x`` may be a scalar or an array of points; the result has matching shape.
    """
    if A.dim != 1:
        raise ValueError("harmonic_mean_1d needs a 1D field")
    if n_quad < 2:
        raise ValueError("n_quad must be at least 2")
    scalar = np.ndim(x) == 0
    pts = as_points(x, 1)
    lam = _midpoints(n_quad)
    out = np.empty(len(pts))
    step = max(1, _CHUNK // n_quad)
    for s in range(0, len(pts), step):
        p = pts[s:s + step]
        vals = A(np.repeat(p, n_quad, axis=0), np.tile(lam, len(p))[:, None])[:, 0, 0]
        vals = vals.reshape(len(p), n_quad)
        if np.any(vals <= 0):
            raise ValueError("coefficient has non-positive samples")
        out[s:s + step] = 1.0 / np.mean(1.0 / vals, axis=1)
    return float(out[0]) if scalar else out


def rotation(theta: float) -> np.ndarray:
    """``U_theta``; its first column is the layer normal in the fast variable."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]])


def layered_closed_form(A: ScaleSeparatedField, theta: float, x, n_quad: int = 128,
                        check: bool = True, tol: float = 1e-10):
    """Homogenized tensor of a medium layered across ``(cos t, -sin t)``.

    In the rotated frame ``B = U^T A U`` depends on the fast variable only
    through the normal coordinate, and

    ``B11 = 1/<1/b11>``, ``B12 = <b12/b11> B11``,
    ``B22 = <b22 - b12^2/b11> + B12^2/B11``.

    Parameters
    ----------
    x : point or (N, 2) array
        Returns a single ``(2, 2)`` tensor for one point, else ``(N, 2, 2)``.
    check : bool
        Verify on the first point that ``A`` does not vary along the layers.
    """
    if A.dim == 1:
        scalar = np.ndim(x) == 0
        h = harmonic_mean_1d(A, x, n_quad)
        return np.array([[h]]) if scalar else np.asarray(h)[:, None, None]
    single = np.ndim(x) == 1
    pts = as_points(x, 2)
    U = rotation(theta)
    normal, tangent = U[:, 0], U[:, 1]
    t = _midpoints(n_quad)
    lam = t[:, None] * normal
    if check:
        base = A(np.repeat(pts[:1], n_quad, axis=0), lam)
        for shift in (0.25, 0.5, 0.37):
            moved = A(np.repeat(pts[:1], n_quad, axis=0), lam + shift * tangent)
            if np.max(np.abs(moved - base)) > tol * max(1.0, np.max(np.abs(base))):
                raise ValueError("field varies along the layers; not a layered medium")

    out = np.empty((len(pts), 2, 2))
    step = max(1, _CHUNK // n_quad)
    for s in range(0, len(pts), step):
        p = pts[s:s + step]
        vals = A(np.repeat(p, n_quad, axis=0), np.tile(lam, (len(p), 1)))
        B = np.einsum("ji,qjk,kl->qil", U, vals, U).reshape(len(p), n_quad, 2, 2)
        b11, b12, b22 = B[..., 0, 0], B[..., 0, 1], B[..., 1, 1]
        if np.any(b11 <= 0):
            raise ValueError("coefficient has non-positive normal component")
        h11 = 1.0 / np.mean(1.0 / b11, axis=1)
        h12 = np.mean(b12 / b11, axis=1) * h11
        h22 = np.mean(b22 - b12 * b12 / b11, axis=1) + h12 * h12 / h11
        Bbar = np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)
        out[s:s + step] = np.einsum("ij,qjk,lk->qil", U, Bbar, U)
    return out[0] if single else out


def separable_closed_form(A: ScaleSeparatedField, x, n_quad: int = 128, check: bool = True,
                          tol: float = 1e-10):
    """Homogenized tensor of a diagonal field with ``A_ii`` depending on ``lam_i`` only.

    The cell problems decouple into 1D problems, so ``Abar_ii`` is the
    harmonic mean of ``A_ii`` along ``lam_i`` and the off-diagonal vanishes.
    """
    single = np.ndim(x) == (0 if A.dim == 1 else 1)
    pts = as_points(x, A.dim)
    d = A.dim
    t = _midpoints(n_quad)
    if check:
        rng = np.random.default_rng(0)
        lam = rng.random((64, d))
        v = A(np.repeat(pts[:1], 64, axis=0), lam)
        off = v - np.einsum("qii->qi", v)[:, :, None] * np.eye(d)
        if np.max(np.abs(off)) > tol:
            raise ValueError("field is not diagonal")
        for i in range(d):
            moved = lam.copy()
            moved[:, [k for k in range(d) if k != i]] += 0.31
            w = A(np.repeat(pts[:1], 64, axis=0), moved)
            if np.max(np.abs(w[:, i, i] - v[:, i, i])) > tol:
                raise ValueError(f"entry {i}{i} depends on other fast variables")

    out = np.zeros((len(pts), d, d))
    step = max(1, _CHUNK // n_quad)
    for s in range(0, len(pts), step):
        p = pts[s:s + step]
        xs = np.repeat(p, n_quad, axis=0)
        for i in range(d):
            lam = np.zeros((n_quad, d))
            lam[:, i] = t
            a = A(xs, np.tile(lam, (len(p), 1)))[:, i, i].reshape(len(p), n_quad)
            if np.any(a <= 0):
                raise ValueError("coefficient has non-positive diagonal samples")
            out[s:s + step, i, i] = 1.0 / np.mean(1.0 / a, axis=1)
    return out[0] if single else out


def closed_form_field(A: ScaleSeparatedField, kind: str = "layered", theta: float = 0.0,
                      n_quad: int = 64) -> TensorField:
    """Wrap a closed-form homogenization as an evaluable field of ``x``."""
    if kind == "layered":
        func = lambda x: layered_closed_form(A, theta, x, n_quad, check=False)
    elif kind == "separable":
        func = lambda x: separable_closed_form(A, x, n_quad, check=False)
    else:
        raise ValueError(f"unknown closed form {kind!r}")
    return TensorField(func, A.dim, name=f"H[{A.name}]", r=A.r, M=A.M)


# ---------------------------------------------------------------------------
# periodic cell problem


@dataclass(eq=False)
class PeriodicMesh:
    """Uniform ``n x n`` triangulation of the unit torus (nodes ``i + n*j``)."""

    n: int
    dim: int = 2

    def __post_init__(self):
        n = self.n
        t = np.arange(n) / n
        if self.dim == 1:
            self.nodes = t[:, None]
            i = np.arange(n)
            self.elements = np.column_stack([i, (i + 1) % n])
            coords = np.stack([t, t + 1.0 / n], axis=1)[:, :, None]
        else:
            x1, x2 = np.meshgrid(t, t, indexing="xy")
            self.nodes = np.column_stack([x1.ravel(), x2.ravel()])
            i, j = [g.ravel() for g in np.meshgrid(np.arange(n), np.arange(n), indexing="xy")]
            ip, jp = (i + 1) % n, (j + 1) % n
            a, b, c, d = i + n * j, ip + n * j, ip + n * jp, i + n * jp
            self.elements = np.empty((2 * n * n, 3), dtype=np.int64)
            self.elements[0::2] = np.column_stack([a, b, c])
            self.elements[1::2] = np.column_stack([a, c, d])
            # unwrapped coordinates so the geometry ignores the identification
            h = 1.0 / n
            pa = np.column_stack([i * h, j * h])
            lower = np.stack([pa, pa + [h, 0], pa + [h, h]], axis=1)
            upper = np.stack([pa, pa + [h, h], pa + [0, h]], axis=1)
            coords = np.empty((2 * n * n, 3, 2))
            coords[0::2], coords[1::2] = lower, upper
        self.coords = coords
        k = self.dim + 1
        flat = coords.reshape(-1, self.dim)
        idx = np.arange(len(flat)).reshape(-1, k)
        self.area, self.grads = element_geometry(flat, idx)
        self.centroids = coords.mean(axis=1)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


@dataclass(eq=False)
class CorrectorField:
    """Mean-zero periodic correctors ``chi_l`` (one column per direction)."""

    mesh: PeriodicMesh
    values: np.ndarray  # (n_nodes, d)
    coefficients: np.ndarray  # cell tensor at element centroids
    residual: float

    def gradients(self) -> np.ndarray:
        """Element gradients, shape ``(Ne, d, d)`` with ``[e, :, l] = grad chi_l``."""
        v = self.values[self.mesh.elements]  # (Ne, k, d)
        return np.einsum("ekl,ekd->edl", v, self.mesh.grads)

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)


def solve_cell_problem(A_at_x: Callable[[np.ndarray], np.ndarray], n: int = 64,
                       dim: int = 2, rel_tol: float = 1e-10) -> CorrectorField:
    """P1 solution of the periodic cell problems for ``lam -> A(x, lam)``.

    Finds mean-zero periodic ``chi_l`` with
    ``int A grad chi_l . grad w = -int A e_l . grad w`` for all periodic ``w``.
    The coefficient is sampled at element centroids.
    """
    if n < 8:
        raise ValueError(f"cell mesh needs n >= 8, got {n}")
    mesh = PeriodicMesh(n, dim)
    coef = np.asarray(A_at_x(mesh.centroids), dtype=float).reshape(-1, dim, dim)
    if np.any(min_eigenvalue(coef) <= 0):
        raise ValueError("cell coefficient is not elliptic at some sample")
    ke = local_stiffness(mesh.area, mesh.grads, coef)
    k = dim + 1
    el = mesh.elements
    rows = np.repeat(el, k, axis=1).ravel()
    cols = np.tile(el, (1, k)).ravel()
    N = mesh.n_nodes
    K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(N, N)).tocsr()
    # load_l[i] = -sum_e area (A e_l) . grad phi_i
    fe = -mesh.area[:, None, None] * np.einsum("ekd,edl->ekl", mesh.grads, coef)
    F = np.zeros((N, dim))
    for l in range(dim):
        np.add.at(F[:, l], el.ravel(), fe[:, :, l].ravel())

    # pin node 0, solve, then shift to zero mean
    Kp = K[1:, 1:].tocsc()
    lu = spla.splu(Kp)
    chi = np.zeros((N, dim))
    chi[1:] = lu.solve(F[1:])
    chi -= chi.mean(axis=0)
    fnorm = np.linalg.norm(F)
    res = float(np.linalg.norm(K @ chi - F) / fnorm) if fnorm > 0 else 0.0
    if not np.all(np.isfinite(chi)) or res > rel_tol:
        raise SolverError(f"cell problem residual {res:.3e} above {rel_tol:.1e}", res)
    return CorrectorField(mesh, chi, coef, res)


def homogenized_tensor(A_at_x: Callable[[np.ndarray], np.ndarray], n: int = 64,
                       dim: int = 2) -> np.ndarray:
    """``int A (I + grad chi)`` over the cell, symmetrized."""
    cf = solve_cell_problem(A_at_x, n, dim)
    g = cf.gradients()
    integrand = cf.coefficients + np.einsum("eij,ejl->eil", cf.coefficients, g)
    Abar = np.einsum("e,eij->ij", cf.mesh.area, integrand)
    return 0.5 * (Abar + Abar.T)


# ---------------------------------------------------------------------------
# tabulation


@dataclass(eq=False)
class TensorTable:
    """Homogenized tensors on a uniform grid of ``[0,1]^d`` with multilinear interpolation."""

    grid: np.ndarray  # 1D grid coordinates, shared by all axes
    tensors: np.ndarray  # (g,) * d + (d, d)
    name: str = "table"

    def __post_init__(self):
        d = self.tensors.shape[-1]
        axes = (self.grid,) * d
        flat = self.tensors.reshape(self.tensors.shape[:d] + (d * d,))
        self._interp = RegularGridInterpolator(axes, flat, method="linear")

    @property
    def dim(self) -> int:
        return self.tensors.shape[-1]

    def __call__(self, x) -> np.ndarray:
        pts = np.clip(as_points(x, self.dim), 0.0, 1.0)
        return self._interp(pts).reshape(-1, self.dim, self.dim)

    def as_field(self) -> TensorField:
        return TensorField(self.__call__, self.dim, name=self.name)

    def to_csv(self, path) -> None:
        if self.dim != 2:
            raise ValueError("CSV export is defined for 2D tables")
        g1, g2 = np.meshgrid(self.grid, self.grid, indexing="ij")
        T = self.tensors
        data = np.column_stack([g1.ravel(), g2.ravel(), T[..., 0, 0].ravel(),
                                T[..., 0, 1].ravel(), T[..., 1, 1].ravel()])
        with open(path, "w") as fh:
            fh.write("x1,x2,a11,a12,a22\n")
            for row in data:
                fh.write(",".join(f"{v:.12g}" for v in row) + "\n")


def tensor_table(A: ScaleSeparatedField, grid_n: int = 17, cell_n: int = 64) -> TensorTable:
    """Tabulate ``homogenized_tensor`` of ``A(x, .)`` on a ``grid_n^d`` grid."""
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    grid = np.linspace(0.0, 1.0, grid_n)
    d = A.dim
    tensors = np.empty((grid_n,) * d + (d, d))
    for idx in np.ndindex(*(grid_n,) * d):
        x = grid[list(idx)]
        tensors[idx] = homogenized_tensor(A.at(x), cell_n, d)
    return TensorTable(grid, tensors, name=f"table[{A.name}]")
