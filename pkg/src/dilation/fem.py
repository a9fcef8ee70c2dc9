"""P1 finite elements for ``-div(A grad u) = f`` with zero Dirichlet data.

Meshes are structured: ``n`` uniform intervals on ``[0, 1]`` or an ``n x n``
grid on the unit square with every square cut along its ``(i, j)-(i+1, j+1)``
diagonal. Meshes with ``n_fine % n_coarse == 0`` are nested, which is what
cross-mesh comparison relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficient import TensorField, min_eigenvalue

__all__ = [
    "Mesh",
    "SparseSystem",
    "NodalField",
    "FluxField",
    "SolverError",
    "build_mesh",
    "element_geometry",
    "assemble",
    "solve",
    "pcg",
    "interpolate",
    "l2_error",
    "h1_semi_error",
    "l2_norm",
    "h1_semi_norm",
    "flux",
]


class SolverError(RuntimeError):
    """Raised when an iterative solve stops above its tolerance."""

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def element_geometry(nodes: np.ndarray, elements: np.ndarray):
    """Areas and P1 basis gradients of simplices.

    Returns
    -------
    area : (Ne,) array
    grads : (Ne, d+1, d) array
        ``grads[e, k]`` is the gradient of the hat function of local node ``k``.
    """
    p = nodes[elements]
    edges = p[:, 1:, :] - p[:, :1, :]  # (Ne, d, d), rows are edge vectors
    det = np.linalg.det(edges)
    area = np.abs(det) / math.factorial(nodes.shape[1])
    inv = np.linalg.inv(edges)  # columns give gradients of barycentrics 1..d
    g = np.swapaxes(inv, 1, 2)
    grads = np.concatenate([-g.sum(axis=1, keepdims=True), g], axis=1)
    return area, grads


@dataclass(eq=False)
class Mesh:
    """Structured simplicial mesh of ``[0, 1]^dim``."""

    dim: int
    n: int
    nodes: np.ndarray
    elements: np.ndarray
    boundary: np.ndarray

    def __post_init__(self):
        self.area, self.grads = element_geometry(self.nodes, self.elements)

    @property
    def h(self) -> float:
        """Largest element diameter."""
        return 1.0 / self.n if self.dim == 1 else math.sqrt(2.0) / self.n

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    def refines(self, other: "Mesh") -> bool:
        """True if every element of ``other`` is a union of elements of ``self``."""
        return self.dim == other.dim and self.n % other.n == 0

    def __repr__(self):
        return f"Mesh(dim={self.dim}, n={self.n}, nodes={self.n_nodes})"


def build_mesh(dim: int, n: int) -> Mesh:
    """Uniform mesh with ``n`` cells per direction."""
    if dim not in (1, 2):
        raise ValueError("dim must be 1 or 2")
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    t = np.linspace(0.0, 1.0, n + 1)
    if dim == 1:
        nodes = t[:, None]
        elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
        boundary = np.zeros(n + 1, dtype=bool)
        boundary[[0, n]] = True
        return Mesh(1, n, nodes, elements, boundary)

    x1, x2 = np.meshgrid(t, t, indexing="xy")
    nodes = np.column_stack([x1.ravel(), x2.ravel()])  # index j*(n+1) + i
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    a = (j * (n + 1) + i).ravel()
    b, c, d = a + 1, a + n + 2, a + n + 1
    elements = np.empty((2 * n * n, 3), dtype=np.int64)
    elements[0::2] = np.column_stack([a, b, c])
    elements[1::2] = np.column_stack([a, c, d])
    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="xy")
    boundary = ((ii == 0) | (jj == 0) | (ii == n) | (jj == n)).ravel()
    return Mesh(2, n, nodes, elements, boundary)


def coefficient_at_centroids(mesh: Mesh, A: TensorField, check: bool = True) -> np.ndarray:
    """Sample ``A`` at element centroids, rejecting non-elliptic samples."""
    xc = mesh.centroids
    values = A(xc)
    if check:
        lo = min_eigenvalue(values)
        bad = np.flatnonzero(~(lo > 0))
        if bad.size:
            k = bad[0]
            raise ValueError(
                f"coefficient is not elliptic at quadrature point {xc[k].tolist()} "
                f"(smallest eigenvalue {lo[k]:.3g})")
    return values


def local_stiffness(area, grads, coef) -> np.ndarray:
    """Element matrices ``area * G A G^T`` for a batch of simplices."""
    return area[:, None, None] * np.einsum("eid,edk,ejk->eij", grads, coef, grads)


@dataclass(eq=False)
class SparseSystem:
    """Assembled stiffness system with Dirichlet nodes eliminated.

    ``matrix`` and ``rhs`` act on the interior unknowns listed in ``free``;
    ``full_matrix``/``full_rhs`` keep the pre-elimination operator.
    """

    mesh: Mesh
    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    full_matrix: sp.csr_matrix
    full_rhs: np.ndarray

    @property
    def n_unknowns(self) -> int:
        return len(self.free)

    def residual(self, u: "NodalField") -> np.ndarray:
        """Galerkin residual ``K u - F`` against each interior basis function."""
        return self.matrix @ u.values[self.free] - self.rhs


def assemble(mesh: Mesh, A: TensorField, f: Callable | None = None) -> SparseSystem:
    """Assemble the P1 stiffness matrix and load vector.

    The coefficient and the source are both sampled once per element at the
    centroid.
    """
    coef = coefficient_at_centroids(mesh, A)
    ke = local_stiffness(mesh.area, mesh.grads, coef)
    k = mesh.dim + 1
    rows = np.repeat(mesh.elements, k, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, k)).ravel()
    full = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2).tocsr()
    full.sum_duplicates()

    load = np.zeros(mesh.n_nodes)
    if f is not None:
        fc = np.asarray(f(mesh.centroids), dtype=float).reshape(-1)
        if fc.shape == (1,):
            fc = np.full(mesh.n_elements, fc[0])
        contrib = np.repeat((fc * mesh.area / k)[:, None], k, axis=1)
        np.add.at(load, mesh.elements.ravel(), contrib.ravel())

    free = mesh.interior
    matrix = full[free][:, free].tocsr()
    return SparseSystem(mesh, matrix, load[free].copy(), free, full, load)


def pcg(K, b, rel_tol=1e-10, maxiter=None, x0=None):
    """Conjugate gradients with a Jacobi preconditioner.

    Returns ``(x, relative_residual, iterations)``; raises :class:`SolverError`
    if the iteration cap is reached first.
    """
    n = len(b)
    if maxiter is None:
        maxiter = int(20 * math.sqrt(n)) + 1000
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0.0, 0
    dinv = 1.0 / K.diagonal()
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - K @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    for it in range(1, maxiter + 1):
        if res <= rel_tol:
            return x, res, it - 1
        q = K @ p
        alpha = rz / (p @ q)
        x += alpha * p
        r -= alpha * q
        res = np.linalg.norm(r) / bnorm
        z = dinv * r
        rz_new = r @ z
        p *= rz_new / rz
        p += z
        rz = rz_new
    if res <= rel_tol:
        return x, res, maxiter
    raise SolverError(f"PCG stopped after {maxiter} iterations with relative residual {res:.3e}",
                      res, maxiter)


def solve(system: SparseSystem, rel_tol: float = 1e-10, method: str = "cg",
          maxiter: int | None = None) -> "NodalField":
    """Solve the eliminated system and return the full nodal field.

    ``method="cg"`` runs Jacobi-preconditioned CG; ``method="direct"`` uses a
    sparse LU factorization and checks the normwise backward error
    ``|b - K x| / (|K| |x| + |b|)`` (infinity norms) against ``rel_tol``.
    """
    K, b = system.matrix, system.rhs
    if method == "cg":
        x, _, _ = pcg(K, b, rel_tol=rel_tol, maxiter=maxiter)
    elif method == "direct":
        x = spla.spsolve(K.tocsc(), b, permc_spec="MMD_AT_PLUS_A") if len(b) else np.zeros(0)
        # normwise backward error; the plain relative residual of a backward
        # stable solve grows with the condition number (~n^2) on fine meshes
        scale = spla.norm(K, np.inf) * np.linalg.norm(x, np.inf) + np.linalg.norm(b, np.inf)
        res = np.linalg.norm(K @ x - b, np.inf) / scale if scale > 0 else 0.0
        if not np.all(np.isfinite(x)) or res > rel_tol:
            raise SolverError(f"direct solve left backward error {res:.3e}", res)
    else:
        raise ValueError(f"unknown solve method {method!r}")
    values = np.zeros(system.mesh.n_nodes)
    values[system.free] = x
    return NodalField(system.mesh, values)


# ---------------------------------------------------------------------------
# fields and norms

# degree-4 rule on the reference triangle (6 points), barycentric coordinates
_A1, _B1, _W1 = 0.445948490915965, 0.091576213509771, 0.223381589678011
_A2, _W2 = 0.091576213509771, 0.109951743655322
_TRI_BARY = np.array([
    [_A1, _A1, 1 - 2 * _A1], [_A1, 1 - 2 * _A1, _A1], [1 - 2 * _A1, _A1, _A1],
    [_A2, _A2, 1 - 2 * _A2], [_A2, 1 - 2 * _A2, _A2], [1 - 2 * _A2, _A2, _A2],
])
_TRI_W = np.array([_W1] * 3 + [_W2] * 3)
_g = np.polynomial.legendre.leggauss(4)
_LINE_BARY = np.column_stack([(1 - _g[0]) / 2, (1 + _g[0]) / 2])
_LINE_W = _g[1] / 2


def _quadrature(dim):
    return (_LINE_BARY, _LINE_W) if dim == 1 else (_TRI_BARY, _TRI_W)


@dataclass(eq=False)
class NodalField:
    """Continuous P1 function given by its nodal values."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes,):
            raise ValueError("one value per mesh node is required")

    def __sub__(self, other: "NodalField") -> "NodalField":
        a, b = _common(self, other)
        return NodalField(a.mesh, a.values - b.values)

    def element_gradients(self) -> np.ndarray:
        """Constant gradient on each element, shape ``(Ne, d)``."""
        return np.einsum("ek,ekd->ed", self.values[self.mesh.elements], self.mesh.grads)

    def evaluate(self, x) -> np.ndarray:
        """Point values by linear interpolation on the containing element."""
        mesh, u, n = self.mesh, self.values, self.mesh.n
        x = np.asarray(x, dtype=float)
        if mesh.dim == 1:
            t = x.reshape(-1) * n
            i = np.clip(np.floor(t).astype(int), 0, n - 1)
            s = t - i
            return (1 - s) * u[i] + s * u[i + 1]
        x = x.reshape(-1, 2)
        t1, t2 = x[:, 0] * n, x[:, 1] * n
        i = np.clip(np.floor(t1).astype(int), 0, n - 1)
        j = np.clip(np.floor(t2).astype(int), 0, n - 1)
        s, t = t1 - i, t2 - j
        a = j * (n + 1) + i
        ua, ub, uc, ud = u[a], u[a + 1], u[a + n + 2], u[a + n + 1]
        lower = ua + s * (ub - ua) + t * (uc - ub)
        upper = ua + s * (uc - ud) + t * (ud - ua)
        return np.where(s >= t, lower, upper)

    def prolong(self, mesh: Mesh) -> "NodalField":
        """Exact representation on a nested finer mesh."""
        if not mesh.refines(self.mesh):
            raise ValueError(f"mesh n={mesh.n} does not refine n={self.mesh.n}")
        if mesh.n == self.mesh.n:
            return self
        return NodalField(mesh, self.evaluate(mesh.nodes))

    def to_csv(self, path) -> None:
        cols = ["x1", "x2"][: self.mesh.dim] + ["value"]
        data = np.column_stack([self.mesh.nodes, self.values])
        _write_csv(path, cols, data)


def interpolate(mesh: Mesh, func: Callable) -> NodalField:
    """Nodal interpolant of ``func``."""
    return NodalField(mesh, np.asarray(func(mesh.nodes), dtype=float).reshape(-1))


def _common(u: NodalField, v: NodalField):
    if u.mesh is v.mesh:
        return u, v
    if u.mesh.refines(v.mesh):
        return u, v.prolong(u.mesh)
    if v.mesh.refines(u.mesh):
        return u.prolong(v.mesh), v
    raise ValueError(f"meshes n={u.mesh.n} and n={v.mesh.n} are not nested")


def l2_norm(u: NodalField) -> float:
    """Exact L2 norm of a P1 function (mass-matrix formula)."""
    mesh = u.mesh
    c = u.values[mesh.elements]
    d = mesh.dim
    local = (np.sum(c * c, axis=1) + np.sum(c, axis=1) ** 2) / ((d + 1) * (d + 2))
    return float(math.sqrt(max(np.sum(mesh.area * local), 0.0)))


def h1_semi_norm(u: NodalField) -> float:
    g = u.element_gradients()
    return float(math.sqrt(np.sum(u.mesh.area * np.sum(g * g, axis=1))))


def l2_error(u: NodalField, v) -> float:
    """L2 norm of ``u - v``; ``v`` is a nested-mesh field or a callable."""
    if isinstance(v, NodalField):
        return l2_norm(u - v)
    mesh = u.mesh
    bary, w = _quadrature(mesh.dim)
    p = mesh.nodes[mesh.elements]  # (Ne, k, d)
    pts = np.einsum("qk,ekd->eqd", bary, p)
    uq = np.einsum("qk,ek->eq", bary, u.values[mesh.elements])
    vq = np.asarray(v(pts.reshape(-1, mesh.dim)), dtype=float).reshape(uq.shape)
    return float(math.sqrt(np.sum(mesh.area * ((uq - vq) ** 2 @ w))))


def h1_semi_error(u: NodalField, v) -> float:
    """H1 seminorm of ``u - v``.

    ``v`` is a nested-mesh field or a callable returning the gradient of the
    comparison function as an ``(N, d)`` array.
    """
    if isinstance(v, NodalField):
        return h1_semi_norm(u - v)
    mesh = u.mesh
    bary, w = _quadrature(mesh.dim)
    p = mesh.nodes[mesh.elements]
    pts = np.einsum("qk,ekd->eqd", bary, p)
    gu = u.element_gradients()[:, None, :]
    gv = np.asarray(v(pts.reshape(-1, mesh.dim)), dtype=float).reshape(pts.shape)
    return float(math.sqrt(np.sum(mesh.area * (np.sum((gu - gv) ** 2, axis=2) @ w))))


@dataclass(eq=False)
class FluxField:
    """Element-constant flux ``A grad u`` sampled at element centroids."""

    mesh: Mesh
    vectors: np.ndarray

    @property
    def centroids(self) -> np.ndarray:
        return self.mesh.centroids

    def component(self, i: int) -> np.ndarray:
        return self.vectors[:, i]

    def to_csv(self, path) -> None:
        d = self.mesh.dim
        cols = ["x1", "x2"][:d] + ["v1", "v2"][:d]
        _write_csv(path, cols, np.column_stack([self.centroids, self.vectors]))


def flux(u: NodalField, A: TensorField) -> FluxField:
    """Flux ``A(centroid) grad u`` on every element."""
    coef = A(u.mesh.centroids)
    return FluxField(u.mesh, np.einsum("eij,ej->ei", coef, u.element_gradients()))


def _write_csv(path, cols, data):
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in data:
            fh.write(",".join(f"{v:.12g}" for v in row) + "\n")
