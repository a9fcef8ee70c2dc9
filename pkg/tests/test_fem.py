import math

import numpy as np
import pytest

from dilation.coefficient import TensorField
from dilation.fem import (NodalField, SolverError, assemble, build_mesh, flux, h1_semi_error,
                          h1_semi_norm, interpolate, l2_error, l2_norm, pcg, solve)

ONE1 = TensorField.constant(1.0, 1)
ONE2 = TensorField.constant(1.0, 2)


def test_build_mesh_1d():
    mesh = build_mesh(1, 4)
    assert np.allclose(mesh.nodes[:, 0], [0, 0.25, 0.5, 0.75, 1])
    assert mesh.n_elements == 4
    assert mesh.h == 0.25
    assert list(np.flatnonzero(mesh.boundary)) == [0, 4]


def test_build_mesh_2d():
    mesh = build_mesh(2, 2)
    assert mesh.n_nodes == 9 and mesh.n_elements == 8
    assert mesh.boundary.sum() == 8
    assert abs(build_mesh(2, 3).area.sum() - 1.0) < 1e-14
    assert np.all(build_mesh(2, 5).area > 0)
    assert build_mesh(2, 4).h == pytest.approx(math.sqrt(2) / 4)


def test_build_mesh_rejects_small_n():
    with pytest.raises(ValueError):
        build_mesh(1, 1)
    with pytest.raises(ValueError):
        build_mesh(3, 4)


def test_stencil_1d():
    sys = assemble(build_mesh(1, 4), ONE1, lambda x: np.ones(len(x)))
    K = sys.matrix.toarray()
    assert np.allclose(np.diag(K), 8)
    assert np.allclose(np.diag(K, 1), -4) and np.allclose(np.diag(K, -1), -4)
    assert np.allclose(np.abs(sys.full_matrix.sum(axis=1)), 0, atol=1e-12)


def test_stencil_2d_is_five_point():
    n = 6
    mesh = build_mesh(2, n)
    K = assemble(mesh, ONE2).full_matrix.toarray()
    centre = 3 * (n + 1) + 3
    row = K[centre]
    nz = {int(k): row[k] for k in np.flatnonzero(np.abs(row) > 1e-12)}
    assert nz == pytest.approx({centre: 4.0, centre - 1: -1.0, centre + 1: -1.0,
                                centre - (n + 1): -1.0, centre + (n + 1): -1.0})
    assert np.max(np.abs(K.sum(axis=1))) <= 1e-12
    assert np.allclose(K, K.T)


def test_non_elliptic_coefficient_names_point():
    A = TensorField(lambda x: x[:, 0] - 0.5, 1)
    with pytest.raises(ValueError, match="quadrature point"):
        assemble(build_mesh(1, 8), A)


@pytest.mark.parametrize("method", ["cg", "direct"])
def test_poisson_1d_nodally_exact(method):
    mesh = build_mesh(1, 16)
    u = solve(assemble(mesh, ONE1, lambda x: np.ones(len(x))), method=method)
    x = mesh.nodes[:, 0]
    assert np.max(np.abs(u.values - x * (1 - x) / 2)) < 1e-10


def test_zero_source_gives_zero():
    u = solve(assemble(build_mesh(2, 8), ONE2, lambda x: np.zeros(len(x))))
    assert np.all(u.values == 0)


def test_manufactured_2d_second_order():
    def exact(x):
        return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])

    def f(x):
        return 2 * np.pi ** 2 * exact(x)

    errs = []
    for n in (32, 64):
        u = solve(assemble(build_mesh(2, n), ONE2, f))
        errs.append(l2_error(u, exact))
    assert 3.5 <= errs[0] / errs[1] <= 4.5


def test_l2_error_examples():
    mesh = build_mesh(1, 64)
    u = solve(assemble(mesh, ONE1, lambda x: np.ones(len(x))))
    assert l2_error(u, u) == 0
    assert l2_error(u, lambda x: x[:, 0] * (1 - x[:, 0]) / 2) <= 1e-4
    lin = interpolate(build_mesh(2, 4), lambda x: 2 * x[:, 0] - x[:, 1])
    fine = interpolate(build_mesh(2, 16), lambda x: 2 * x[:, 0] - x[:, 1])
    assert h1_semi_error(fine, lin) <= 1e-12
    assert l2_error(fine, lin) <= 1e-12


def test_norms_of_known_fields():
    mesh = build_mesh(2, 8)
    one = NodalField(mesh, np.ones(mesh.n_nodes))
    assert l2_norm(one) == pytest.approx(1.0)
    lin = interpolate(mesh, lambda x: 3 * x[:, 0] + 4 * x[:, 1])
    assert h1_semi_norm(lin) == pytest.approx(5.0)
    assert l2_norm(interpolate(build_mesh(1, 10), lambda x: x[:, 0])) == \
        pytest.approx(1 / math.sqrt(3))


def test_non_nested_meshes_rejected():
    a = interpolate(build_mesh(1, 6), lambda x: x[:, 0])
    b = interpolate(build_mesh(1, 4), lambda x: x[:, 0])
    with pytest.raises(ValueError):
        l2_error(a, b)


def test_prolongation_is_exact():
    u = interpolate(build_mesh(2, 4), lambda x: np.sin(3 * x[:, 0]) + x[:, 1] ** 2)
    fine = build_mesh(2, 12)
    v = u.prolong(fine)
    assert np.allclose(v.values, u.evaluate(fine.nodes))
    assert l2_error(v, u) < 1e-14


def test_flux_1d():
    mesh = build_mesh(1, 32)
    u = solve(assemble(mesh, ONE1, lambda x: np.ones(len(x))))
    F = flux(u, ONE1)
    xc = F.centroids[:, 0]
    assert np.allclose(F.component(0), (1 - 2 * xc) / 2, atol=1e-10)
    const = NodalField(mesh, np.full(mesh.n_nodes, 2.0))
    assert np.all(flux(const, ONE1).component(0) == 0)


def test_galerkin_orthogonality_and_energy():
    mesh = build_mesh(2, 24)
    A = TensorField(lambda x: (2 + np.sin(9 * x[:, 0]) * np.cos(7 * x[:, 1]))[:, None, None]
                    * np.eye(2) + 0.3 * np.array([[0, 1], [1, 0]]), 2)
    sys = assemble(mesh, A, lambda x: np.exp(x[:, 0]) - x[:, 1])
    u = solve(sys, rel_tol=1e-12)
    assert np.linalg.norm(sys.residual(u)) <= 1e-12 * np.linalg.norm(sys.rhs)
    ui = u.values[sys.free]
    assert ui @ (sys.matrix @ ui) == pytest.approx(ui @ sys.rhs, rel=1e-10)


def test_discrete_maximum_principle_1d():
    mesh = build_mesh(1, 50)
    A = TensorField(lambda x: 1 + 0.9 * np.sin(40 * x[:, 0]), 1)
    u = solve(assemble(mesh, A, lambda x: (x[:, 0] > 0.6).astype(float)))
    assert np.all(u.values >= 0)


def test_cg_and_direct_agree():
    mesh = build_mesh(2, 20)
    A = TensorField(lambda x: 1 + x[:, 0] * x[:, 1], 2)
    sys = assemble(mesh, A, lambda x: np.ones(len(x)))
    a, b = solve(sys, method="cg"), solve(sys, method="direct")
    assert np.max(np.abs(a.values - b.values)) < 1e-9


def test_pcg_reports_failure():
    mesh = build_mesh(2, 32)
    sys = assemble(mesh, ONE2, lambda x: np.ones(len(x)))
    with pytest.raises(SolverError) as info:
        pcg(sys.matrix, sys.rhs, maxiter=3)
    assert info.value.residual > 1e-10
    assert info.value.iterations == 3


def test_csv_export(tmp_path):
    mesh = build_mesh(2, 2)
    u = interpolate(mesh, lambda x: x[:, 0] + 2 * x[:, 1])
    u.to_csv(tmp_path / "u.csv")
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,value"
    assert len(lines) == 10
    flux(u, ONE2).to_csv(tmp_path / "v.csv")
    assert (tmp_path / "v.csv").read_text().splitlines()[0] == "x1,x2,v1,v2"
