import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from cgray import spectral
from cgray.mesh import build_sphere_mesh
from cgray.spectral import (
    ClusterAmbiguityWarning,
    jacobi_lower_bound,
    jacobi_pencil,
    kernel_dim,
    morse_index,
    pencil_inertia,
    solve_pencil,
    subspace_angle,
    top_growth_rate,
    zero_tol,
)
from cgray.surface import (
    BranchConfiguration,
    mobius_transform_config,
    neg_kappa_on_sphere,
    rotation_matrix,
    rotation_mobius,
)

from conftest import perturbed_configs
from oracles import dense_inertia, sphere_laplacian_eigenvalues


def test_laplacian_spectrum_harmonics(mesh4):
    res = solve_pencil(mesh4.stiffness, mesh4.fs_mass, 16)
    ref = sphere_laplacian_eigenvalues(3)
    err = np.abs(res.eigenvalues - ref)
    assert err[0] < 1e-10
    # O(h^2): h ~ 0.083 at level 4, errors scale with l(l+1)
    assert np.all(err[1:] < mesh4.h ** 2 * ref[1:])


def test_laplacian_spectrum_converges(mesh3, mesh4):
    e3 = solve_pencil(mesh3.stiffness, mesh3.fs_mass, 9).eigenvalues
    e4 = solve_pencil(mesh4.stiffness, mesh4.fs_mass, 9).eigenvalues
    ref = sphere_laplacian_eigenvalues(2)
    assert np.all(np.abs(e4 - ref)[1:] * 3 < np.abs(e3 - ref)[1:])


def test_result_invariants(mesh4):
    A, M = jacobi_pencil(mesh4)
    res = solve_pencil(A, M, 8, zero_tol(mesh4))
    assert np.all(np.diff(res.eigenvalues) >= 0)
    V = res.eigenvectors
    assert np.abs(V.T @ (M[:, None] * V) - np.eye(8)).max() < 1e-8
    assert res.n_negative + res.n_zero + res.n_positive == 8
    assert (res.n_negative, res.n_zero) == (1, 3)
    assert len(res.eigenfunctions) == 8
    js = res.to_json()
    assert js["n_zero"] == 3 and len(js["eigenvalues"]) == 8


def test_mass_scaling(mesh3):
    A, M = jacobi_pencil(mesh3)
    a = solve_pencil(A, M, 6, 1e-4)
    b = solve_pencil(A, 10 * M, 6, 1e-5)
    assert np.allclose(b.eigenvalues, a.eigenvalues / 10, rtol=1e-9, atol=1e-12)
    assert (a.n_negative, a.n_zero) == (b.n_negative, b.n_zero)


def test_sparse_path_matches_dense(mesh4, monkeypatch):
    A, M = jacobi_pencil(mesh4)
    dense = solve_pencil(A, M, 8, zero_tol(mesh4))
    monkeypatch.setattr(spectral, "DENSE_LIMIT", 100)
    sparse = solve_pencil(A, M, 8, zero_tol(mesh4), lower_bound=jacobi_lower_bound(mesh4.fs_mass, M))
    assert sparse.shift is not None
    assert np.allclose(sparse.eigenvalues, dense.eigenvalues, atol=1e-9)
    gersh = solve_pencil(A, M, 8, zero_tol(mesh4))
    assert np.allclose(gersh.eigenvalues, dense.eigenvalues, atol=1e-9)
    assert gersh.shift < sparse.shift


def test_lower_bound_is_valid(mesh4):
    A, M = jacobi_pencil(mesh4)
    lb = jacobi_lower_bound(mesh4.fs_mass, M)
    mu0 = solve_pencil(A, M, 4).eigenvalues[0]
    assert lb <= mu0
    assert spectral._lower_bound(A, M) <= mu0


def test_input_validation(mesh3):
    A, M = jacobi_pencil(mesh3)
    with pytest.raises(ValueError):
        solve_pencil(A, M, mesh3.n_vertices // 2)
    M2 = M.copy()
    M2[0] = 0
    with pytest.raises(ValueError):
        solve_pencil(A, M2, 4)


@pytest.mark.parametrize("cfg", [BranchConfiguration.family(0.5), BranchConfiguration.family(0.8)]
                         + perturbed_configs(2))
def test_inertia_oracle_level3(cfg):
    mesh = build_sphere_mesh(cfg, 3)
    A, M = jacobi_pencil(mesh)
    tol = zero_tol(mesh)
    below_neg, _ = dense_inertia(A, M, -tol)
    below_pos, _ = dense_inertia(A, M, tol)
    assert below_neg == 1
    assert below_pos - below_neg == 3
    # LDL inertia of A - sigma M agrees with the dense eigen-count oracle
    assert pencil_inertia(A, M, -tol) == 1
    assert pencil_inertia(A, M, tol) == 4


def test_kernel_dim(fam05, mesh4):
    kd = kernel_dim(fam05, mesh4)
    assert kd["dim"] == 3
    assert not kd["ambiguous"]
    assert kd["angle_to_coordinates"] < 0.05
    B = np.stack([b.values for b in kd["basis"]], axis=1)
    M = mesh4.lam_mass
    # projection of sampled alpha onto the basis
    a = mesh4.vertices[:, 0]
    coef = B.T @ (M * a)
    resid = a - B @ coef
    assert np.sqrt(resid @ (M * resid) / (a @ (M * a))) < 1e-2


def test_kernel_angle_shrinks(fam05, mesh3, mesh4):
    a3 = kernel_dim(fam05, mesh3)["angle_to_coordinates"]
    a4 = kernel_dim(fam05, mesh4)["angle_to_coordinates"]
    assert a4 < a3 / 3


def test_cluster_ambiguity_warning(fam05, mesh4):
    # a zero_tol just below the first positive eigenvalue (0.0857 at level 4)
    c = 0.07 / mesh4.h ** 2
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        kd = kernel_dim(fam05, mesh4, c_tol=c)
    assert kd["ambiguous"]
    assert any(issubclass(x.category, ClusterAmbiguityWarning) for x in w)


def test_morse_index(fam05, mesh3):
    r = morse_index(fam05, mesh3, full=True)
    assert r["index_invariant"] == 1
    assert 2 <= r["index_total"] <= 15
    assert r["index_antisymmetric"] == r["index_total"] - 1
    other = morse_index(fam05, mesh3, full=True, offset=1)
    assert other["index_total"] == r["index_total"]
    assert np.allclose(other["full"].eigenvalues, r["full"].eigenvalues, atol=1e-9)
    labels = r["sectors"]
    assert labels.count("invariant") >= 4


def test_morse_invariant_only(fam05, mesh3):
    r = morse_index(fam05, mesh3)
    assert r["index_total"] is None and r["index_invariant"] == 1


def test_top_growth(fam05, mesh4, mesh5):
    g4 = top_growth_rate(fam05, mesh4)
    g5 = top_growth_rate(fam05, mesh5)
    assert g4["lambda1"] > 0
    assert np.all(g5["psi1"].values > 0)
    assert abs(g5["lambda1"] / g4["lambda1"] - 1) < 0.01


def test_top_growth_rotation_equivariance(fam05):
    m = rotation_mobius(0.3 + 0.7j)
    R = rotation_matrix(m)
    cfg2 = mobius_transform_config(fam05, m)
    mesh1 = build_sphere_mesh(fam05, 4)
    mesh2 = build_sphere_mesh(cfg2, 4, orientation=R)
    # the monic normalization rescales -kappa by a constant under rotation
    c = float(neg_kappa_on_sphere(cfg2, R @ [0.3, 0.4, np.sqrt(0.75)])
              / neg_kappa_on_sphere(fam05, [0.3, 0.4, np.sqrt(0.75)]))
    a = top_growth_rate(fam05, mesh1)["lambda1"]
    b = top_growth_rate(cfg2, mesh2)["lambda1"]
    assert abs(b / (c * a) - 1) < 1e-8
    k1 = kernel_dim(fam05, mesh1)
    k2 = kernel_dim(cfg2, mesh2)
    assert k1["dim"] == k2["dim"] == 3


def test_subspace_angle():
    M = np.ones(4)
    X = np.eye(4)[:, :2]
    assert subspace_angle(X, X @ np.array([[1, 2], [3, 4.0]]), M) < 1e-7
    Y = np.eye(4)[:, 1:3]
    assert abs(subspace_angle(X, Y, M) - np.pi / 2) < 1e-12


def test_seed_determinism(fam05, mesh5):
    a = kernel_dim(fam05, mesh5, seed=1)["result"].eigenvalues
    b = kernel_dim(fam05, mesh5, seed=1)["result"].eigenvalues
    assert np.array_equal(a, b)


def test_sparse_operator_types(mesh3):
    A, M = jacobi_pencil(mesh3)
    assert sp.issparse(A) and M.ndim == 1
