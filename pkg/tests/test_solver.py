import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from fewfermions.fock import Sector
from fewfermions.hamiltonian import ModelParams, SparseOperator, build_hamiltonian
from fewfermions.solver import (ConvergenceError, DenseTooLargeError, EigenSolution, eigs, eigs_dense,
                                eigs_lowk, fix_signs, propagate)
from fewfermions.sp_basis import SpTables


def hamiltonian(n_orb, n_up, n_down, **params):
    return build_hamiltonian(Sector(n_orb, n_up, n_down), ModelParams(**params), SpTables.build(n_orb))


def random_symmetric(spectrum, seed):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((len(spectrum), len(spectrum))))
    a = q @ np.diag(spectrum) @ q.T
    return SparseOperator.from_matrix(0.5 * (a + a.T), check=False)


def test_two_level_example():
    sol = eigs_dense(SparseOperator.from_matrix(np.array([[1.0, 2.0], [2.0, 1.0]])))
    np.testing.assert_allclose(sol.eigenvalues, [-1.0, 3.0], atol=1e-14)
    # first component positive
    np.testing.assert_allclose(sol.eigenvectors[:, 1], np.array([1, 1]) / np.sqrt(2), atol=1e-14)
    assert sol.eigenvectors[0, 0] > 0


def test_sign_convention_skips_negligible_leading_entries():
    v = np.array([[1e-12, -1.0], [-1.0, 0.5], [0.0, 0.0]])
    out = fix_signs(v)
    assert out[1, 0] == 1.0 and out[0, 1] == 1.0


def test_lowk_matches_dense_on_physical_sector():
    op = hamiltonian(10, 2, 2, g=5.0)
    ref = eigs_dense(op)
    sol = eigs_lowk(op, 8)
    assert np.abs(sol.eigenvalues - ref.eigenvalues[:8]).max() < 1e-9
    assert sol.residual_norms.max() < 1e-8
    # same invariant subspace, whatever the rotation inside degenerate levels
    overlap = ref.eigenvectors[:, :8].T @ sol.eigenvectors
    np.testing.assert_allclose(np.linalg.svd(overlap, compute_uv=False), 1.0, atol=1e-8)


def test_lowk_finds_full_degenerate_multiplet():
    spectrum = np.concatenate([[-1.0, -1.0, -1.0, -1.0], np.linspace(0.0, 10.0, 296)])
    op = random_symmetric(spectrum, 0)
    sol = eigs_lowk(op, 6, block_size=2)
    np.testing.assert_allclose(sol.eigenvalues, [-1, -1, -1, -1, 0.0, 10 / 295], atol=1e-9)


def test_lowk_is_deterministic():
    op = hamiltonian(9, 2, 1, g=3.0)
    a = eigs_lowk(op, 5)
    b = eigs_lowk(op, 5)
    assert np.array_equal(a.eigenvalues, b.eigenvalues)
    assert np.array_equal(a.eigenvectors, b.eigenvectors)


def test_lowk_diagonal_shortcut():
    op = SparseOperator.from_matrix(sp.diags([3.0, 1.0, 2.0, 1.0, 5.0]))
    sol = eigs_lowk(op, 3)
    assert sol.eigenvalues.tolist() == [1.0, 1.0, 2.0]
    assert sol.residual_norms.max() == 0.0


def test_lowk_reports_nonconvergence():
    op = hamiltonian(10, 2, 2, g=5.0)
    with pytest.raises(ConvergenceError) as info:
        eigs_lowk(op, 6, max_matvecs=20)
    assert info.value.residuals is not None


def test_bad_k_and_dense_limit():
    op = hamiltonian(4, 1, 1)
    with pytest.raises(ValueError):
        eigs_lowk(op, 0)
    with pytest.raises(ValueError):
        eigs_lowk(op, 16)
    big = SparseOperator.from_matrix(sp.identity(4001, format="csr"), check=False)
    with pytest.raises(DenseTooLargeError):
        eigs_dense(big)
    with pytest.raises(DenseTooLargeError):
        eigs(big)


def test_eigs_dispatch_truncates():
    sol = eigs(hamiltonian(5, 1, 1, g=1.0), k=3)
    assert len(sol) == 3 and sol.eigenvectors.shape == (25, 3)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(8, 60), k=st.integers(1, 5), b=st.integers(1, 4), seed=st.integers(0, 10_000))
def test_lowk_agrees_with_dense_on_random_matrices(n, k, b, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    op = SparseOperator.from_matrix(a + a.T)
    ref = eigs_dense(op).eigenvalues[:k]
    sol = eigs_lowk(op, k, block_size=b, seed=seed)
    assert np.abs(sol.eigenvalues - ref).max() < 1e-8


# --- propagation --------------------------------------------------------------

@pytest.mark.parametrize("route", ["spectral", "krylov"])
def test_two_level_rabi(route):
    omega = 0.7
    op = SparseOperator.from_matrix(np.array([[0.0, omega], [omega, 0.0]]))
    source = eigs_dense(op) if route == "spectral" else op
    times = np.linspace(0, 10, 21)
    res = propagate(source, np.array([1.0, 0.0]), times)
    p0 = np.abs(res.states[:, 0]) ** 2
    np.testing.assert_allclose(p0, np.cos(omega * times) ** 2, atol=1e-9)


def test_routes_agree_and_preserve_norm():
    op = hamiltonian(7, 2, 1, g=4.0, delta=0.1)
    eig = eigs_dense(op)
    rng = np.random.default_rng(5)
    psi0 = rng.standard_normal(op.dim)
    psi0 /= np.linalg.norm(psi0)
    times = np.array([0.0, 0.3, 2.0, 7.5])
    spec = propagate(eig, psi0, times)
    kry = propagate(op, psi0, times)
    assert np.abs(spec.states - kry.states).max() < 1e-8
    assert np.abs(spec.norms() - 1).max() < 1e-10
    assert np.abs(kry.norms() - 1).max() < 1e-10
    assert np.abs(spec.state(0) - psi0).max() < 1e-13
    assert np.array_equal(kry.state(0), psi0.astype(complex))


def test_unsorted_times_krylov():
    op = hamiltonian(5, 1, 1, g=2.0)
    psi0 = np.zeros(op.dim)
    psi0[0] = 1.0
    a = propagate(op, psi0, [2.0, 0.5, 1.0]).states
    b = propagate(op, psi0, [0.5, 1.0, 2.0]).states
    np.testing.assert_allclose(a[[1, 2, 0]], b, atol=1e-9)


def test_propagation_input_checks():
    op = hamiltonian(4, 1, 1, g=1.0)
    eig = eigs_dense(op)
    with pytest.raises(ValueError):
        propagate(eig, np.ones(op.dim), [0.0, 1.0])
    with pytest.raises(ValueError):
        propagate(op, eig.eigenvectors[:, 0], [-1.0])
    with pytest.raises(ValueError):
        propagate(eig, eig.eigenvectors[:, 0], [np.nan])
    partial = EigenSolution(eig.eigenvalues[:2], eig.eigenvectors[:, :2], eig.residual_norms[:2], eig.tol)
    with pytest.raises(ValueError):
        propagate(partial, eig.eigenvectors[:, 5], [1.0])
    # a stationary state only picks up a phase
    res = propagate(partial, eig.eigenvectors[:, 1], [3.0])
    np.testing.assert_allclose(res.state(0), np.exp(-3j * eig.eigenvalues[1]) * eig.eigenvectors[:, 1],
                               atol=1e-14)
