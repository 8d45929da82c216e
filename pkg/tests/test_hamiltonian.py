import math

import numpy as np
import pytest
import scipy.sparse as sp

from fewfermions.fock import ModeOp, Sector, Spin, apply_mode_op, enumerate_sector, index_of
from fewfermions.hamiltonian import (ModelParams, SparseOperator, build_hamiltonian,
                                     build_hamiltonian_rowwise, build_s_squared, build_zeeman, matvec)
from fewfermions.solver import eigs_dense, eigs_lowk
from fewfermions.sp_basis import SpTables

_TABLES = {}


def tables(n_orb):
    if n_orb not in _TABLES:
        _TABLES[n_orb] = SpTables.build(n_orb)
    return _TABLES[n_orb]


def spectrum(sector, **params):
    op = build_hamiltonian(sector, ModelParams(**params), tables(sector.n_orb))
    return np.linalg.eigvalsh(op.toarray())


def small_sectors(max_dim=2000, max_orb=8):
    out = []
    for n_orb in range(2, max_orb + 1):
        for n_up in range(1, min(n_orb, 4) + 1):
            for n_down in range(1, min(n_orb, 4) + 1):
                s = Sector(n_orb, n_up, n_down)
                if s.dim <= max_dim and n_down <= n_up:
                    out.append(s)
    return out


def test_noninteracting_ground_energies():
    assert spectrum(Sector(6, 1, 1))[0] == pytest.approx(1.0, abs=1e-14)
    op = build_hamiltonian(Sector(21, 4, 1), ModelParams(), tables(21))
    assert op.is_diagonal
    assert eigs_lowk(op, 1).eigenvalues[0] == 8.5


@pytest.mark.parametrize("g", [0.0, 0.7, 5.0, 20.0, -2.0])
def test_two_body_flat_level(g):
    ev = spectrum(Sector(8, 1, 1), g=g)
    assert np.min(np.abs(ev - 2.0)) < 1e-12


@pytest.mark.parametrize("sector", [Sector(4, 1, 1), Sector(5, 2, 1), Sector(4, 2, 2),
                                    Sector(5, 1, 3), Sector(6, 3, 0), Sector(3, 0, 2)])
@pytest.mark.parametrize("params", [ModelParams(), ModelParams(3.0, 0.2, 0.05), ModelParams(-1.5, 0.0, 0.3)])
def test_vectorized_assembly_matches_rowwise(sector, params):
    fast = build_hamiltonian(sector, params, tables(sector.n_orb)).toarray()
    slow = build_hamiltonian_rowwise(sector, params, tables(sector.n_orb)).toarray()
    assert np.abs(fast - slow).max() < 1e-13


def test_matrix_is_exactly_symmetric():
    op = build_hamiltonian(Sector(8, 2, 2), ModelParams(4.0, 0.1, 0.02), tables(8))
    full = op.to_csr()
    assert (full != full.T).nnz == 0
    assert full.dtype == np.float64
    assert op.terms == ("trap", "contact", "zeeman", "quartic")


def test_table_mismatch():
    with pytest.raises(ValueError):
        build_hamiltonian(Sector(5, 1, 1), ModelParams(), tables(4))


def test_nonfinite_params_rejected():
    with pytest.raises(ValueError):
        ModelParams(g=float("nan"))


def test_first_order_interaction_shift():
    # nondegenerate g=0 ground state: dE/dg = sum of direct overlaps
    sector = Sector(8, 2, 1)
    v = tables(8).V
    slope = v[0, 0, 0, 0] + v[1, 0, 1, 0]
    h = 1e-6
    deriv = (spectrum(sector, g=h)[0] - spectrum(sector, g=-h)[0]) / (2 * h)
    assert deriv == pytest.approx(slope, abs=1e-7)


# --- total spin -----------------------------------------------------------

def s_squared_bruteforce(sector):
    """S^2 = S+ S- + Sz^2 - Sz built entry by entry (independent of the S- S+ route)."""
    basis = enumerate_sector(sector)
    dim = len(basis)
    n = sector.n_orb
    out = np.zeros((dim, dim))
    sz = sector.sz / 2
    for col, det in enumerate(basis):
        out[col, col] += sz * sz - sz
        for m in range(n):          # S- = sum_m a+_{m dn} a_{m up}
            for p in range(n):      # S+ = sum_p a+_{p up} a_{p dn}
                chain = [(Spin.UP, m, ModeOp.ANNIHILATE), (Spin.DOWN, m, ModeOp.CREATE),
                         (Spin.DOWN, p, ModeOp.ANNIHILATE), (Spin.UP, p, ModeOp.CREATE)]
                cur, sign = det, 1
                for spin, orb, kind in chain:
                    res = apply_mode_op(cur, spin, orb, kind, n)
                    if res is None:
                        break
                    cur, s = res
                    sign *= s
                else:
                    out[index_of(cur, sector), col] += sign
    return out


@pytest.mark.parametrize("sector", [Sector(2, 1, 1), Sector(3, 2, 1), Sector(4, 2, 2),
                                    Sector(4, 1, 3), Sector(3, 3, 0), Sector(5, 0, 2)])
def test_s_squared_matches_bruteforce(sector):
    assert np.abs(build_s_squared(sector).toarray() - s_squared_bruteforce(sector)).max() < 1e-14


def test_s_squared_examples():
    pol = build_s_squared(Sector(6, 3, 0)).toarray()
    assert np.array_equal(pol, 1.5 * 2.5 * np.eye(pol.shape[0]))
    assert build_s_squared(Sector(1, 1, 1)).toarray().tolist() == [[0.0]]
    ev = np.linalg.eigvalsh(build_s_squared(Sector(2, 1, 1)).toarray())
    # singlets on 00, 11 and the odd 01 combination, one triplet
    np.testing.assert_allclose(ev, [0, 0, 0, 2], atol=1e-14)


@pytest.mark.parametrize("sector", [Sector(5, 2, 2), Sector(6, 3, 1), Sector(4, 4, 1)])
def test_s_squared_spectrum_is_spin_multiplets(sector):
    ev = np.linalg.eigvalsh(build_s_squared(sector).toarray())
    assert ev.min() > -1e-12
    s = 0.5 * (-1 + np.sqrt(1 + 4 * ev))
    allowed = np.arange(abs(sector.sz) / 2, sector.n / 2 + 0.01, 1.0)
    assert np.all(np.min(np.abs(s[:, None] - allowed[None, :]), axis=1) < 1e-10)


def commutator_max(a, b):
    return np.abs(a @ b - b @ a).max()


def test_hamiltonian_commutes_with_total_spin():
    checked = 0
    for sector in small_sectors():
        s2 = build_s_squared(sector).toarray()
        for g in (0.0, 3.0, 20.0):
            h = build_hamiltonian(sector, ModelParams(g=g), tables(sector.n_orb)).toarray()
            assert commutator_max(h, s2) < 1e-10, (sector, g)
        h = build_hamiltonian(sector, ModelParams(g=5.0, lam=0.02), tables(sector.n_orb)).toarray()
        assert commutator_max(h, s2) < 1e-10
        checked += 1
    assert checked > 20


def test_zeeman_breaks_total_spin_but_keeps_sector():
    sector = Sector(6, 2, 1)
    s2 = build_s_squared(sector).toarray()
    h = build_hamiltonian(sector, ModelParams(g=5.0, delta=0.05), tables(6)).toarray()
    assert commutator_max(h, s2) > 1e-4
    z = build_zeeman(sector, tables(6)).toarray()
    h0 = build_hamiltonian(sector, ModelParams(g=5.0), tables(6)).toarray()
    np.testing.assert_allclose(h0 + 0.05 * z, h, atol=1e-14)


def test_zeeman_selection_rule_two_by_two():
    # (2 up, 2 down) holds S = 0, 1, 2, so Delta S = 2 pairs exist
    sector = Sector(6, 2, 2)
    t = tables(6)
    sol = eigs_dense(build_hamiltonian(sector, ModelParams(g=4.0), t))
    s2 = build_s_squared(sector).toarray()
    z = build_zeeman(sector, t).toarray()
    vecs = sol.eigenvectors
    # resolve residual degeneracies by diagonalising S^2 inside each energy cluster
    vals = sol.eigenvalues
    labels = np.empty(vals.size)
    start = 0
    while start < vals.size:
        stop = start + 1
        while stop < vals.size and vals[stop] - vals[stop - 1] < 1e-8:
            stop += 1
        block = vecs[:, start:stop]
        ev, rot = np.linalg.eigh(block.T @ s2 @ block)
        vecs[:, start:stop] = block @ rot
        labels[start:stop] = 0.5 * (-1 + np.sqrt(1 + 4 * ev))
        start = stop
    zz = vecs.T @ z @ vecs
    far = np.abs(labels[:, None] - labels[None, :]) > 1.5
    assert far.any()
    assert np.abs(zz[far]).max() < 1e-10


@pytest.mark.parametrize("sector", [Sector(2, 1, 1), Sector(4, 2, 1), Sector(6, 2, 1), Sector(5, 3, 1),
                                    Sector(4, 2, 2), Sector(6, 1, 3), Sector(8, 4, 1)])
def test_girardeau_level_present_for_every_g(sector):
    target = sector.n**2 / 2
    for g in (0.0, 1.0, 5.0, 10.0, 20.0):
        ev = spectrum(sector, g=g)
        assert np.min(np.abs(ev - target)) < 1e-8, g


@pytest.mark.parametrize("sector", [Sector(6, 1, 1), Sector(5, 2, 1), Sector(5, 2, 2)])
def test_repulsion_raises_every_level(sector):
    e0 = spectrum(sector)
    for g in (0.5, 3.0, 12.0):
        assert np.all(spectrum(sector, g=g) >= e0 - 1e-12)


# --- matvec ------------------------------------------------------------------

def test_matvec_diagonal():
    d = np.array([0.5, 1.5, 2.5, -1.0])
    op = SparseOperator.from_matrix(sp.diags(d))
    v = np.array([1.0, -2.0, 3.0, 0.5])
    np.testing.assert_array_equal(matvec(op, v), d * v)


def test_matvec_two_level_eigenvector():
    op = SparseOperator.from_matrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
    v = np.array([1.0, 1.0]) / math.sqrt(2)
    np.testing.assert_allclose(matvec(op, v), 3.0 * v, atol=1e-15)


def test_matvec_against_dense():
    rng = np.random.default_rng(3)
    for sector in (Sector(6, 2, 1), Sector(7, 1, 1), Sector(5, 2, 2)):
        op = build_hamiltonian(sector, ModelParams(6.0, 0.3, 0.1), tables(sector.n_orb))
        dense = op.toarray()
        v = rng.standard_normal(sector.dim)
        assert np.abs(matvec(op, v) - dense @ v).max() < 1e-12
        block = rng.standard_normal((sector.dim, 3))
        assert np.abs(op.matvec(block) - dense @ block).max() < 1e-12


def test_matvec_length_mismatch():
    op = SparseOperator.from_matrix(np.eye(3))
    with pytest.raises(ValueError):
        op.matvec(np.ones(4))


def test_from_matrix_rejects_asymmetric():
    with pytest.raises(ValueError):
        SparseOperator.from_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_coo_export(tmp_path):
    op = build_hamiltonian(Sector(2, 1, 1), ModelParams(g=1.0), tables(2))
    path = tmp_path / "h.txt"
    op.export_coo(path)
    rows = [line.split(",") for line in path.read_text().splitlines()[1:]]
    dense = np.zeros((4, 4))
    for r, c, v in rows:
        dense[int(r), int(c)] = float(v)
    np.testing.assert_array_equal(dense, op.toarray())
