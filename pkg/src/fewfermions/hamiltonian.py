"""Sparse symmetric operators in a sector basis.

The Hamiltonian is

    H = sum_{n,s} eps_n n_{ns}
        + g       sum V_ijkl a+_{i up} a+_{j dn} a_{l dn} a_{k up}
        + delta   sum X_mn (a+_{m up} a_{n up} - a+_{m dn} a_{n dn})
        + lam     sum X4_mn a+_{m s} a_{n s}

Only the lower triangle is stored; the full matrix is symmetric by
construction.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .fock import (Determinant, ModeOp, Sector, Spin, apply_mode_op, apply_mode_op_array,
                   enumerate_sector, hopping_table, index_of, rank_states)
from .sp_basis import SpTables

DROP_TOL = 1e-14
# COO entries per assembly batch; bounds peak memory for the big sectors
_BATCH_ENTRIES = 6_000_000


@dataclass(frozen=True)
class ModelParams:
    g: float = 0.0
    delta: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        for name in ("g", "delta", "lam"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite, got {getattr(self, name)!r}")


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Real symmetric matrix stored as its lower triangle (CSR)."""

    lower: sp.csr_matrix
    terms: tuple[str, ...] = ()
    sector: Sector | None = field(default=None, compare=False)

    @classmethod
    def from_matrix(cls, a, terms=(), sector=None, check=True) -> "SparseOperator":
        a = sp.csr_matrix(a, dtype=float)
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"operator must be square, got {a.shape}")
        if check and a.nnz and abs(a - a.T).max() > 1e-12 * max(1.0, abs(a).max()):
            raise ValueError("matrix is not symmetric")
        lower = sp.tril(a, format="csr")
        lower.sort_indices()
        return cls(lower, tuple(terms), sector)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.lower.shape

    @cached_property
    def diagonal(self) -> np.ndarray:
        return self.lower.diagonal()

    @cached_property
    def is_diagonal(self) -> bool:
        lo = self.lower.tocoo()
        return bool(np.all(lo.row == lo.col))

    @property
    def nnz(self) -> int:
        """Stored entries of the full symmetric matrix."""
        n_diag = int(np.count_nonzero(self.diagonal))
        return 2 * self.lower.nnz - n_diag

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        if v.shape[0] != self.dim:
            raise ValueError(f"vector length {v.shape[0]} does not match dimension {self.dim}")
        d = self.diagonal if v.ndim == 1 else self.diagonal[:, None]
        return self.lower @ v + self.lower.T @ v - d * v

    __matmul__ = matvec

    def to_csr(self) -> sp.csr_matrix:
        lo = self.lower
        full = lo + sp.tril(lo, k=-1, format="csr").T
        return full.tocsr()

    def toarray(self) -> np.ndarray:
        return self.to_csr().toarray()

    def export_coo(self, path: str | Path) -> None:
        """Full symmetric matrix as (row, col, value) text, row-major order."""
        full = self.to_csr()
        full.sort_indices()
        coo = full.tocoo()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["row", "col", "value"])
            for r, c, v in zip(coo.row, coo.col, coo.data):
                out.writerow([int(r), int(c), f"{v:.17g}"])

    def __add__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator((self.lower + other.lower).tocsr(),
                              self.terms + other.terms, self.sector)

    def scaled(self, c: float) -> "SparseOperator":
        return SparseOperator((c * self.lower).tocsr(), self.terms, self.sector)


def _one_body_matrix(table, dim: int, t: np.ndarray) -> sp.csr_matrix:
    src, dst, i, k, sign = table
    vals = sign * t[i, k]
    m = sp.coo_matrix((vals, (dst, src)), shape=(dim, dim)).tocsr()
    m.sum_duplicates()
    return m


def _assemble(sector: Sector, t_up: np.ndarray, t_down: np.ndarray, g: float,
              V: np.ndarray | None) -> sp.csr_matrix:
    """Lower triangle of one-body(t_up, t_down) + g * contact.

    Basis index is d * dim_up + u, so the one-body parts are Kronecker sums
    and the contact term is sum_jl E^dn_jl (x) (sum_ik V_ijkl E^up_ik).
    """
    n_orb = sector.n_orb
    du_dim, dd_dim = sector.dim_up, sector.dim_down
    hop_up = hopping_table(n_orb, sector.n_up)
    hop_dn = hopping_table(n_orb, sector.n_down)
    h_up = _one_body_matrix(hop_up, du_dim, t_up).tocoo()
    h_dn = _one_body_matrix(hop_dn, dd_dim, t_down).tocoo()
    u_src, u_dst, u_i, u_k, u_sign = hop_up

    # down transitions ket d_src -> bra d_dst; d_dst < d_src only reaches the
    # upper triangle. Sorted by bra so row blocks are contiguous.
    d_src, d_dst, d_j, d_l, d_sign = hop_dn
    keep = d_dst >= d_src
    d_src, d_dst, d_j, d_l, d_sign = (a[keep] for a in (d_src, d_dst, d_j, d_l, d_sign))
    order = np.lexsort((d_src, d_dst))
    d_src, d_dst, d_j, d_l, d_sign = (a[order] for a in (d_src, d_dst, d_j, d_l, d_sign))

    hd_keep = h_dn.col <= h_dn.row
    hd_row, hd_col, hd_val = h_dn.row[hd_keep], h_dn.col[hd_keep], h_dn.data[hd_keep]
    hu_keep = h_up.col <= h_up.row
    hu_row, hu_col, hu_val = h_up.row[hu_keep], h_up.col[hu_keep], h_up.data[hu_keep]
    u_range = np.arange(du_dim)

    use_contact = g != 0.0 and V is not None and u_src.size and d_src.size
    per_transition = u_src.size if use_contact else 0
    blocks = []
    d0 = 0
    pos = 0  # cursor into the bra-sorted down transitions
    while d0 < dd_dim:
        # grow the block of bra down states until the entry budget is hit
        d1, end = d0, pos
        budget = 0
        while d1 < dd_dim:
            stop = end
            while stop < d_dst.size and d_dst[stop] == d1:
                stop += 1
            cost = (stop - end) * per_transition + du_dim * 2
            if d1 > d0 and budget + cost > _BATCH_ENTRIES:
                break
            budget += cost
            end = stop
            d1 += 1
        rows, cols, vals = [], [], []
        base = d0 * du_dim
        if use_contact:
            for t in range(pos, end):
                j, l = d_j[t], d_l[t]
                w = (g * d_sign[t]) * V[:, j, :, l][u_i, u_k] * u_sign
                r = d_dst[t] * du_dim + u_dst
                c = d_src[t] * du_dim + u_src
                if d_src[t] == d_dst[t]:
                    lo = c <= r
                    r, c, w = r[lo], c[lo], w[lo]
                rows.append(r - base)
                cols.append(c)
                vals.append(w)
        for d in range(d0, d1):
            rows.append(d * du_dim + hu_row - base)
            cols.append(d * du_dim + hu_col)
            vals.append(hu_val)
        sel = (hd_row >= d0) & (hd_row < d1)
        for r_d, c_d, v in zip(hd_row[sel], hd_col[sel], hd_val[sel]):
            rows.append(r_d * du_dim + u_range - base)
            cols.append(c_d * du_dim + u_range)
            vals.append(np.full(du_dim, v))
        n_rows = (d1 - d0) * du_dim
        block = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(n_rows, sector.dim)).tocsr()
        block.sum_duplicates()
        block.data[np.abs(block.data) < DROP_TOL] = 0.0
        block.eliminate_zeros()
        blocks.append(block)
        d0, pos = d1, end
    lower = sp.vstack(blocks, format="csr")
    lower.sort_indices()
    return lower


def _check_tables(sector: Sector, tables: SpTables) -> None:
    if tables.n_orb != sector.n_orb:
        raise ValueError(f"tables built for n_orb={tables.n_orb}, sector has n_orb={sector.n_orb}")


def _single_particle(params: ModelParams, tables: SpTables):
    base = np.diag(tables.eps) + params.lam * tables.X4
    return base + params.delta * tables.X, base - params.delta * tables.X


def _terms(params: ModelParams) -> tuple[str, ...]:
    terms = ["trap"]
    if params.g != 0.0:
        terms.append("contact")
    if params.delta != 0.0:
        terms.append("zeeman")
    if params.lam != 0.0:
        terms.append("quartic")
    return tuple(terms)


def build_hamiltonian(sector: Sector, params: ModelParams, tables: SpTables) -> SparseOperator:
    _check_tables(sector, tables)
    t_up, t_down = _single_particle(params, tables)
    lower = _assemble(sector, t_up, t_down, params.g, tables.V)
    return SparseOperator(lower, _terms(params), sector)


def build_zeeman(sector: Sector, tables: SpTables) -> SparseOperator:
    """sum_i x_i sigma^z_i alone (unit gradient), sigma^z = +1 for up."""
    _check_tables(sector, tables)
    lower = _assemble(sector, tables.X, -tables.X, 0.0, None)
    return SparseOperator(lower, ("zeeman",), sector)


def raising_operator(sector: Sector) -> sp.csr_matrix:
    """S+ = sum_n a+_{n up} a_{n dn} as a map into (n_up+1, n_down-1)."""
    if sector.n_down == 0 or sector.n_up == sector.n_orb:
        return sp.csr_matrix((0, sector.dim))
    target = Sector(sector.n_orb, sector.n_up + 1, sector.n_down - 1)
    up, down = sector.up_bits, sector.down_bits
    cols_all, rows_all, vals_all = [], [], []
    cols = np.arange(sector.dim)
    for n in range(sector.n_orb):
        up1, dn1, s1, ok1 = apply_mode_op_array(up, down, Spin.DOWN, n, ModeOp.ANNIHILATE)
        up2, dn2, s2, ok2 = apply_mode_op_array(up1, dn1, Spin.UP, n, ModeOp.CREATE)
        ok = ok1 & ok2
        if not ok.any():
            continue
        idx = (rank_states(dn2[ok], sector.n_orb) * target.dim_up
               + rank_states(up2[ok], sector.n_orb))
        rows_all.append(idx)
        cols_all.append(cols[ok])
        vals_all.append((s1[ok] * s2[ok]).astype(float))
    return sp.coo_matrix((np.concatenate(vals_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
                         shape=(target.dim, sector.dim)).tocsr()


def build_s_squared(sector: Sector) -> SparseOperator:
    """S^2 = S- S+ + Sz (Sz + 1), with S- S+ routed through the neighbouring sector."""
    s_plus = raising_operator(sector)
    sz = sector.sz / 2.0
    s2 = (s_plus.T @ s_plus).tocsr() + sz * (sz + 1.0) * sp.identity(sector.dim, format="csr")
    return SparseOperator.from_matrix(s2, ("s_squared",), sector)


def matvec(op: SparseOperator, v: np.ndarray) -> np.ndarray:
    return op.matvec(v)


def build_hamiltonian_rowwise(sector: Sector, params: ModelParams, tables: SpTables) -> SparseOperator:
    """Reference assembly, one determinant at a time through ``apply_mode_op``.

    Slow; used to cross-check :func:`build_hamiltonian` on small sectors.
    """
    _check_tables(sector, tables)
    n_orb = sector.n_orb
    t_up, t_down = _single_particle(params, tables)
    basis = enumerate_sector(sector)
    entries: dict[tuple[int, int], float] = {}

    def add(row, col, value):
        if col <= row:
            entries[(row, col)] = entries.get((row, col), 0.0) + value

    def chain(det, ops):
        sign = 1
        for spin, orb, kind in ops:
            res = apply_mode_op(det, spin, orb, kind, n_orb)
            if res is None:
                return None
            det, s = res
            sign *= s
        return det, sign

    for col, det in enumerate(basis):
        for spin, t in ((Spin.UP, t_up), (Spin.DOWN, t_down)):
            for m in range(n_orb):
                for n in range(n_orb):
                    if t[m, n] == 0.0:
                        continue
                    res = chain(det, [(spin, n, ModeOp.ANNIHILATE), (spin, m, ModeOp.CREATE)])
                    if res is not None:
                        add(index_of(res[0], sector), col, t[m, n] * res[1])
        if params.g == 0.0:
            continue
        for k in range(n_orb):
            for l in range(n_orb):
                for j in range(n_orb):
                    for i in range(n_orb):
                        v = tables.V[i, j, k, l]
                        if abs(v) < 1e-15:
                            continue
                        # a+_{i up} a+_{j dn} a_{l dn} a_{k up}, rightmost first
                        res = chain(det, [(Spin.UP, k, ModeOp.ANNIHILATE), (Spin.DOWN, l, ModeOp.ANNIHILATE),
                                          (Spin.DOWN, j, ModeOp.CREATE), (Spin.UP, i, ModeOp.CREATE)])
                        if res is not None:
                            add(index_of(res[0], sector), col, params.g * v * res[1])
    if entries:
        (rows, cols), vals = zip(*entries.keys()), list(entries.values())
    else:
        rows, cols, vals = (), (), ()
    lower = sp.coo_matrix((vals, (rows, cols)), shape=(sector.dim, sector.dim)).tocsr()
    lower.data[np.abs(lower.data) < DROP_TOL] = 0.0
    lower.eliminate_zeros()
    lower.sort_indices()
    return SparseOperator(lower, _terms(params), sector)


__all__ = [
    "Determinant", "ModelParams", "SparseOperator", "build_hamiltonian", "build_hamiltonian_rowwise",
    "build_s_squared", "build_zeeman", "matvec", "raising_operator",
]
