"""Slater-determinant basis of a fixed (N_up, N_down) sector.

Determinants are pairs of occupation bitsets; bit ``n`` of ``up_bits`` marks
an up fermion in oscillator level ``n``.  Mode ordering for signs is global:
all up modes by ascending orbital, then all down modes by ascending orbital.

Basis order (a file-format contract): down_bits major, up_bits minor, each
ascending as integers, so ``index = rank(down) * dim_up + rank(up)``.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from math import comb
from pathlib import Path
from typing import NamedTuple

import numpy as np

MAX_ORBITALS = 64


class EmptySectorError(ValueError):
    pass


class NotInSectorError(ValueError):
    pass


class UnsupportedSectorError(ValueError):
    pass


class Spin(enum.Enum):
    UP = "up"
    DOWN = "down"


class ModeOp(enum.Enum):
    CREATE = "create"
    ANNIHILATE = "annihilate"


class Determinant(NamedTuple):
    up_bits: int
    down_bits: int


def popcount(x: int) -> int:
    return bin(x).count("1")


def _popcount_array(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.uint64)
    out = np.zeros(a.shape, dtype=np.int64)
    while np.any(a):
        out += (a & np.uint64(1)).astype(np.int64)
        a = a >> np.uint64(1)
    return out


@dataclass(frozen=True)
class Sector:
    n_orb: int
    n_up: int
    n_down: int

    def __post_init__(self):
        if self.n_orb < 1:
            raise ValueError(f"n_orb must be >= 1, got {self.n_orb}")
        if self.n_orb > MAX_ORBITALS:
            raise UnsupportedSectorError(
                f"n_orb={self.n_orb} exceeds the {MAX_ORBITALS}-bit determinant width")
        for name in ("n_up", "n_down"):
            n = getattr(self, name)
            if n < 0 or n > self.n_orb:
                raise EmptySectorError(f"{name}={n} does not fit into {self.n_orb} orbitals")

    @property
    def n(self) -> int:
        return self.n_up + self.n_down

    @property
    def sz(self) -> int:
        """N_up - N_down (twice the spin projection)."""
        return self.n_up - self.n_down

    @property
    def dim_up(self) -> int:
        return comb(self.n_orb, self.n_up)

    @property
    def dim_down(self) -> int:
        return comb(self.n_orb, self.n_down)

    @property
    def dim(self) -> int:
        return self.dim_up * self.dim_down

    @cached_property
    def up_states(self) -> np.ndarray:
        return spin_states(self.n_orb, self.n_up)

    @cached_property
    def down_states(self) -> np.ndarray:
        return spin_states(self.n_orb, self.n_down)

    @cached_property
    def up_bits(self) -> np.ndarray:
        """up_bits of every basis determinant, in basis order."""
        return np.tile(self.up_states, self.dim_down)

    @cached_property
    def down_bits(self) -> np.ndarray:
        return np.repeat(self.down_states, self.dim_up)

    def occupation_matrix(self, spin: Spin | str) -> np.ndarray:
        """(dim, n_orb) array of 0/1 occupations of one species."""
        bits = self.up_bits if Spin(spin) is Spin.UP else self.down_bits
        shifts = np.arange(self.n_orb, dtype=np.uint64)
        return ((bits[:, None] >> shifts) & np.uint64(1)).astype(np.int8)


def spin_states(n_orb: int, n: int) -> np.ndarray:
    """All n-particle bitsets over n_orb orbitals, ascending as integers."""
    if n < 0 or n > n_orb:
        raise EmptySectorError(f"{n} particles do not fit into {n_orb} orbitals")
    states = [sum(1 << p for p in occ) for occ in combinations(range(n_orb), n)]
    return np.sort(np.array(states, dtype=np.uint64))


_BINOM = np.array([[comb(p, i) for i in range(MAX_ORBITALS + 1)]
                   for p in range(MAX_ORBITALS + 1)], dtype=np.int64)


def rank_states(states: np.ndarray, n_orb: int) -> np.ndarray:
    """Position of each bitset among same-popcount bitsets in ascending order.

    Colexicographic rank: sum over set bits p (the c-th set bit, 1-based)
    of C(p, c).
    """
    s = np.asarray(states, dtype=np.uint64)
    rank = np.zeros(s.shape, dtype=np.int64)
    seen = np.zeros(s.shape, dtype=np.int64)
    for p in range(n_orb):
        bit = ((s >> np.uint64(p)) & np.uint64(1)).astype(np.int64)
        seen += bit
        rank += bit * _BINOM[p, seen]
    return rank


def rank_bits(bits: int) -> int:
    """Scalar :func:`rank_states`."""
    rank, seen, p = 0, 0, 0
    while bits:
        if bits & 1:
            seen += 1
            rank += comb(p, seen)
        bits >>= 1
        p += 1
    return rank


def enumerate_sector(sector: Sector) -> list[Determinant]:
    return [Determinant(int(u), int(d)) for u, d in zip(sector.up_bits, sector.down_bits)]


def index_of(det: Determinant, sector: Sector) -> int:
    up, down = int(det.up_bits), int(det.down_bits)
    limit = 1 << sector.n_orb
    if (up >= limit or down >= limit or up < 0 or down < 0
            or popcount(up) != sector.n_up or popcount(down) != sector.n_down):
        raise NotInSectorError(f"{det} is not a member of {sector}")
    return rank_bits(down) * sector.dim_up + rank_bits(up)


def apply_mode_op(det: Determinant, spin: Spin | str, orbital: int, kind: ModeOp | str,
                  n_orb: int = MAX_ORBITALS) -> tuple[Determinant, int] | None:
    """Apply a single creation/annihilation operator.

    Returns ``(new_det, sign)`` or ``None`` when the result vanishes.
    """
    spin, kind = Spin(spin), ModeOp(kind)
    if not 0 <= orbital < n_orb:
        raise ValueError(f"orbital {orbital} out of range for {n_orb} orbitals")
    up, down = det
    bit = 1 << orbital
    below = bit - 1
    if spin is Spin.UP:
        target, preceding = up, popcount(up & below)
    else:
        target, preceding = down, popcount(up) + popcount(down & below)
    occupied = bool(target & bit)
    if occupied == (kind is ModeOp.CREATE):
        return None
    target ^= bit
    sign = -1 if preceding % 2 else 1
    new = Determinant(target, down) if spin is Spin.UP else Determinant(up, target)
    return new, sign


def apply_mode_op_array(up: np.ndarray, down: np.ndarray, spin: Spin | str, orbital: int,
                        kind: ModeOp | str):
    """Vectorized ``apply_mode_op`` over arrays of determinants.

    Returns ``(new_up, new_down, sign, alive)``; entries where ``alive`` is
    False vanished and carry sign 0.
    """
    spin, kind = Spin(spin), ModeOp(kind)
    up = np.asarray(up, dtype=np.uint64)
    down = np.asarray(down, dtype=np.uint64)
    bit = np.uint64(1) << np.uint64(orbital)
    below = bit - np.uint64(1)
    if spin is Spin.UP:
        target = up
        preceding = _popcount_array(up & below)
    else:
        target = down
        preceding = _popcount_array(up) + _popcount_array(down & below)
    occupied = (target & bit) != 0
    alive = ~occupied if kind is ModeOp.CREATE else occupied
    flipped = target ^ bit
    sign = np.where(alive, 1 - 2 * (preceding % 2), 0).astype(np.int8)
    if spin is Spin.UP:
        return np.where(alive, flipped, up), down.copy(), sign, alive
    return up.copy(), np.where(alive, flipped, down), sign, alive


def hopping_table(n_orb: int, n: int):
    """All nonvanishing images of a_i^dag a_k within one spin species.

    Signs are local to the species; for the down block the extra
    (-1)^N_up from passing the up modes appears twice and cancels.
    Returns arrays ``(src, dst, i, k, sign)`` where ``src``/``dst`` are ranks
    in :func:`spin_states` order.
    """
    states = spin_states(n_orb, n)
    src_all, dst_all, i_all, k_all, sign_all = [], [], [], [], []
    zeros = np.zeros_like(states)
    idx = np.arange(states.size)
    for k in range(n_orb):
        mid, _, s1, ok1 = apply_mode_op_array(states, zeros, Spin.UP, k, ModeOp.ANNIHILATE)
        if not ok1.any():
            continue
        mid, s1, src = mid[ok1], s1[ok1], idx[ok1]
        for i in range(n_orb):
            new, _, s2, ok2 = apply_mode_op_array(mid, np.zeros_like(mid), Spin.UP, i, ModeOp.CREATE)
            if not ok2.any():
                continue
            src_all.append(src[ok2])
            dst_all.append(new[ok2])
            i_all.append(np.full(ok2.sum(), i))
            k_all.append(np.full(ok2.sum(), k))
            sign_all.append(s1[ok2] * s2[ok2])
    if not src_all:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty, empty, np.zeros(0, dtype=np.int8)
    dst = rank_states(np.concatenate(dst_all), n_orb)
    return (np.concatenate(src_all), dst, np.concatenate(i_all),
            np.concatenate(k_all), np.concatenate(sign_all).astype(np.int8))


def export_basis_csv(sector: Sector, path: str | Path) -> None:
    width = sector.n_orb
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["index", "up_bits", "down_bits"])
        for idx, (u, d) in enumerate(zip(sector.up_bits, sector.down_bits)):
            out.writerow([idx, format(int(u), f"0{width}b"), format(int(d), f"0{width}b")])
