"""Single-particle harmonic-oscillator tables in oscillator units.

Energies are in units of hbar*omega and lengths in sqrt(hbar/(m*omega)).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def _check_size(n_orb: int) -> None:
    if int(n_orb) != n_orb or n_orb < 1:
        raise ValueError(f"n_orb must be a positive integer, got {n_orb!r}")


def hermite_functions(n_orb: int, x) -> np.ndarray:
    """Normalized oscillator eigenfunctions phi_0..phi_{n_orb-1} at points ``x``.

    Uses the three-term recurrence on the normalized functions, which stays
    finite where the raw Hermite polynomials would overflow.

    Returns an array of shape ``(n_orb, len(x))``.
    """
    _check_size(n_orb)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    phi = np.empty((n_orb, x.size))
    phi[0] = np.pi ** -0.25 * np.exp(-0.5 * x**2)
    if n_orb > 1:
        phi[1] = np.sqrt(2.0) * x * phi[0]
    for n in range(1, n_orb - 1):
        phi[n + 1] = np.sqrt(2.0 / (n + 1)) * x * phi[n] - np.sqrt(n / (n + 1)) * phi[n - 1]
    return phi


def orbital_energies(n_orb: int) -> np.ndarray:
    _check_size(n_orb)
    return np.arange(n_orb, dtype=float) + 0.5


def _ladder_x(size: int) -> np.ndarray:
    x = np.zeros((size, size))
    off = np.sqrt(np.arange(1, size) / 2.0)
    x[np.arange(1, size), np.arange(size - 1)] = off
    x[np.arange(size - 1), np.arange(1, size)] = off
    return x


def x_matrix(n_orb: int) -> np.ndarray:
    """<m|x|n>; tridiagonal with <n+1|x|n> = sqrt((n+1)/2)."""
    _check_size(n_orb)
    return _ladder_x(n_orb)


def quartic_matrix(n_orb: int) -> np.ndarray:
    """<m|x^4|n>, exact for the truncated block.

    A four-step path between levels below ``n_orb`` never climbs above
    ``n_orb + 1``, so the power of a slightly enlarged ladder matrix is exact.
    """
    _check_size(n_orb)
    x = _ladder_x(n_orb + 2)
    x2 = x @ x
    x4 = x2 @ x2
    x4 = x4[:n_orb, :n_orb]
    return 0.5 * (x4 + x4.T)


def interaction_tensor(n_orb: int, n_nodes: int | None = None) -> np.ndarray:
    """Contact overlaps V[i,j,k,l] = integral of phi_i phi_j phi_k phi_l dx.

    The integrand is a polynomial of degree <= 4*(n_orb-1) times exp(-2x^2).
    With x = y/sqrt(2) this becomes a Gauss-Hermite integral, exact once the
    rule has at least 2*(n_orb-1)+2 nodes.
    """
    _check_size(n_orb)
    n_min = 2 * (n_orb - 1) + 2
    if n_nodes is None:
        n_nodes = n_min
    elif n_nodes < n_min:
        raise ValueError(f"need at least {n_min} quadrature nodes, got {n_nodes}")
    y, w = np.polynomial.hermite.hermgauss(n_nodes)
    x = y / np.sqrt(2.0)
    weight = w * np.exp(y**2) / np.sqrt(2.0)
    phi = hermite_functions(n_orb, x)  # (n_orb, Q)
    pair = np.einsum("iq,jq->ijq", phi, phi).reshape(n_orb * n_orb, n_nodes)
    v = (pair * weight) @ pair.T
    return v.reshape(n_orb, n_orb, n_orb, n_orb)


@dataclass(frozen=True)
class SpTables:
    n_orb: int
    eps: np.ndarray
    X: np.ndarray
    X4: np.ndarray
    V: np.ndarray

    @classmethod
    def build(cls, n_orb: int) -> "SpTables":
        tables = cls(
            n_orb=n_orb,
            eps=orbital_energies(n_orb),
            X=x_matrix(n_orb),
            X4=quartic_matrix(n_orb),
            V=interaction_tensor(n_orb),
        )
        for arr in (tables.eps, tables.X, tables.X4, tables.V):
            arr.setflags(write=False)
        return tables

    def dump_csv(self, path: str | Path) -> None:
        """Debug dump: one row per nonzero table entry."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["table", "i", "j", "k", "l", "value"])
            for n, e in enumerate(self.eps):
                out.writerow(["eps", n, "", "", "", repr(float(e))])
            for name, mat in (("X", self.X), ("X4", self.X4)):
                for m, n in zip(*np.nonzero(mat)):
                    out.writerow([name, m, n, "", "", repr(float(mat[m, n]))])
            for i, j, k, l in zip(*np.nonzero(np.abs(self.V) > 1e-15)):
                out.writerow(["V", i, j, k, l, repr(float(self.V[i, j, k, l]))])
