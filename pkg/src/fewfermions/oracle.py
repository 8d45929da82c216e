"""Independent reference values: two-body relative motion on a grid, and the
strongly interacting limit."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .fock import Sector


class OracleConvergenceError(RuntimeError):
    def __init__(self, message, estimates):
        super().__init__(message)
        self.estimates = estimates


@dataclass(frozen=True)
class RelativeSpectrum:
    energies: np.ndarray
    parity: np.ndarray  # +1 even, -1 odd under r -> -r

    @property
    def even(self) -> np.ndarray:
        return self.energies[self.parity > 0]

    @property
    def odd(self) -> np.ndarray:
        return self.energies[self.parity < 0]


def _grid_spectrum(g: float, k: int, h: float, half_width: float):
    """Lowest k levels of -d2/dr2 + r^2/4 + g delta(r), three-point stencil.

    The grid has a node at r = 0 carrying the delta as g/h.
    """
    n_half = int(round(half_width / h))
    r = np.arange(-n_half, n_half + 1) * h
    diag = 2.0 / h**2 + 0.25 * r**2
    diag[n_half] += g / h
    off = np.full(r.size - 1, -1.0 / h**2)
    vals, vecs = sla.eigh_tridiagonal(diag, off, select="i", select_range=(0, k - 1))
    mirror = vecs[::-1]
    parity = np.where(np.sum(vecs * mirror, axis=0) > 0, 1, -1)
    return vals, parity


def relative_energies(g: float, k: int, h: float = 0.01, half_width: float = 12.0,
                      accept: float = 1e-6) -> RelativeSpectrum:
    """Richardson-extrapolated grid levels of the relative-motion Hamiltonian.

    Grids h, h/2, h/4 give two second-order extrapolants; they must agree
    to ``accept``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    e1, p1 = _grid_spectrum(g, k, h, half_width)
    e2, p2 = _grid_spectrum(g, k, h / 2, half_width)
    e3, p3 = _grid_spectrum(g, k, h / 4, half_width)
    if not (np.array_equal(p1, p2) and np.array_equal(p2, p3)):
        raise OracleConvergenceError("parity labels differ between grids", (p1, p2, p3))
    coarse = (4.0 * e2 - e1) / 3.0
    fine = (4.0 * e3 - e2) / 3.0
    if np.max(np.abs(fine - coarse)) > accept:
        raise OracleConvergenceError(
            f"extrapolants disagree by {np.max(np.abs(fine - coarse)):.3g}", (coarse, fine))
    return RelativeSpectrum(fine, p3)


def two_body_ground_energy(g: float) -> float:
    """Lowest even relative level plus the center-of-mass zero point 1/2."""
    return float(relative_energies(g, 2).even[0]) + 0.5


def girardeau_reference(sector: Sector) -> tuple[float, int]:
    """Energy N^2/2 of the fermionized state and the manifold size D."""
    n = sector.n
    energy = sum(m + 0.5 for m in range(n))
    return float(energy), math.comb(n, sector.n_up)


def fermi_energy(sector: Sector) -> float:
    """Noninteracting ground energy of the sector."""
    return (sum(m + 0.5 for m in range(sector.n_up))
            + sum(m + 0.5 for m in range(sector.n_down)))
