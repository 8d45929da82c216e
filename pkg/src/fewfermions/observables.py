"""Orbital occupations, thermal ensembles and spin diagnostics."""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .fock import Sector, Spin
from .hamiltonian import SparseOperator
from .solver import EigenSolution


class Infinite(enum.Enum):
    """Infinite temperature: equal weights, kept apart from any float."""

    T = "inf"

    def __repr__(self):
        return "INFINITE"


INFINITE = Infinite.T
Temperature = Union[float, Infinite]
LOWEST_MANIFOLD = "lowest-manifold"


class MixedSpinError(ValueError):
    def __init__(self, message, s2_expectation):
        super().__init__(message)
        self.s2_expectation = s2_expectation


class ManifoldWarning(UserWarning):
    pass


@dataclass(frozen=True)
class OccupationProfile:
    up: np.ndarray
    down: np.ndarray

    def __getitem__(self, spin: Spin | str) -> np.ndarray:
        return self.up if Spin(spin) is Spin.UP else self.down

    @property
    def n_orb(self) -> int:
        return self.up.size


@dataclass(frozen=True)
class EnsembleSpec:
    temperature: Temperature
    state_set: Sequence[int] | str = LOWEST_MANIFOLD

    def __post_init__(self):
        t = self.temperature
        if t is not INFINITE and not (isinstance(t, (int, float)) and math.isfinite(t) and t >= 0):
            raise ValueError(f"temperature must be >= 0 or INFINITE, got {t!r}")


@dataclass(frozen=True)
class ManifoldInfo:
    members: np.ndarray
    spread: float
    expected_count: int
    gap: float | None = None
    well_separated: bool = True


def parse_temperature(value) -> Temperature:
    if value is INFINITE or (isinstance(value, str) and value.strip().lower() in ("inf", "infinite")):
        return INFINITE
    t = float(value)
    if math.isinf(t) and t > 0:
        return INFINITE
    return t


def degeneracy(sector: Sector) -> int:
    """Number of spin configurations N! / (N_up! N_down!)."""
    return math.comb(sector.n, sector.n_up)


def _probabilities(coeffs: np.ndarray) -> np.ndarray:
    return np.abs(coeffs) ** 2


def occupations(state: np.ndarray, sector: Sector) -> OccupationProfile:
    state = np.asarray(state)
    if state.shape[0] != sector.dim:
        raise ValueError(f"state has length {state.shape[0]}, sector dimension is {sector.dim}")
    return occupations_from_weights(_probabilities(state), sector)


def occupations_from_weights(weights: np.ndarray, sector: Sector) -> OccupationProfile:
    """Profile of a diagonal mixture with basis-state probabilities ``weights``.

    The basis is a tensor product (down major), so the per-species marginals
    are row/column sums of the reshaped weights.
    """
    w = np.asarray(weights, dtype=float).reshape(sector.dim_down, sector.dim_up)
    up_marg = w.sum(axis=0)
    dn_marg = w.sum(axis=1)
    shifts = np.arange(sector.n_orb, dtype=np.uint64)
    up_occ = ((sector.up_states[:, None] >> shifts) & np.uint64(1)).astype(float)
    dn_occ = ((sector.down_states[:, None] >> shifts) & np.uint64(1)).astype(float)
    return OccupationProfile(up=up_marg @ up_occ, down=dn_marg @ dn_occ)


def cdf(profile: OccupationProfile, spin: Spin | str, n: int) -> float:
    """Probability that the species occupies any orbital above ``n``."""
    occ = profile[spin]
    if not 0 <= n < occ.size:
        raise ValueError(f"cutoff {n} outside 0..{occ.size - 1}")
    return float(occ[n + 1:].sum())


def detect_manifold(eig: EigenSolution, sector: Sector, g: float | None = None) -> ManifoldInfo:
    """The lowest D states; warns when the gap above is below 3x their spread."""
    d = degeneracy(sector)
    vals = eig.eigenvalues
    if vals.size < d + 1:
        raise ValueError(f"need at least {d + 1} eigenvalues to resolve a {d}-state manifold, "
                         f"got {vals.size}")
    members = np.arange(d)
    spread = float(vals[d - 1] - vals[0])
    gap = float(vals[d] - vals[d - 1])
    ok = gap >= 3.0 * spread
    if not ok:
        at = "" if g is None else f" at g={g}"
        warnings.warn(f"manifold of {d} states not well separated{at}: gap {gap:.3g}, "
                      f"spread {spread:.3g}", ManifoldWarning, stacklevel=2)
    return ManifoldInfo(members, spread, d, gap, ok)


def boltzmann_weights(energies: np.ndarray, temperature: Temperature) -> np.ndarray:
    e = np.asarray(energies, dtype=float)
    if temperature is INFINITE:
        return np.full(e.size, 1.0 / e.size)
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    shifted = e - e.min()
    if temperature == 0:
        # ground state only; on exact ties the first listed member wins
        w = np.zeros(e.size)
        w[int(np.argmin(e))] = 1.0
        return w
    w = np.exp(-shifted / temperature)
    return w / w.sum()


def _resolve_states(eig: EigenSolution, sector: Sector, spec: EnsembleSpec) -> np.ndarray:
    if isinstance(spec.state_set, str):
        if spec.state_set != LOWEST_MANIFOLD:
            raise ValueError(f"unknown state set {spec.state_set!r}")
        return detect_manifold(eig, sector).members
    return np.asarray(spec.state_set, dtype=int)


def thermal_profile(eig: EigenSolution, sector: Sector, spec: EnsembleSpec) -> OccupationProfile:
    if eig.eigenvectors is None:
        raise ValueError("thermal_profile needs eigenvectors")
    states = _resolve_states(eig, sector, spec)
    w = boltzmann_weights(eig.eigenvalues[states], spec.temperature)
    probs = _probabilities(eig.eigenvectors[:, states]) @ w
    return occupations_from_weights(probs, sector)


def s2_expectation(state: np.ndarray, s2: SparseOperator) -> tuple[float, float]:
    """<S^2> and its variance."""
    s2psi = s2.matvec(state)
    mean = float(np.vdot(state, s2psi).real)
    var = float(np.vdot(s2psi, s2psi).real) - mean**2
    return mean, var


def total_spin_label(state: np.ndarray, s2: SparseOperator, tol: float = 1e-6) -> float:
    """Total spin S (half-integer) of an S^2 eigenstate."""
    mean, var = s2_expectation(state, s2)
    s_raw = 0.5 * (-1.0 + math.sqrt(max(0.0, 1.0 + 4.0 * mean)))
    s = round(2.0 * s_raw) / 2.0
    if abs(mean - s * (s + 1.0)) > tol or abs(var) > tol:
        raise MixedSpinError(f"state is not an S^2 eigenstate: <S^2>={mean!r}, var={var:.3g}", mean)
    return s


def allowed_spins(sector: Sector) -> np.ndarray:
    return np.arange(abs(sector.sz) / 2, sector.n / 2 + 0.25, 1.0)


def project_total_spin(state: np.ndarray, s2: SparseOperator, sector: Sector, s: float) -> np.ndarray:
    """Apply the exact projector onto total spin ``s``.

    The projector is the Lagrange polynomial in S^2 that is 1 at s(s+1) and
    vanishes at every other allowed eigenvalue.
    """
    spins = allowed_spins(sector)
    if not np.any(np.isclose(spins, s)):
        raise ValueError(f"spin {s} not allowed in {sector}; choose from {spins.tolist()}")
    target = s * (s + 1)
    out = np.array(state, dtype=float if np.isrealobj(state) else complex, copy=True)
    for other in spins:
        if np.isclose(other, s):
            continue
        lam = other * (other + 1)
        out = (s2.matvec(out) - lam * out) / (target - lam)
    return out


def spin_sector_probabilities(psi_t: np.ndarray, reference_basis: np.ndarray):
    """|<ref_k|psi>|^2 for each reference column, and the leakage 1 - sum."""
    amps = np.asarray(reference_basis).conj().T @ np.asarray(psi_t)
    p = np.abs(amps) ** 2
    leakage = float(1.0 - p.sum(axis=0)) if p.ndim == 1 else 1.0 - p.sum(axis=0)
    return p, leakage
