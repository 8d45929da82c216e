"""Quantitative acceptance checks, shared by the test suite and ``fewfermions oracle``.

Each criterion returns one :class:`CriterionResult` made of named sub-checks;
the criterion passes when all of them do.  Eigen-solutions are cached on a
:class:`Workbench` so criteria that share a sector and coupling reuse work.
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .fock import Determinant, ModeOp, Sector, Spin, apply_mode_op
from .hamiltonian import ModelParams, build_hamiltonian, build_s_squared, build_zeeman
from .observables import (INFINITE, EnsembleSpec, cdf, degeneracy, detect_manifold, occupations,
                          project_total_spin, spin_sector_probabilities,
                          thermal_profile, total_spin_label)
from .oracle import fermi_energy, girardeau_reference, two_body_ground_energy
from .solver import DENSE_THRESHOLD, EigenSolution, eigs_dense, eigs_lowk, propagate
from .sp_basis import SpTables

log = logging.getLogger(__name__)

ZEEMAN_SLOPE = 4.0 * math.sqrt(2.0 / math.pi)
BIG_ORB = 21
DYNAMICS_ORB = 12


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class CriterionResult:
    number: int
    title: str
    checks: list[Check] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def add(self, name: str, passed, detail: str) -> None:
        self.checks.append(Check(name, bool(passed), detail))

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        parts = "; ".join(f"{c.name}: {c.detail}{'' if c.passed else ' [failed]'}" for c in self.checks)
        return f"[{status}] criterion {self.number} ({self.title}): {parts}"

    def as_dict(self) -> dict:
        return {"number": self.number, "title": self.title, "passed": self.passed,
                "seconds": self.seconds,
                "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks]}


class Workbench:
    """Caches single-particle tables, operators and low-lying eigenpairs."""

    def __init__(self, tol: float = 1e-9):
        self.tol = tol
        self._tables: dict[int, SpTables] = {}
        self._solutions: dict[tuple, EigenSolution] = {}
        self.profiles: list = []

    def tables(self, n_orb: int) -> SpTables:
        if n_orb not in self._tables:
            self._tables[n_orb] = SpTables.build(n_orb)
        return self._tables[n_orb]

    def hamiltonian(self, sector: Sector, g=0.0, delta=0.0, lam=0.0):
        return build_hamiltonian(sector, ModelParams(g, delta, lam), self.tables(sector.n_orb))

    def lowest(self, sector: Sector, k: int, g=0.0, delta=0.0, lam=0.0) -> EigenSolution:
        key = (sector, float(g), float(delta), float(lam))
        cached = self._solutions.get(key)
        if cached is not None and len(cached) >= k:
            return cached
        op = self.hamiltonian(sector, g, delta, lam)
        start = time.perf_counter()
        if op.dim <= DENSE_THRESHOLD:
            sol = eigs_dense(op)
        else:
            sol = eigs_lowk(op, k, tol=self.tol)
        log.info("eigenpairs %s g=%s delta=%s lam=%s k=%d: %.1fs", sector, g, delta, lam, k,
                 time.perf_counter() - start)
        self._solutions[key] = sol
        return sol

    def profile(self, state_or_sol, sector: Sector, spec: EnsembleSpec | None = None):
        if spec is None:
            prof = occupations(state_or_sol, sector)
        else:
            prof = thermal_profile(state_or_sol, sector, spec)
        self.profiles.append(prof)
        return prof


def _fmt(x: float, digits: int = 4) -> str:
    return f"{x:.{digits}g}"


# --- criteria ---------------------------------------------------------------

def flat_level(bench: Workbench) -> CriterionResult:
    res = CriterionResult(1, "flat Girardeau level")
    expected_offset = {(1, 1): 1.0, (4, 1): 4.0}
    for n_up, n_down in ((1, 1), (2, 1), (4, 1)):
        sector = Sector(BIG_ORB, n_up, n_down)
        target, _ = girardeau_reference(sector)
        e_f = bench.lowest(sector, 1).eigenvalues[0]
        worst = 0.0
        for g in (0.0, 1.0, 5.0, 10.0, 20.0):
            vals = bench.lowest(sector, 20, g=g).eigenvalues
            worst = max(worst, float(np.min(np.abs(vals - target))))
        ok = worst < 1e-8
        detail = f"max |E - {target}| = {worst:.2e}, E-E_F = {_fmt(target - e_f)}"
        offset = expected_offset.get((n_up, n_down))
        if offset is not None:
            ok = ok and abs(target - e_f - offset) < 1e-12 and abs(e_f - fermi_energy(sector)) < 1e-12
        res.add(f"({n_up}up,{n_down}down)", ok, detail)
    return res


def two_body_convergence(bench: Workbench) -> CriterionResult:
    res = CriterionResult(2, "two-body oracle agreement")
    ref = two_body_ground_energy(5.0)
    errors = []
    for n_orb in (8, 12, 16, 21):
        errors.append(float(bench.lowest(Sector(n_orb, 1, 1), 1, g=5.0).eigenvalues[0] - ref))
    above = all(e > 0 for e in errors)
    monotone = all(b < a for a, b in zip(errors, errors[1:]))
    res.add("from above, monotone", above and monotone,
            f"oracle {ref:.6f}, errors " + ", ".join(f"{e:.4f}" for e in errors))
    res.add("error at 21 orbitals", errors[-1] < 0.1 and errors[-1] < errors[0],
            f"{errors[-1]:.4f} < 0.1 and < {errors[0]:.4f}")
    return res


def manifold_degeneracy(bench: Workbench) -> CriterionResult:
    res = CriterionResult(3, "manifold degeneracy")
    sector = Sector(BIG_ORB, 2, 1)
    d = degeneracy(sector)
    spreads, gap = [], None
    for g in (5.0, 10.0, 15.0, 20.0):
        vals = bench.lowest(sector, 20, g=g).eigenvalues
        spreads.append(float(vals[d - 1] - vals[0]))
        gap = float(vals[d] - vals[d - 1])
    res.add("spread decreasing", all(b < a for a, b in zip(spreads, spreads[1:])),
            "spreads " + ", ".join(f"{s:.4g}" for s in spreads))
    res.add("gap at g=20", gap > 3 * spreads[-1], f"gap {gap:.4g} vs 3x spread {3 * spreads[-1]:.4g}")
    return res


def occupation_endpoints(bench: Workbench) -> CriterionResult:
    res = CriterionResult(4, "occupation endpoints")
    sector = Sector(BIG_ORB, 4, 1)
    sol0 = bench.lowest(sector, 20, g=0.0)
    p0 = bench.profile(sol0, sector, EnsembleSpec(0.0, [0])).down[0]
    res.add("g=0 T=0", abs(p0 - 1.0) < 1e-10, f"P_down(0) = {_fmt(p0, 12)}")

    sol = bench.lowest(sector, 20, g=20.0)
    info = detect_manifold(sol, sector, g=20.0)
    cold = bench.profile(sol, sector, EnsembleSpec(0.0, info.members)).down
    res.add("g=20 T=0", 0.75 <= cold[0] <= 0.85,
            f"P_down(0) = {cold[0]:.4f} (ground E = {sol.eigenvalues[0]:.6f}), target [0.75, 0.85]")
    hot = bench.profile(sol, sector, EnsembleSpec(INFINITE, info.members)).down
    dev = np.abs(hot[:5] - 0.2)
    res.add("g=20 T=inf", bool(np.all(dev <= 0.05)),
            "P_down(0..4) = " + ", ".join(f"{p:.3f}" for p in hot[:5]) + ", target 0.2 +- 0.05")

    # diagnostics, not part of pass/fail: spin label and P_down(0) of every manifold member
    s2 = build_s_squared(sector)
    members = []
    for i in info.members:
        psi = sol.eigenvectors[:, i]
        members.append(f"S={total_spin_label(psi, s2)} E={sol.eigenvalues[i]:.4f} "
                       f"P_down(0)={occupations(psi, sector).down[0]:.3f}")
    res.add("diagnostics", True, "manifold members " + ", ".join(members))
    return res


def zeeman_slope(bench: Workbench) -> CriterionResult:
    res = CriterionResult(5, "Zeeman splitting slope")
    sector = Sector(BIG_ORB, 1, 1)
    deltas = np.array([0.001, 0.002, 0.005, 0.01])
    gaps = np.array([np.diff(bench.lowest(sector, 2, g=20.0, delta=d).eigenvalues[:2])[0] for d in deltas])
    slope = float(deltas @ gaps / (deltas @ deltas))
    rel = abs(slope / ZEEMAN_SLOPE - 1.0)
    res.add("slope", rel < 0.05, f"fit {slope:.4f} vs {ZEEMAN_SLOPE:.4f} ({100 * rel:.2f}% off); gaps "
            + ", ".join(f"{x:.5f}" for x in gaps))
    return res


def _commutator_max(a, b) -> float:
    c = (a @ b - b @ a).tocsr()
    return float(np.abs(c.data).max()) if c.nnz else 0.0


def commutator_sectors(max_dim: int = 2000, max_orb: int = 8):
    for n_orb in range(2, max_orb + 1):
        for n_up in range(1, min(n_orb, 4) + 1):
            for n_down in range(1, n_up + 1):
                s = Sector(n_orb, n_up, n_down)
                if s.dim <= max_dim:
                    yield s


def symmetry_protection(bench: Workbench) -> CriterionResult:
    res = CriterionResult(6, "symmetry protection")
    worst, worst_lam, count = 0.0, 0.0, 0
    for sector in commutator_sectors():
        s2 = build_s_squared(sector).to_csr()
        for g in (0.0, 3.0, 20.0):
            worst = max(worst, _commutator_max(bench.hamiltonian(sector, g).to_csr(), s2))
            worst_lam = max(worst_lam, _commutator_max(bench.hamiltonian(sector, g, lam=0.02).to_csr(), s2))
        count += 1
    res.add("[H,S^2] at lambda=0", worst < 1e-10, f"max {worst:.2e} over {count} sectors")
    res.add("[H,S^2] at lambda=0.02", worst_lam < 1e-10, f"max {worst_lam:.2e}")
    sector = Sector(BIG_ORB, 2, 1)
    d = degeneracy(sector)
    s0 = float(np.ptp(bench.lowest(sector, 20, g=20.0).eigenvalues[:d]))
    s1 = float(np.ptp(bench.lowest(sector, 20, g=20.0, lam=0.02).eigenvalues[:d]))
    res.add("manifold spread ratio", 0.5 <= s1 / s0 <= 2.0,
            f"spread {s1:.4g} (lambda=0.02) vs {s0:.4g} (lambda=0), ratio {s1 / s0:.3f}")
    return res


def _zeeman_far_elements(bench: Workbench, sector: Sector, g: float):
    """Largest |<a|Z|b>| over manifold pairs with |S_a - S_b| > 1, and the labels."""
    d = degeneracy(sector)
    sol = bench.lowest(sector, d + 1, g=g)
    info = detect_manifold(sol, sector, g=g)
    s2 = build_s_squared(sector)
    vecs, labels, resid = [], [], 0.0
    h = bench.hamiltonian(sector, g)
    for i in info.members:
        v = sol.eigenvectors[:, i]
        s = total_spin_label(v, s2)
        # remove the residual solver-level admixture of other spin sectors
        v = project_total_spin(v, s2, sector, s)
        v /= np.linalg.norm(v)
        resid = max(resid, float(np.linalg.norm(h.matvec(v) - sol.eigenvalues[i] * v)))
        vecs.append(v)
        labels.append(s)
    vecs = np.array(vecs).T
    z = vecs.T @ build_zeeman(sector, bench.tables(sector.n_orb)).matvec(vecs)
    lab = np.array(labels)
    far = np.abs(lab[:, None] - lab[None, :]) > 1.0 + 1e-9
    near = ~far & ~np.eye(len(lab), dtype=bool)
    far_max = float(np.abs(z[far]).max()) if far.any() else None
    near_max = float(np.abs(z[near]).max()) if near.any() else 0.0
    return far_max, near_max, labels, resid


def selection_rule(bench: Workbench) -> CriterionResult:
    res = CriterionResult(7, "spin-block selection rule")
    for n_up, n_down, supplementary in ((1, 3, False), (2, 2, True)):
        sector = Sector(BIG_ORB, n_up, n_down)
        far_max, near_max, labels, resid = _zeeman_far_elements(bench, sector, 12.0)
        name = f"({n_up}up,{n_down}down)" + (" extra" if supplementary else "")
        if far_max is None:
            res.add(name, True, f"spins {labels}: no pair differs by more than 1 (vacuous); "
                                f"largest allowed element {near_max:.3g}")
        else:
            res.add(name, far_max < 1e-10, f"spins {labels}: max |Z| across |dS|>1 = {far_max:.2e}, "
                                           f"allowed elements up to {near_max:.3g}, residual {resid:.1e}")
    return res


def dynamics_contract(bench: Workbench) -> CriterionResult:
    res = CriterionResult(8, "dynamics contract")
    sector = Sector(DYNAMICS_ORB, 1, 3)
    g = 12.0
    d = degeneracy(sector)
    ref = bench.lowest(sector, d + 1, g=g)
    info = detect_manifold(ref, sector, g=g)
    manifold = ref.eigenvectors[:, info.members]
    times = np.arange(0.0, 200.0 + 1e-9, 0.5)
    s2 = build_s_squared(sector)
    labels = [total_spin_label(manifold[:, i], s2) for i in range(d)]
    start = int(np.argmax(labels))  # maximum total spin member

    still_worst = 0.0
    for i in range(d):
        out = propagate(bench.lowest(sector, d + 1, g=g), manifold[:, i], times)
        p, _ = spin_sector_probabilities(out.states.T, manifold)
        still_worst = max(still_worst, float(np.max(np.ptp(p, axis=1))))
    res.add("delta=0 stationary", still_worst < 1e-8, f"max variation of p_k {still_worst:.2e}")

    quench = eigs_dense(bench.hamiltonian(sector, g, delta=0.05))
    out = propagate(quench, manifold[:, start], times)
    p, leak = spin_sector_probabilities(out.states.T, manifold)
    norms = out.norms()
    drift = float(np.max(np.abs(norms - 1.0)))
    closure = float(np.max(np.abs(p.sum(axis=0) + leak - 1.0)))
    swing = np.ptp(p, axis=1)
    res.add("norm drift", drift < 1e-8, f"{drift:.2e}")
    res.add("sum p + leakage", closure < 1e-8, f"|sum - 1| <= {closure:.2e}, max leakage {leak.max():.2e}")
    res.add("nontrivial mixing", int(np.sum(swing > 0.1)) >= 2,
            f"start S={labels[start]}, swings " + ", ".join(f"{s:.3f}" for s in swing))
    return res


def _full_fock_annihilators(n_orb: int):
    n_modes = 2 * n_orb
    dim = 1 << n_modes
    ops = []
    for p in range(n_modes):
        spin, orb = (Spin.UP, p) if p < n_orb else (Spin.DOWN, p - n_orb)
        a = np.zeros((dim, dim))
        for state in range(dim):
            det = Determinant(state & ((1 << n_orb) - 1), state >> n_orb)
            out = apply_mode_op(det, spin, orb, ModeOp.ANNIHILATE, n_orb)
            if out is not None:
                a[out[0].up_bits | (out[0].down_bits << n_orb), state] = out[1]
        ops.append(a)
    return ops


def property_suites(bench: Workbench) -> CriterionResult:
    res = CriterionResult(9, "property suites")
    exact = True
    for n_orb in range(1, 5):
        ops = _full_fock_annihilators(n_orb)
        eye = np.eye(ops[0].shape[0])
        for p, q in itertools.product(range(len(ops)), repeat=2):
            ap, aq = ops[p], ops[q]
            exact &= np.array_equal(ap @ aq.T + aq.T @ ap, eye if p == q else 0 * eye)
            exact &= not np.any(ap @ aq + aq @ ap)
    res.add("anticommutators", exact, "exact on n_orb 1..4")

    rng = np.random.default_rng(2024)
    sector = Sector(8, 3, 2)
    worst = 0.0
    for _ in range(1000):
        psi = rng.standard_normal(sector.dim)
        psi /= np.linalg.norm(psi)
        prof = bench.profile(psi, sector)
        worst = max(worst, abs(prof.up.sum() - 3), abs(prof.down.sum() - 2))
    res.add("occupation sum rules", worst < 1e-10, f"max deviation {worst:.1e} over 1000 states")

    bad = 0
    for prof in bench.profiles:
        for spin in ("up", "down"):
            c = np.array([cdf(prof, spin, n) for n in range(prof.n_orb)])
            bad += int(np.any(np.diff(c) > 1e-14))
    res.add("CDF monotone", bad == 0, f"{len(bench.profiles)} profiles, {bad} violations")

    mono = True
    for n_up, n_down, orbs in ((1, 1, range(2, 22)), (2, 1, range(3, 15)), (2, 2, range(3, 9))):
        e = [bench.lowest(Sector(n, n_up, n_down), 1, g=5.0).eigenvalues[0] for n in orbs]
        mono &= all(b <= a + 1e-12 for a, b in zip(e, e[1:]))
    res.add("variational monotonicity", mono, "ground energy non-increasing in n_orb")

    worst = 0.0
    for sector, g in ((Sector(9, 2, 2), 5.0), (Sector(12, 2, 1), 12.0), (Sector(8, 3, 1), 3.0)):
        op = bench.hamiltonian(sector, g, delta=0.02)
        worst = max(worst, float(np.abs(eigs_dense(op).eigenvalues[:6] - eigs_lowk(op, 6).eigenvalues).max()))
    res.add("dense vs iterative", worst < 1e-8, f"max {worst:.1e}")

    worst = 0.0
    for sector in (Sector(6, 2, 1), Sector(7, 2, 2), Sector(10, 1, 2)):
        op = bench.hamiltonian(sector, 8.0, delta=0.05)
        psi0 = rng.standard_normal(sector.dim)
        psi0 /= np.linalg.norm(psi0)
        times = np.linspace(0.0, 20.0, 11)
        a = propagate(eigs_dense(op), psi0, times).states
        b = propagate(op, psi0, times).states
        worst = max(worst, float(np.linalg.norm(a - b, axis=1).max()))
    res.add("spectral vs Krylov", worst < 1e-6, f"max distance {worst:.1e}")
    return res


CRITERIA: dict[int, Callable[[Workbench], CriterionResult]] = {
    1: flat_level,
    2: two_body_convergence,
    3: manifold_degeneracy,
    4: occupation_endpoints,
    5: zeeman_slope,
    6: symmetry_protection,
    7: selection_rule,
    8: dynamics_contract,
    9: property_suites,
}


def run_one(number: int, bench: Workbench) -> CriterionResult:
    start = time.perf_counter()
    res = CRITERIA[number](bench)
    res.seconds = time.perf_counter() - start
    return res


def run(numbers=None, bench: Workbench | None = None, report: Callable[[str], None] | None = None):
    bench = bench or Workbench()
    results = []
    for number in numbers or sorted(CRITERIA):
        res = run_one(number, bench)
        if report is not None:
            report(res.line())
        results.append(res)
    return results


def write_csv(results, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["criterion", "check", "status", "detail"])
        for r in results:
            for c in r.checks:
                writer.writerow([r.number, c.name, "pass" if c.passed else "fail", c.detail])
    return path
