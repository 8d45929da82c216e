"""Config-driven dataset generation: spectra, occupations, CDFs and quench dynamics."""
from __future__ import annotations

import logging
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, SolverConfig, temperature_label
from .fock import Sector
from .hamiltonian import ModelParams, build_hamiltonian
from .observables import (LOWEST_MANIFOLD, EnsembleSpec, ManifoldWarning, cdf, degeneracy, detect_manifold,
                          spin_sector_probabilities, thermal_profile)
from .solver import DENSE_THRESHOLD, EigenSolution, eigs_dense, eigs_lowk, propagate
from .sp_basis import SpTables

log = logging.getLogger(__name__)


def fmt(x) -> str:
    """Round-trip float formatting used in every CSV."""
    return format(float(x), ".17g")


class CsvOutput:
    """Rows go to ``<name>.partial.csv``; the file is renamed only on success,
    so an interrupted run leaves a clearly marked partial file."""

    def __init__(self, out_dir: Path, name: str, header: list[str]):
        self.final = out_dir / f"{name}.csv"
        self.partial = out_dir / f"{name}.partial.csv"
        if self.final.exists():
            self.final.unlink()
        self._fh = open(self.partial, "w", encoding="utf-8", newline="\n")
        self._fh.write(",".join(header) + "\n")

    def row(self, values) -> None:
        self._fh.write(",".join(values) + "\n")

    def finish(self) -> Path:
        self._fh.close()
        os.replace(self.partial, self.final)
        return self.final

    def abort(self) -> Path:
        self._fh.close()
        return self.partial


@dataclass
class RunRecord:
    """What the manifest needs besides the config."""

    basis_dim: int
    fermi_energy: float | None = None
    methods: set = field(default_factory=set)
    outputs: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def choose_method(solver: SolverConfig, dim: int) -> str:
    if solver.method == "dense":
        if dim > DENSE_THRESHOLD:
            raise ConfigError("solver.method", f"dense solver limited to dimension {DENSE_THRESHOLD}, "
                                               f"sector has {dim}")
        return "dense"
    if solver.method == "lanczos" and dim > 1:
        return "lanczos"
    return "dense" if dim <= DENSE_THRESHOLD else "lanczos"


def lowest_states(op, solver: SolverConfig, k: int) -> tuple[EigenSolution, str]:
    method = choose_method(solver, op.dim)
    if method == "dense":
        sol = eigs_dense(op)
        k = min(k, op.dim)
        return EigenSolution(sol.eigenvalues[:k], sol.eigenvectors[:, :k], sol.residual_norms[:k], sol.tol), method
    k = min(k, op.dim - 1)
    return eigs_lowk(op, k, tol=solver.tol, block_size=solver.block_size,
                     max_matvecs=solver.max_matvecs), method


class Experiment:
    def __init__(self, cfg: ExperimentConfig, out_dir: Path):
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.sector: Sector = cfg.sector
        self.tables = SpTables.build(cfg.n_orb)
        self.record = RunRecord(basis_dim=self.sector.dim)
        self._open: list[CsvOutput] = []

    def hamiltonian(self, g: float, delta: float | None = None):
        delta = self.cfg.delta if delta is None else delta
        return build_hamiltonian(self.sector, ModelParams(g, delta, self.cfg.lam), self.tables)

    def solve(self, g: float, k: int, delta: float | None = None) -> EigenSolution:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            sol, method = lowest_states(self.hamiltonian(g, delta), self.cfg.solver, k)
        self.record.methods.add(method)
        self.record.warnings.extend(str(w.message) for w in caught)
        return sol

    def fermi_energy(self) -> float:
        # noninteracting ground energy with the same one-body terms
        if self.record.fermi_energy is None:
            self.record.fermi_energy = float(self.solve(0.0, 1).eigenvalues[0])
        return self.record.fermi_energy

    def csv(self, name: str, header: list[str]) -> CsvOutput:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        out = CsvOutput(self.out_dir, name, header)
        self._open.append(out)
        return out

    def finish(self, out: CsvOutput) -> None:
        self._open.remove(out)
        self.record.outputs.append(out.finish().name)

    def abort_all(self) -> None:
        for out in self._open:
            self.record.outputs.append(out.abort().name)
        self._open.clear()

    def _manifold_k(self) -> int:
        ens = self.cfg.ensemble
        need = degeneracy(self.sector) + 1
        if ens.states != LOWEST_MANIFOLD:
            need = max(ens.states) + 1
        return max(self.cfg.solver.k, need)

    def _profiles(self, g: float):
        sol = self.solve(g, self._manifold_k())
        ens = self.cfg.ensemble
        if ens.states != LOWEST_MANIFOLD and max(ens.states) >= len(sol):
            raise ConfigError("ensemble.states", f"index {max(ens.states)} exceeds the {len(sol)} computed states")
        states = ens.states
        if states == LOWEST_MANIFOLD:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", ManifoldWarning)
                states = tuple(int(i) for i in detect_manifold(sol, self.sector, g=g).members)
            self.record.warnings.extend(str(w.message) for w in caught)
        for t in ens.temperatures:
            yield t, thermal_profile(sol, self.sector, EnsembleSpec(t, states))

    # --- experiment kinds -----------------------------------------------------

    def run_spectrum(self) -> None:
        e_f = self.fermi_energy()
        out = self.csv("spectrum", ["g", "level_index", "energy_hbar_omega",
                                    "energy_minus_EF_hbar_omega", "residual_hbar_omega"])
        for g in self.cfg.g_values:
            sol = self.solve(g, self.cfg.solver.k)
            for i, (e, r) in enumerate(zip(sol.eigenvalues, sol.residual_norms)):
                out.row([fmt(g), str(i), fmt(e), fmt(e - e_f), fmt(r)])
            log.info("spectrum g=%s done", g)
        self.finish(out)

    def run_occupations(self) -> None:
        out = self.csv("occupations", ["g", "temperature_kBT_over_hbar_omega", "spin", "orbital", "probability"])
        for g in self.cfg.g_values:
            for t, prof in self._profiles(g):
                for spin in ("up", "down"):
                    for n, p in enumerate(prof[spin]):
                        out.row([fmt(g), temperature_label(t), spin, str(n), fmt(p)])
            log.info("occupations g=%s done", g)
        self.finish(out)

    def run_cdf(self) -> None:
        spin = self.cfg.ensemble.cdf_spin
        self.record.extra["cdf_spin"] = spin
        out = self.csv("cdf", ["g", "temperature_kBT_over_hbar_omega", "cutoff_n", "value"])
        for g in self.cfg.g_values:
            for t, prof in self._profiles(g):
                for n in range(self.sector.n_orb):
                    out.row([fmt(g), temperature_label(t), str(n), fmt(cdf(prof, spin, n))])
            log.info("cdf g=%s done", g)
        self.finish(out)

    def run_dynamics(self) -> None:
        dyn = self.cfg.dynamics
        d = degeneracy(self.sector)
        if dyn.initial_state >= d:
            raise ConfigError("dynamics.initial_state", f"manifold has {d} states (indices 0..{d - 1})")
        # manifold of the unperturbed Hamiltonian at the quench coupling
        ref = self.solve(dyn.g, max(self.cfg.solver.k, d + 1), delta=0.0)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ManifoldWarning)
            info = detect_manifold(ref, self.sector, g=dyn.g)
        self.record.warnings.extend(str(w.message) for w in caught)
        manifold = ref.eigenvectors[:, info.members]
        psi0 = manifold[:, dyn.initial_state]
        h_after = self.hamiltonian(dyn.g, dyn.delta_after)
        route = dyn.propagator
        if route == "auto":
            route = "spectral" if h_after.dim <= DENSE_THRESHOLD else "krylov"
        if route == "spectral":
            if h_after.dim > DENSE_THRESHOLD:
                raise ConfigError("dynamics.propagator", f"spectral route limited to dimension {DENSE_THRESHOLD}")
            result = propagate(eigs_dense(h_after), psi0, dyn.times)
        else:
            result = propagate(h_after, psi0, dyn.times, tol=dyn.tol)
        self.record.methods.add(route)
        self.record.extra["manifold_energies"] = [float(e) for e in ref.eigenvalues[info.members]]
        header = ["time_inverse_omega"] + [f"p_{k + 1}" for k in range(d)] + ["leakage", "norm"]
        out = self.csv("dynamics", header)
        states = result.states
        probs, leakage = spin_sector_probabilities(states.T, manifold)
        norms = np.linalg.norm(states, axis=1)
        for t, p, leak, nrm in zip(result.times, probs.T, leakage, norms):
            out.row([fmt(t)] + [fmt(x) for x in p] + [fmt(leak), fmt(nrm)])
        self.finish(out)

    def run(self) -> RunRecord:
        runner = {"spectrum": self.run_spectrum, "occupations": self.run_occupations,
                  "cdf": self.run_cdf, "dynamics": self.run_dynamics}[self.cfg.kind]
        try:
            runner()
        except BaseException:
            self.abort_all()
            raise
        return self.record
