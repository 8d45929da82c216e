"""Two-body ground energy against the basis-free reference, as a function of
basis size and coupling."""
import argparse

from fewfermions.fock import Sector
from fewfermions.hamiltonian import ModelParams, build_hamiltonian
from fewfermions.oracle import two_body_ground_energy
from fewfermions.solver import eigs_dense
from fewfermions.sp_basis import SpTables


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--g", type=float, nargs="+", default=[1.0, 5.0, 20.0])
    ap.add_argument("--orbitals", type=int, nargs="+", default=[8, 12, 16, 21, 30])
    args = ap.parse_args()
    print("g,n_orb,E_basis,E_reference,error")
    for g in args.g:
        ref = two_body_ground_energy(g)
        for n_orb in args.orbitals:
            op = build_hamiltonian(Sector(n_orb, 1, 1), ModelParams(g=g), SpTables.build(n_orb))
            e0 = eigs_dense(op, vectors=False).eigenvalues[0]
            print(f"{g:g},{n_orb},{e0:.10f},{ref:.10f},{e0 - ref:.3e}")


if __name__ == "__main__":
    main()
