"""Eigensolvers and unitary time propagation for :class:`SparseOperator`."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .hamiltonian import SparseOperator

log = logging.getLogger(__name__)

DENSE_THRESHOLD = 4000


class DenseTooLargeError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, residuals=None, eigenvalues=None):
        super().__init__(message)
        self.residuals = residuals
        self.eigenvalues = eigenvalues


class PropagationError(RuntimeError):
    def __init__(self, message, achieved_time=None):
        super().__init__(message)
        self.achieved_time = achieved_time


@dataclass(frozen=True)
class EigenSolution:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None
    residual_norms: np.ndarray
    tol: float

    def __len__(self):
        return self.eigenvalues.size


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the first non-negligible component of every column positive."""
    v = np.array(vectors, copy=True)
    scale = np.abs(v).max(axis=0)
    for j in range(v.shape[1]):
        idx = np.flatnonzero(np.abs(v[:, j]) > 1e-8 * scale[j])
        if idx.size and v[idx[0], j] < 0:
            v[:, j] *= -1
    return v


def residual_norms(op: SparseOperator, values: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    return np.linalg.norm(op.matvec(vectors) - vectors * values, axis=0)


def eigs_dense(op: SparseOperator, vectors: bool = True) -> EigenSolution:
    if op.dim > DENSE_THRESHOLD:
        raise DenseTooLargeError(
            f"dimension {op.dim} exceeds the dense threshold {DENSE_THRESHOLD}; use eigs_lowk")
    a = op.toarray()
    if not vectors:
        vals = sla.eigh(a, eigvals_only=True)
        return EigenSolution(vals, None, np.full(vals.size, np.nan), np.nan)
    vals, vecs = sla.eigh(a)
    vecs = fix_signs(vecs)
    res = residual_norms(op, vals, vecs)
    return EigenSolution(vals, vecs, res, float(res.max()))


def _orthogonalize(z: np.ndarray, bases, rng) -> np.ndarray:
    """Block classical Gram-Schmidt (two passes) plus QR; refills lost columns randomly."""
    for _ in range(2):
        for q in bases:
            if q.shape[1]:
                z -= q @ (q.T @ z)
    norms0 = np.linalg.norm(z, axis=0)
    q, r = np.linalg.qr(z)
    bad = np.abs(np.diag(r)) < 1e-10 * max(1.0, norms0.max(initial=0.0))
    if bad.any():
        fresh = rng.standard_normal((z.shape[0], int(bad.sum())))
        z = np.concatenate([q[:, ~bad], fresh], axis=1)
        for _ in range(2):
            for b in bases:
                if b.shape[1]:
                    z -= b @ (b.T @ z)
        q, _ = np.linalg.qr(z)
    return q


def _diagonal_lowk(op: SparseOperator, k: int) -> EigenSolution:
    d = op.diagonal
    order = np.argsort(d, kind="stable")[:k]
    vecs = np.zeros((op.dim, k))
    vecs[order, np.arange(k)] = 1.0
    return EigenSolution(d[order], vecs, np.zeros(k), 0.0)


def eigs_lowk(op: SparseOperator, k: int, tol: float = 1e-9, block_size: int = 4,
              max_basis: int | None = None, max_matvecs: int = 50_000,
              seed: int = 12345) -> EigenSolution:
    """Lowest ``k`` eigenpairs by restarted block Lanczos.

    Full reorthogonalization against the basis and the locked vectors.
    Ritz pairs are locked bottom-up once their residual drops below ``tol``
    and deflated from further iterations; a random block of width
    ``block_size`` captures degenerate copies that a single Krylov vector
    would miss.
    """
    n = op.dim
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < dimension ({n}), got k={k}")
    if op.is_diagonal:
        return _diagonal_lowk(op, k)
    b = max(1, min(block_size, n - k))
    m = max_basis or max(60, 2 * k + 2 * b)
    m = min(m, n)
    rng = np.random.default_rng(seed)

    locked = np.zeros((n, 0))
    locked_vals: list[float] = []
    locked_res: list[float] = []
    v = _orthogonalize(rng.standard_normal((n, b)), [], rng)
    w = op.matvec(v)
    n_mv = b
    z_next = w
    best_res = None
    while True:
        # grow the block Krylov basis
        while v.shape[1] < m and locked.shape[1] + v.shape[1] < n:
            nb = min(b, m - v.shape[1], n - locked.shape[1] - v.shape[1])
            z = _orthogonalize(z_next[:, -nb:].copy(), [locked, v], rng)
            hz = op.matvec(z)
            n_mv += nb
            v = np.concatenate([v, z], axis=1)
            w = np.concatenate([w, hz], axis=1)
            z_next = hz
        t = v.T @ w
        t = 0.5 * (t + t.T)
        theta, s = sla.eigh(t)
        need = k - locked.shape[1]
        q = min(v.shape[1] - 1, max(need + b, 1)) if v.shape[1] > 1 else 1
        y = v @ s[:, :q]
        hy = w @ s[:, :q]
        r = hy - y * theta[:q]
        res = np.linalg.norm(r, axis=0)
        best_res = res[:need]
        n_conv = 0
        while n_conv < min(need, q) and res[n_conv] < tol:
            n_conv += 1
        if n_conv:
            locked = np.concatenate([locked, y[:, :n_conv]], axis=1)
            locked_vals.extend(theta[:n_conv])
            locked_res.extend(res[:n_conv])
        if locked.shape[1] >= k:
            break
        if n_mv >= max_matvecs:
            raise ConvergenceError(
                f"eigs_lowk: {locked.shape[1]}/{k} pairs converged after {n_mv} matvecs",
                residuals=np.concatenate([locked_res, best_res[n_conv:]]),
                eigenvalues=np.concatenate([locked_vals, theta[n_conv:need]]))
        if locked.shape[1] + q - n_conv >= n:
            # basis exhausts the space: Rayleigh-Ritz is exact
            rest = need - n_conv
            locked = np.concatenate([locked, y[:, n_conv:n_conv + rest]], axis=1)
            locked_vals.extend(theta[n_conv:n_conv + rest])
            locked_res.extend(res[n_conv:n_conv + rest])
            break
        # thick restart: keep unconverged Ritz vectors, continue from their residuals
        v = y[:, n_conv:q]
        w = hy[:, n_conv:q]
        z_next = r[:, n_conv:n_conv + b]
        if z_next.shape[1] < b:
            z_next = np.concatenate([z_next, rng.standard_normal((n, b - z_next.shape[1]))], axis=1)
    log.debug("eigs_lowk: k=%d dim=%d matvecs=%d", k, n, n_mv)
    vals = np.asarray(locked_vals)
    order = np.argsort(vals, kind="stable")
    vecs = fix_signs(locked[:, order])
    vals = vals[order]
    res = residual_norms(op, vals, vecs)
    return EigenSolution(vals, vecs, res, float(tol))


def eigs(op: SparseOperator, k: int | None = None, tol: float = 1e-9, **kwargs) -> EigenSolution:
    """Dense below the threshold (truncated to ``k``), iterative above."""
    if op.dim <= DENSE_THRESHOLD:
        sol = eigs_dense(op)
        if k is None or k >= sol.eigenvalues.size:
            return sol
        return EigenSolution(sol.eigenvalues[:k], sol.eigenvectors[:, :k], sol.residual_norms[:k], sol.tol)
    if k is None:
        raise DenseTooLargeError("full spectrum requested above the dense threshold")
    return eigs_lowk(op, k, tol=tol, **kwargs)


@dataclass(frozen=True)
class PropagationResult:
    """States at ``times``; rows of ``coefficients`` are expansion coefficients
    in ``basis`` columns, or the state vectors themselves when ``basis`` is None."""

    times: np.ndarray
    coefficients: np.ndarray
    basis: np.ndarray | None = None

    def state(self, i: int) -> np.ndarray:
        c = self.coefficients[i]
        return c if self.basis is None else self.basis @ c

    @property
    def states(self) -> np.ndarray:
        if self.basis is None:
            return self.coefficients
        return self.coefficients @ self.basis.T

    def norms(self) -> np.ndarray:
        # the basis is orthonormal, so coefficient norms equal state norms
        return np.linalg.norm(self.coefficients, axis=1)


def _check_initial(psi0: np.ndarray, times: np.ndarray) -> None:
    norm = np.linalg.norm(psi0)
    if abs(norm - 1.0) > 1e-10:
        raise ValueError(f"psi0 must be normalized, got norm {norm!r}")
    if not np.all(np.isfinite(times)):
        raise ValueError("times must be finite")


def propagate(source: EigenSolution | SparseOperator, psi0: np.ndarray, times,
              *, tol: float = 1e-10, krylov_dim: int = 30) -> PropagationResult:
    """psi(t) = exp(-i H t) psi0.

    With an :class:`EigenSolution` the evolution is spectral and exact on
    the span of its eigenvectors (psi0 must lie inside it).  With a
    :class:`SparseOperator` it uses adaptive Krylov steps.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    _check_initial(psi0, times)
    if isinstance(source, EigenSolution):
        return _propagate_spectral(source, psi0, times)
    return _propagate_krylov(source, psi0, times, tol, krylov_dim)


def _propagate_spectral(eig: EigenSolution, psi0, times) -> PropagationResult:
    if eig.eigenvectors is None:
        raise ValueError("spectral propagation needs eigenvectors")
    basis = eig.eigenvectors
    c0 = basis.T @ psi0
    missing = 1.0 - np.vdot(c0, c0).real
    if missing > 1e-10:
        raise ValueError(f"psi0 has weight {missing:.3g} outside the supplied eigenbasis")
    phases = np.exp(-1j * np.outer(times, eig.eigenvalues))
    coeffs = phases * c0
    coeffs[times == 0.0] = c0
    return PropagationResult(times, coeffs, basis)


def _krylov_step(op: SparseOperator, psi: np.ndarray, tau_max: float, tol: float, m: int):
    """One adaptive step; returns (new_state, step_taken)."""
    beta0 = np.linalg.norm(psi)
    vs = [psi / beta0]
    alpha, beta = [], []
    breakdown = False
    for j in range(m):
        w = op.matvec(vs[j])
        a = np.vdot(vs[j], w).real
        w = w - a * vs[j] - (beta[-1] * vs[j - 1] if j else 0.0)
        # full reorthogonalization keeps the small basis clean
        basis = np.array(vs)
        w = w - basis.T @ (basis.conj() @ w)
        alpha.append(a)
        bnext = np.linalg.norm(w)
        if bnext < 1e-14 * max(1.0, abs(a)):
            breakdown = True
            break
        beta.append(bnext)
        vs.append(w / bnext)
    size = len(alpha)
    ev, evec = sla.eigh_tridiagonal(np.array(alpha), np.array(beta[:size - 1]))
    basis = np.array(vs[:size]).T
    tau = tau_max
    while True:
        coef = evec @ (np.exp(-1j * ev * tau) * evec[0].conj())
        if breakdown:
            break
        err = beta[size - 1] * abs(coef[-1])
        if err <= tol:
            break
        tau *= 0.5
        if tau < 1e-12:
            raise PropagationError("Krylov step size underflow")
    return beta0 * (basis @ coef), tau


def _propagate_krylov(op: SparseOperator, psi0, times, tol, m) -> PropagationResult:
    order = np.argsort(times, kind="stable")
    out = np.empty((times.size, psi0.size), dtype=complex)
    psi = psi0.copy()
    t_now = 0.0
    if np.any(times < 0):
        raise ValueError("Krylov propagation supports non-negative times only")
    step_hint = None
    m = min(m, op.dim)
    for idx in order:
        target = times[idx]
        while t_now < target:
            remaining = target - t_now
            trial = remaining if step_hint is None else min(remaining, 2.0 * step_hint)
            try:
                psi, taken = _krylov_step(op, psi, trial, tol, m)
            except PropagationError as exc:
                raise PropagationError(str(exc), achieved_time=t_now) from exc
            step_hint = taken
            t_now = target if taken >= remaining else t_now + taken
        out[idx] = psi if target != 0.0 else psi0
    return PropagationResult(times, out, None)
