"""Interface solvers: balancing Neumann-Neumann (BDD) and one-level FETI.

Both run a preconditioned conjugate gradient with full reorthogonalization and
call ``hook(state)`` after initialization (``n = 0``) and after every
iteration.  The state object is updated in place between calls.
"""
import csv
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve
from scipy.linalg.lapack import dpstrf

from .errors import InvalidParameter, NonConvergence
from .substructuring import (InterfaceComm, condensed_rhs, neumann_schur_solve,
                             pseudo_inverse_apply, schur_apply)


@dataclass(eq=False)
class SolverState:
    """Current iterate of an interface solver.

    Attributes
    ----------
    method : {"bdd", "feti"}
    n : int
        Iteration count (0 after initialization).
    u_b : ndarray
        BDD: assembled interface displacement.
    lam : ndarray
        FETI: dual interface traction per connection.
    u_loc : list of ndarray
        Free-dof displacement of each subdomain.
    lam_loc : list of ndarray
        Boundary reaction of each subdomain.
    gap : ndarray
        BDD: traction imbalance; FETI: displacement gap.
    """
    method: str
    n: int = 0
    u_b: np.ndarray = None
    lam: np.ndarray = None
    u_loc: list = field(default_factory=list)
    lam_loc: list = field(default_factory=list)
    gap: np.ndarray = None
    gap0_norm: float = 0.0
    r: float = 1.0
    history: list = field(default_factory=list)
    converged: bool = False
    balance: float = 0.0       # coarse constraint residual of the current residual

    def record(self, t0):
        self.history.append((self.n, self.r, time.perf_counter() - t0))


def residual_norm(state):
    """Euclidean norm of the current gap relative to the initial one."""
    if state.gap0_norm == 0.0:
        return 0.0
    return float(np.linalg.norm(state.gap) / state.gap0_norm)


class CoarseSolver:
    """Solver for a small symmetric semi-definite Gram matrix.

    Pivoted Cholesky; columns beyond the numerical rank are dropped (their
    coefficients are set to zero), with a warning.
    """

    def __init__(self, M, rtol=1e-12):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        k = M.shape[0] if M.size else 0
        self.k = k
        if k == 0:
            self.keep = np.zeros(0, dtype=int)
            return
        M = 0.5 * (M + M.T)
        tol = rtol * max(np.max(np.diag(M)), np.finfo(float).tiny)
        c, piv, rank, info = dpstrf(M, tol=tol, lower=0)
        if info < 0:
            raise InvalidParameter("invalid coarse matrix")
        piv = piv - 1
        if rank < k:
            warnings.warn(f"coarse problem: dropped {k - rank} rank-deficient column(s)",
                          RuntimeWarning, stacklevel=2)
        self.keep = piv[:rank]
        self.U = np.triu(c[:rank, :rank])

    def solve(self, rhs):
        x = np.zeros(self.k)
        if len(self.keep):
            x[self.keep] = cho_solve((self.U, False), rhs[self.keep])
        return x


def _cap(ops, max_iter):
    return max_iter if max_iter is not None else max(3 * ops.n_primal, 1)


def _finish(state, tol, max_iter, t0):
    state.r = residual_norm(state)
    state.record(t0)
    state.converged = state.r <= tol


# ------------------------------------------------------------------- BDD

def bdd_solve(subs, ops, tol=1e-6, hook=None, max_iter=None, comm=None):
    """Balancing domain decomposition on the assembled Schur system.

    Solves ``sum_s A S A^T u_b = sum_s A b`` by PCG preconditioned with
    ``P (sum_s As S^+ As^T)``, where ``As`` is the multiplicity-scaled
    assembly and ``P`` the balancing projection onto the complement of the
    coarse space ``[As R_b]``.
    """
    if not tol > 0:
        raise InvalidParameter("tol must be positive")
    comm = comm or InterfaceComm(ops)
    t0 = time.perf_counter()
    max_iter = _cap(ops, max_iter)
    b_loc = [condensed_rhs(sd) for sd in subs]
    bg = comm.assemble_primal(b_loc)

    def apply_global(x):
        y_loc = [schur_apply(sd, ops.A[s].T @ x) for s, sd in enumerate(subs)]
        return comm.assemble_primal(y_loc), y_loc

    cols = [ops.A_scaled[s] @ sd.R_b for s, sd in enumerate(subs) if sd.n_modes]
    Z = np.hstack(cols) if cols else np.zeros((ops.n_primal, 0))
    SZ = np.column_stack([apply_global(Z[:, j])[0] for j in range(Z.shape[1])]) \
        if Z.shape[1] else np.zeros_like(Z)
    coarse = CoarseSolver(Z.T @ SZ)

    def project(x):
        # I - Z (Z^T Sg Z)^-1 Z^T Sg
        return x - Z @ coarse.solve(SZ.T @ x) if Z.shape[1] else x

    u = Z @ coarse.solve(Z.T @ bg) if Z.shape[1] else np.zeros(ops.n_primal)
    _, y_loc = apply_global(u)
    lam_loc = [y - b for y, b in zip(y_loc, b_loc)]
    gap = comm.assemble_primal(lam_loc)
    state = SolverState("bdd", 0, u_b=u, lam_loc=lam_loc, gap=gap,
                        gap0_norm=float(np.linalg.norm(gap)))
    state.u_loc = _bdd_local_fields(subs, ops, state)
    state.balance = _balance(Z, gap)
    _finish(state, tol, max_iter, t0)
    if hook:
        hook(state)
    scale = float(np.linalg.norm(gap))
    P, Q = [], []
    while not state.converged:
        if state.n >= max_iter:
            raise NonConvergence(f"BDD did not converge in {max_iter} iterations",
                                 state.history, state)
        r = -state.gap
        z_loc = [neumann_schur_solve(sd, ops.A_scaled[s].T @ r, scale=scale)
                 for s, sd in enumerate(subs)]
        z = project(comm.assemble_primal(z_loc, scaled=True))
        p = z.copy()
        for pk, qk in zip(P, Q):
            p -= (qk @ z) / (pk @ qk) * pk
        q, yq = apply_global(p)
        pq = comm.dot(p, q)
        if pq <= 0:
            raise NonConvergence("BDD breakdown: non-positive curvature",
                                 state.history, state)
        alpha = comm.dot(p, r) / pq
        P.append(p)
        Q.append(q)
        state.u_b = state.u_b + alpha * p
        state.lam_loc = [l + alpha * y for l, y in zip(state.lam_loc, yq)]
        state.gap = comm.assemble_primal(state.lam_loc)
        state.u_loc = _bdd_local_fields(subs, ops, state)
        state.balance = _balance(Z, state.gap)
        state.n += 1
        _finish(state, tol, max_iter, t0)
        if hook:
            hook(state)
    return state


def _balance(Z, gap):
    if Z.shape[1] == 0:
        return 0.0
    return float(np.linalg.norm(Z.T @ gap))


def _bdd_local_fields(subs, ops, state):
    out = []
    for s, sd in enumerate(subs):
        ub = ops.A[s].T @ state.u_b
        x = np.zeros(sd.n_free)
        x[sd.idx_b] = ub
        if len(sd.idx_i):
            x[sd.idx_i] = sd.lu_ii.solve(sd.f_i - sd.K_ib @ ub)
        out.append(x)
    return out


# ------------------------------------------------------------------ FETI

def feti_solve(subs, ops, tol=1e-6, hook=None, max_iter=None, comm=None):
    """One-level FETI with the Dirichlet preconditioner.

    The dual unknown lives on the redundant pairwise connections.  The
    natural coarse grid ``G = [B R_b]`` enforces solvability of every local
    Neumann problem; the gap reported at each iteration is the projected
    one, which equals the gap of ``u = K^+ (f + t^T B^T lam) + R alpha``.
    """
    if not tol > 0:
        raise InvalidParameter("tol must be positive")
    comm = comm or InterfaceComm(ops)
    t0 = time.perf_counter()
    max_iter = _cap(ops, max_iter)
    nD = ops.n_dual

    cols, e, owners = [], [], []
    for s, sd in enumerate(subs):
        if sd.n_modes:
            cols.append(ops.B[s] @ sd.R_b)
            e.append(sd.R.T @ sd.f)
            owners.append(s)
    G = np.hstack(cols) if cols else np.zeros((nD, 0))
    e = np.concatenate(e) if e else np.zeros(0)
    coarse = CoarseSolver(G.T @ G)
    offsets = np.cumsum([0] + [subs[s].n_modes for s in owners])

    def project(x):
        return x - G @ coarse.solve(G.T @ x) if G.shape[1] else x

    def local_neumann(s, lam, with_load):
        sd = subs[s]
        rhs = sd.trace.T @ (ops.B[s].T @ lam)
        if with_load:
            rhs = rhs + sd.f
        return pseudo_inverse_apply(sd, rhs, scale=scale)

    lam = -G @ coarse.solve(e) if G.shape[1] else np.zeros(nD)
    scale = max(float(np.linalg.norm(np.concatenate([sd.f for sd in subs]))), 1e-300)
    v = [local_neumann(s, lam, True) for s in range(len(subs))]
    state = SolverState("feti", 0, lam=lam)

    def refresh():
        gap_v = comm.assemble_dual([sd.trace @ v[s] for s, sd in enumerate(subs)])
        alpha = -coarse.solve(G.T @ gap_v) if G.shape[1] else np.zeros(0)
        u_loc = [x.copy() for x in v]
        for j, s in enumerate(owners):
            u_loc[s] += subs[s].R @ alpha[offsets[j]:offsets[j + 1]]
        state.u_loc = u_loc
        state.lam_loc = [ops.B[s].T @ state.lam for s in range(len(subs))]
        state.gap = comm.assemble_dual([sd.trace @ u_loc[s] for s, sd in enumerate(subs)])

    refresh()
    state.gap0_norm = float(np.linalg.norm(state.gap))
    state.balance = float(np.linalg.norm(G.T @ state.lam + e)) if G.shape[1] else 0.0
    _finish(state, tol, max_iter, t0)
    if hook:
        hook(state)
    P, Q = [], []
    while not state.converged:
        if state.n >= max_iter:
            raise NonConvergence(f"FETI did not converge in {max_iter} iterations",
                                 state.history, state)
        r = -state.gap
        z = np.zeros(nD)
        for s, sd in enumerate(subs):
            z += ops.B_scaled[s] @ schur_apply(sd, ops.B_scaled[s].T @ r)
        y = project(z)
        p = y.copy()
        for pk, qk in zip(P, Q):
            p -= (qk @ y) / (pk @ qk) * pk
        w = [local_neumann(s, p, False) for s in range(len(subs))]
        q = project(comm.assemble_dual([sd.trace @ w[s] for s, sd in enumerate(subs)]))
        pq = comm.dot(p, q)
        if pq <= 0:
            raise NonConvergence("FETI breakdown: non-positive curvature",
                                 state.history, state)
        alpha = comm.dot(p, r) / pq
        P.append(p)
        Q.append(q)
        state.lam = state.lam + alpha * p
        v = [x + alpha * dx for x, dx in zip(v, w)]
        refresh()
        state.balance = float(np.linalg.norm(G.T @ state.lam + e)) if G.shape[1] else 0.0
        state.n += 1
        _finish(state, tol, max_iter, t0)
        if hook:
            hook(state)
    return state


def solve(method, subs, ops, **kwargs):
    method = method.lower()
    if method == "bdd":
        return bdd_solve(subs, ops, **kwargs)
    if method == "feti":
        return feti_solve(subs, ops, **kwargs)
    raise InvalidParameter(f"unknown method {method!r}")


def write_history_csv(state, path):
    """Residual history as CSV with columns method, n, r, time."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "n", "r", "time"])
        for n, r, t in state.history:
            w.writerow([state.method, n, f"{r:.12e}", f"{t:.6f}"])
    return path
