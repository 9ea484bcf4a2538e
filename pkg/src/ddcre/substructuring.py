"""Per-subdomain algebra and interface assembly operators.

Local dofs of subdomain ``s`` follow its sorted global node ids (``2 * k + c``
for the ``k``-th local node).  Dirichlet dofs are eliminated first; the
remaining "free" dofs split into boundary dofs (nodes shared with another
subdomain) and interior dofs.  Boundary dofs keep the local order and are
labelled by the key ``(global node, component)``.

Sign convention: the interface reaction ``lam`` acting on a subdomain enters
``K u = f + t^T lam``, so ``lam = S u_b - b`` at equilibrium.
"""
import csv
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import splu

from .elasticity import (assemble_matrix, element_body_loads, element_dofs,
                         element_stiffnesses, neumann_edge_loads)
from .errors import (AssemblyBug, FredholmViolation, InvalidPartition,
                     RankDeficiency)


class _Factor:
    """Sparse LU with an empty-matrix fallback."""

    def __init__(self, M):
        self.n = M.shape[0]
        self.lu = splu(M.tocsc()) if self.n else None

    def solve(self, rhs):
        if self.n == 0:
            return np.zeros_like(rhs)
        return self.lu.solve(rhs)


@dataclass(eq=False)
class Subdomain:
    sid: int
    elements: np.ndarray       # global triangle ids
    nodes: np.ndarray          # sorted global node ids
    local_tris: np.ndarray     # triangles in local node numbering
    coords: np.ndarray         # (n_nodes, 2)
    K_full: csr_matrix         # all local dofs
    f_full: np.ndarray         # body + Neumann loads, all local dofs
    dirichlet: np.ndarray      # local dof ids with imposed values
    dirichlet_values: np.ndarray
    free: np.ndarray           # local dof ids kept after elimination
    K: csr_matrix              # free x free
    f: np.ndarray              # free rhs with Dirichlet lift
    idx_i: np.ndarray          # interior positions within free
    idx_b: np.ndarray          # boundary positions within free
    boundary_keys: list = field(default_factory=list)

    @property
    def n_free(self):
        return len(self.free)

    @property
    def n_b(self):
        return len(self.idx_b)

    @cached_property
    def K_ii(self):
        return self.K[self.idx_i][:, self.idx_i]

    @cached_property
    def K_ib(self):
        return self.K[self.idx_i][:, self.idx_b]

    @cached_property
    def K_bb(self):
        return self.K[self.idx_b][:, self.idx_b]

    @cached_property
    def lu_ii(self):
        return _Factor(self.K_ii)

    @cached_property
    def f_i(self):
        return self.f[self.idx_i]

    @cached_property
    def f_b(self):
        return self.f[self.idx_b]

    @cached_property
    def R(self):
        return rigid_body_modes(self)

    @property
    def R_b(self):
        return self.R[self.idx_b]

    @property
    def n_modes(self):
        return self.R.shape[1]

    @cached_property
    def trace(self):
        return trace_operator(self)

    @cached_property
    def _pinv(self):
        return _PseudoInverse(self.K, self.R)

    def full_local(self, x_free):
        """Expand a free-dof vector onto all local dofs (Dirichlet values set)."""
        u = np.zeros(2 * len(self.nodes))
        u[self.dirichlet] = self.dirichlet_values
        u[self.free] = x_free
        return u

    def assemble_free(self, x_i, x_b):
        x = np.zeros(self.n_free)
        x[self.idx_i] = x_i
        x[self.idx_b] = x_b
        return x

    @cached_property
    def key_position(self):
        return {k: j for j, k in enumerate(self.boundary_keys)}


def build_subdomains(mesh, partition, hooke, loads):
    """Assemble the local systems of every subdomain of ``partition``."""
    Ke_all = element_stiffnesses(mesh.coords, hooke)
    fe_all = element_body_loads(mesh.coords, mesh.areas, loads.body_force)
    nedges, _, nforces = neumann_edge_loads(mesh, loads)
    # owner of each Neumann edge = its single adjacent triangle
    edge_id = {tuple(e): k for k, e in enumerate(mesh.edges.tolist())}
    nowner = np.array([partition.elem_owner[mesh.edge_tris[edge_id[tuple(sorted(e))], 0]]
                       for e in nedges.tolist()], dtype=int)
    dnodes = set(mesh.dirichlet_nodes.tolist())
    mult = partition.multiplicity

    subs = []
    for s in range(partition.nsd):
        elems = partition.elements(s)
        if len(elems) == 0:
            raise InvalidPartition(f"subdomain {s} is empty")
        nodes = np.unique(mesh.triangles[elems])
        ltris = np.searchsorted(nodes, mesh.triangles[elems])
        nloc = 2 * len(nodes)
        ldofs = element_dofs(ltris)
        K_full = assemble_matrix(nloc, ldofs, Ke_all[elems])
        f_full = np.zeros(nloc)
        np.add.at(f_full, ldofs, fe_all[elems])
        sel = nowner == s
        if np.any(sel):
            le = np.searchsorted(nodes, nedges[sel])
            np.add.at(f_full, np.stack([2 * le, 2 * le + 1], axis=2), nforces[sel])

        dloc = np.array([k for k, n in enumerate(nodes) if int(n) in dnodes], dtype=int)
        ddofs = np.stack([2 * dloc, 2 * dloc + 1], axis=1).ravel()
        dvals = (loads.dirichlet_at(mesh.nodes[nodes[dloc]]).ravel()
                 if len(dloc) else np.zeros(0))
        mask = np.ones(nloc, dtype=bool)
        mask[ddofs] = False
        free = np.flatnonzero(mask)
        K = K_full[free][:, free].tocsr()
        f = f_full[free].copy()
        if len(ddofs):
            f -= K_full[free][:, ddofs] @ dvals

        fnode = nodes[free // 2]
        on_iface = mult[fnode] >= 2
        idx_b = np.flatnonzero(on_iface)
        idx_i = np.flatnonzero(~on_iface)
        keys = [(int(fnode[j]), int(free[j] % 2)) for j in idx_b]
        subs.append(Subdomain(s, elems, nodes, ltris, mesh.nodes[nodes], K_full,
                              f_full, ddofs, dvals, free, K, f, idx_i, idx_b, keys))
    return subs


def trace_operator(sub):
    """Boolean selection t of boundary dofs among the free dofs, (n_b, n_free)."""
    nb = sub.n_b
    return csr_matrix((np.ones(nb), (np.arange(nb), sub.idx_b)), shape=(nb, sub.n_free))


def schur_apply(sub, x_b):
    """(K_bb - K_bi K_ii^-1 K_ib) x_b without forming the Schur complement."""
    x_b = np.asarray(x_b, dtype=float)
    y = sub.K_bb @ x_b
    if len(sub.idx_i):
        y -= sub.K_ib.T @ sub.lu_ii.solve(sub.K_ib @ x_b)
    return y


def schur_dense(sub):
    """Explicit Schur complement (testing and small problems only)."""
    Kib = sub.K_ib.toarray()
    S = sub.K_bb.toarray()
    if len(sub.idx_i):
        S = S - Kib.T @ np.linalg.solve(sub.K_ii.toarray(), Kib)
    return S


def condensed_rhs(sub):
    """b = f_b - K_bi K_ii^-1 f_i."""
    b = sub.f_b.copy()
    if len(sub.idx_i):
        b -= sub.K_ib.T @ sub.lu_ii.solve(sub.f_i)
    return b


def interior_solve(sub, u_b):
    """Interior displacement u_i = K_ii^-1 (f_i - K_ib u_b)."""
    if len(sub.idx_i) == 0:
        return np.zeros(0)
    return sub.lu_ii.solve(sub.f_i - sub.K_ib @ u_b)


def _matrix_norm(K):
    return float(np.max(np.abs(K).sum(axis=1))) if K.shape[0] else 0.0


def rigid_body_modes(sub, rtol=1e-8):
    """Orthonormal basis of the rigid motions left free by the Dirichlet set."""
    if sub.n_free == 0:
        return np.zeros((0, 0))
    node = sub.free // 2
    comp = sub.free % 2
    xy = sub.coords[node] - sub.coords.mean(axis=0)
    G = np.zeros((sub.n_free, 3))
    G[comp == 0, 0] = 1.0
    G[comp == 1, 1] = 1.0
    G[:, 2] = np.where(comp == 0, -xy[:, 1], xy[:, 0])
    Q, _ = np.linalg.qr(G)
    KQ = sub.K @ Q
    _, sv, Vt = np.linalg.svd(KQ, full_matrices=True)
    knorm = _matrix_norm(sub.K)
    sv_full = np.zeros(3)
    sv_full[:len(sv)] = sv
    null = Vt[sv_full <= rtol * knorm]
    if len(null) == 0:
        return np.zeros((sub.n_free, 0))
    R, _ = np.linalg.qr(Q @ null.T)
    res = np.linalg.norm(sub.K @ R, axis=0)
    if np.any(res > rtol * knorm):
        raise AssemblyBug(f"rigid mode residual {res.max():.3e} in subdomain {sub.sid}")
    return R


class _PseudoInverse:
    """Generalized inverse of a symmetric semi-definite matrix with known kernel.

    The ``k`` kernel dimensions are removed by pinning ``k`` dofs chosen by a
    column-pivoted QR of ``R^T`` (rows of ``R`` with the best conditioned
    restriction), then factorizing the reduced matrix.
    """

    def __init__(self, K, R, check=True):
        n = K.shape[0]
        self.R = R
        k = R.shape[1]
        if k:
            _, _, piv = sla.qr(R.T, pivoting=True, mode="economic")
            pinned = np.sort(piv[:k])
        else:
            pinned = np.zeros(0, dtype=int)
        keep = np.setdiff1d(np.arange(n), pinned)
        self.keep = keep
        self.n = n
        self.lu = _Factor(K[keep][:, keep])
        if check and n:
            rng = np.random.default_rng(0)
            rhs = rng.standard_normal(n)
            if k:
                rhs -= R @ (R.T @ rhs)
            x = self.solve(rhs, check=False)
            res = np.linalg.norm(K @ x - rhs)
            if not res <= 1e-8 * np.linalg.norm(rhs):
                raise RankDeficiency(
                    f"pseudo-inverse residual {res:.3e}: kernel larger than rigid modes")

    def solve(self, rhs, check=True, scale=None, tol=1e-8):
        rhs = np.asarray(rhs, dtype=float)
        if check and self.R.shape[1]:
            ref = max(np.linalg.norm(rhs), scale or 0.0)
            bal = np.linalg.norm(self.R.T @ rhs)
            if bal > tol * ref:
                raise FredholmViolation(
                    f"unbalanced right-hand side: |R^T f| = {bal:.3e} vs {ref:.3e}")
        x = np.zeros(self.n)
        x[self.keep] = self.lu.solve(rhs[self.keep])
        return x


def pseudo_inverse_apply(sub, rhs, scale=None):
    """A solution of ``K u = rhs`` for a balanced ``rhs`` (kernel part arbitrary)."""
    return sub._pinv.solve(rhs, scale=scale)


def neumann_schur_solve(sub, r_b, scale=None):
    """Boundary trace of ``K^+ [0; r_b]``, a generalized inverse of S."""
    rhs = np.zeros(sub.n_free)
    rhs[sub.idx_b] = r_b
    return pseudo_inverse_apply(sub, rhs, scale=scale)[sub.idx_b]


# ---------------------------------------------------------------- operators

@dataclass(eq=False)
class AssemblyOperators:
    primal_keys: list          # key of each assembled interface dof
    dual_connections: list     # (key, s, s') with s < s'
    A: list                    # A^(s): (n_primal, n_b^(s)), boolean
    B: list                    # signed dual assembly, (n_dual, n_b^(s))
    A_scaled: list
    B_scaled: list
    multiplicity: np.ndarray   # per primal dof

    @property
    def n_primal(self):
        return len(self.primal_keys)

    @property
    def n_dual(self):
        return len(self.dual_connections)

    @property
    def nsd(self):
        return len(self.A)


def build_assembly_operators(boundary_keys, primal_order=None, dual_order=None):
    """Primal and dual assembly operators from per-subdomain boundary keys.

    Parameters
    ----------
    boundary_keys : list of sequences
        ``boundary_keys[s][j]`` is the hashable label of local boundary dof
        ``j`` of subdomain ``s``; equal labels denote the same physical dof.
    primal_order : sequence, optional
        Numbering of the assembled interface dofs.  Sorted keys by default.
    dual_order : sequence of (key, s, s'), optional
        Numbering of the dual connections.  By default every pair of
        subdomains sharing a key gets one connection, ordered by key then pair.
    """
    owners = {}
    for s, keys in enumerate(boundary_keys):
        for k in keys:
            owners.setdefault(k, []).append(s)
    shared = {k: sorted(v) for k, v in owners.items() if len(v) >= 2}
    if primal_order is None:
        primal_order = sorted(shared)
    primal_order = list(primal_order)
    if set(primal_order) != set(shared):
        raise AssemblyBug("primal ordering does not match the shared dofs")
    if dual_order is None:
        dual_order = [(k, a, b) for k in primal_order for a, b in combinations(shared[k], 2)]
    dual_order = [(k, min(a, b), max(a, b)) for k, a, b in dual_order]
    expected = {(k, a, b) for k in shared for a, b in combinations(shared[k], 2)}
    if set(dual_order) != expected or len(dual_order) != len(expected):
        raise AssemblyBug("dual ordering does not enumerate every connection once")

    prow = {k: r for r, k in enumerate(primal_order)}
    mult = np.array([len(shared[k]) for k in primal_order], dtype=float)
    nP, nD = len(primal_order), len(dual_order)
    A, B, As, Bs = [], [], [], []
    for s, keys in enumerate(boundary_keys):
        nb = len(keys)
        col = {k: j for j, k in enumerate(keys)}
        rows = [prow[k] for k in keys]
        a = csr_matrix((np.ones(nb), (rows, np.arange(nb))), shape=(nP, nb))
        drow, dcol, dval = [], [], []
        for r, (k, s1, s2) in enumerate(dual_order):
            if s == s1 or s == s2:
                drow.append(r)
                dcol.append(col[k])
                dval.append(1.0 if s == s1 else -1.0)
        b = csr_matrix((dval, (drow, dcol)), shape=(nD, nb))
        w = 1.0 / mult[rows] if nb else np.zeros(0)
        A.append(a)
        B.append(b)
        As.append(csr_matrix(a.multiply(w[None, :])))
        Bs.append(csr_matrix(b.multiply(w[None, :])))
    return AssemblyOperators(primal_order, dual_order, A, B, As, Bs, mult)


def operators_for(subdomains):
    return build_assembly_operators([sd.boundary_keys for sd in subdomains])


def dump_operators_csv(ops, directory):
    """Dense CSV dumps of every A^(s) and signed dual assembly matrix."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in range(ops.nsd):
        for name, mat in (("A", ops.A[s]), ("Abar", ops.B[s])):
            p = directory / f"{name}_{s + 1}.csv"
            np.savetxt(p, mat.toarray(), fmt="%d", delimiter=",")
            paths.append(p)
    return paths


class InterfaceComm:
    """Global interface reductions with call counters.

    Every operation that combines data of different subdomains goes through
    this object, so tests can check which code paths communicate.
    """

    def __init__(self, ops):
        self.ops = ops
        self.counts = {"assemble_primal": 0, "assemble_dual": 0, "dot": 0,
                       "sum_scalars": 0}

    def reset(self):
        for k in self.counts:
            self.counts[k] = 0

    def assemble_primal(self, local, scaled=False):
        self.counts["assemble_primal"] += 1
        out = np.zeros(self.ops.n_primal)
        for A, x in zip(self.ops.A_scaled if scaled else self.ops.A, local):
            out += A @ x
        return out

    def assemble_dual(self, local):
        self.counts["assemble_dual"] += 1
        out = np.zeros(self.ops.n_dual)
        for B, x in zip(self.ops.B, local):
            out += B @ x
        return out

    def dot(self, a, b):
        self.counts["dot"] += 1
        return float(np.dot(a, b))

    def sum_scalars(self, values):
        self.counts["sum_scalars"] += 1
        return math.fsum(float(v) for v in values)


def warn_dropped(n, what):
    warnings.warn(f"dropped {n} rank-deficient {what} column(s)", RuntimeWarning,
                  stacklevel=3)
