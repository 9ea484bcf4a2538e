"""Admissible interface fields recovered from any solver iterate.

The nodal pair ``(u_hat_b, lam_hat_b)`` satisfies interface continuity and
balance exactly.  Balanced nodal reactions are shared between neighbour
pairs and lifted onto piecewise linear edge tractions, antisymmetric across
each interface, through one-dimensional edge mass matrices.
"""
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu

from .errors import FredholmViolation, GeometryBug, InvalidParameter
from .substructuring import condensed_rhs, pseudo_inverse_apply


@dataclass(eq=False)
class NodalAdmissiblePair:
    """Per-subdomain boundary displacement and reaction (free boundary dofs)."""
    u_b: list
    lam_b: list


def recover_nodal_pair_bdd(state, ops):
    """Continuous trace of the iterate and reactions corrected by the scaled imbalance."""
    u_b = [ops.A[s].T @ state.u_b for s in range(ops.nsd)]
    lam_b = [l - ops.A_scaled[s].T @ state.gap for s, l in enumerate(state.lam_loc)]
    return NodalAdmissiblePair(u_b, lam_b)


def recover_nodal_pair_feti(state, ops, subs):
    """Balanced reactions of the iterate and traces corrected by the scaled gap."""
    lam_b = [np.array(l, copy=True) for l in state.lam_loc]
    u_b = [sd.trace @ state.u_loc[s] - ops.B_scaled[s].T @ state.gap
           for s, sd in enumerate(subs)]
    return NodalAdmissiblePair(u_b, lam_b)


def recover_nodal_pair(state, ops, subs):
    if state.method == "bdd":
        return recover_nodal_pair_bdd(state, ops)
    if state.method == "feti":
        return recover_nodal_pair_feti(state, ops, subs)
    raise InvalidParameter(f"unknown method {state.method!r}")


def fredholm_residuals(pair, subs):
    """Per subdomain |R_b^T (lam_hat + b)| relative to |lam_hat| + |b|."""
    out = []
    for s, sd in enumerate(subs):
        if sd.n_modes == 0:
            out.append(0.0)
            continue
        b = condensed_rhs(sd)
        v = pair.lam_b[s] + b
        ref = np.linalg.norm(pair.lam_b[s]) + np.linalg.norm(b)
        out.append(float(np.linalg.norm(sd.R_b.T @ v) / max(ref, 1e-300)))
    return out


def continuity_residual(pair, ops):
    total = np.zeros(ops.n_dual)
    for s, ub in enumerate(pair.u_b):
        total += ops.B[s] @ ub
    return float(np.max(np.abs(total), initial=0.0))


def balance_residual(pair, ops):
    total = np.zeros(ops.n_primal)
    for s, lb in enumerate(pair.lam_b):
        total += ops.A[s] @ lb
    return float(np.max(np.abs(total), initial=0.0))


def ka_internal_solve(sub, u_b):
    """Free-dof displacement with prescribed boundary trace (local Dirichlet solve)."""
    x = np.zeros(sub.n_free)
    x[sub.idx_b] = u_b
    if len(sub.idx_i):
        x[sub.idx_i] = sub.lu_ii.solve(sub.f_i - sub.K_ib @ u_b)
    return x


def sa_local_displacement(sub, lam_b, scale=None):
    """A solution of the local Neumann problem ``K u = f + t^T lam_b``."""
    rhs = sub.f + sub.trace.T @ lam_b
    try:
        return pseudo_inverse_apply(sub, rhs, scale=scale)
    except FredholmViolation as exc:
        raise FredholmViolation(f"subdomain {sub.sid}: {exc}") from exc


# ------------------------------------------------------------ traction lift

def edge_mass(length):
    """Consistent 1D P1 mass matrix of a segment."""
    return length / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])


class InterfaceTopology:
    """Interface edges, chains per neighbour pair and cross-point splits."""

    def __init__(self, mesh, partition):
        self.mesh = mesh
        self.partition = partition
        owner = partition.elem_owner
        et = mesh.edge_tris
        both = et[:, 1] >= 0
        oa = np.where(both, owner[et[:, 0]], -1)
        ob = np.where(both, owner[np.maximum(et[:, 1], 0)], -1)
        iface = np.flatnonzero(both & (oa != ob))
        self.iface_edges = iface
        self.edge_pair = {int(e): (int(min(oa[e], ob[e])), int(max(oa[e], ob[e])))
                          for e in iface}
        self.pairs = {}
        for e, p in self.edge_pair.items():
            self.pairs.setdefault(p, []).append(e)
        dnodes = set(mesh.dirichlet_nodes.tolist())
        self.dirichlet = dnodes

        # pairs meeting at every interface node
        node_pairs = {}
        for e, p in self.edge_pair.items():
            for n in mesh.edges[e]:
                node_pairs.setdefault(int(n), set()).add(p)
        self.splits = {}
        for n, ps in node_pairs.items():
            if n in dnodes:
                continue
            owners = sorted(partition.interface_nodes[n])
            ps = sorted(ps)
            pos = {s: k for k, s in enumerate(owners)}
            D = np.zeros((len(owners), len(ps)))
            for k, (a, b) in enumerate(ps):
                D[pos[a], k] = 1.0
                D[pos[b], k] = -1.0
            if np.linalg.matrix_rank(D) != len(owners) - 1:
                raise GeometryBug(f"disconnected subdomain star at node {n}")
            self.splits[n] = (owners, ps, np.linalg.pinv(D))

        self.chains = {p: self._chain(p, edges) for p, edges in sorted(self.pairs.items())}

    def _chain(self, pair, edges):
        mesh = self.mesh
        edges = np.array(sorted(edges))
        ends = mesh.edges[edges]
        nodes = np.unique(ends)
        loc = np.searchsorted(nodes, ends)
        ell = np.linalg.norm(mesh.nodes[ends[:, 1]] - mesh.nodes[ends[:, 0]], axis=1)
        if np.any(ell <= 0):
            raise GeometryBug("zero-length interface edge")
        is_dir = np.array([int(v) in self.dirichlet for v in nodes])
        keep = np.flatnonzero(~is_dir)
        rows, cols, vals = [], [], []
        for (i, j), l in zip(loc, ell):
            Me = edge_mass(l)
            for a, ia in enumerate((i, j)):
                if is_dir[ia]:
                    continue
                for b, jb in enumerate((i, j)):
                    rows.append(ia)
                    cols.append(jb)
                    vals.append(Me[a, b])
        # clamped nodes carry no reaction: copy the value of the free neighbour
        for ia in np.flatnonzero(is_dir):
            nbrs = [j if i == ia else i for i, j in loc if ia in (i, j)]
            nb = [k for k in nbrs if not is_dir[k]]
            rows.append(ia)
            cols.append(ia)
            vals.append(1.0)
            if nb:
                rows.append(ia)
                cols.append(nb[0])
                vals.append(-1.0)
            else:
                warnings.warn(f"interface edge between two clamped nodes near node "
                              f"{nodes[ia]}: traction set to zero", RuntimeWarning)
        n = len(nodes)
        M = coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()
        try:
            lu = splu(M)
        except RuntimeError as exc:
            raise GeometryBug(f"singular interface mass matrix for pair {pair}") from exc
        return {"edges": edges, "nodes": nodes, "loc": loc, "ell": ell,
                "dirichlet": is_dir, "keep": keep, "lu": lu}

    def neighbours(self, s):
        return sorted({b if a == s else a for a, b in self.pairs if s in (a, b)})

    @cached_property
    def edge_index(self):
        return {int(e): k for k, e in enumerate(self.iface_edges)}


def split_reactions(pair, subs, topo):
    """Share of each nodal reaction carried by every neighbour pair.

    Returns ``{(a, b): {node: 2-vector}}`` with the load on ``a`` (``b``
    receives the opposite).  At cross-points the split is the minimum-norm
    antisymmetric flow reproducing all reactions of the star.
    """
    out = {p: {} for p in topo.pairs}
    for n, (owners, ps, Dp) in topo.splits.items():
        lam = np.zeros((len(owners), 2))
        for k, s in enumerate(owners):
            pos = subs[s].key_position
            for c in range(2):
                j = pos.get((n, c))
                if j is not None:
                    lam[k, c] = pair.lam_b[s][j]
        mu = Dp @ lam
        for k, p in enumerate(ps):
            out[p][n] = mu[k]
    return out


@dataclass(eq=False)
class EdgeTractionField:
    """Linear tractions on interface edges acting on one subdomain.

    ``values[k, i]`` is the traction at endpoint ``i`` of global edge
    ``edges[k]`` (endpoints in the sorted order of ``mesh.edges``).
    """
    sid: int
    edges: np.ndarray
    values: np.ndarray

    @cached_property
    def lookup(self):
        return {int(e): k for k, e in enumerate(self.edges)}


LIFT_MODES = ("consistent", "nodal")


def lift_pair_tractions(shares, topo, mode="nodal"):
    """Edge tractions of every chain, oriented as loads on the lower subdomain.

    ``mode="consistent"`` inverts the consistent mass matrix of the chain and
    returns a continuous piecewise linear traction.  ``mode="nodal"`` splits
    each nodal reaction between the chain edges meeting at the node, in
    proportion to their length, and inverts every edge mass matrix on its
    own; the traction is then discontinuous at the nodes.  Both reproduce the
    shared reactions as virtual work on every non-clamped chain node.
    """
    if mode not in LIFT_MODES:
        raise InvalidParameter(f"unknown lift mode {mode!r}")
    out = {}
    for p, ch in topo.chains.items():
        nodes, loc, keep, ell = ch["nodes"], ch["loc"], ch["keep"], ch["ell"]
        rhs = np.zeros((len(nodes), 2))
        sh = shares[p]
        for k in keep:
            rhs[k] = sh.get(int(nodes[k]), 0.0)
        if mode == "consistent":
            out[p] = ch["lu"].solve(rhs)[loc]        # (n_edges, 2, 2)
            continue
        star = np.bincount(loc.ravel(), weights=np.repeat(ell, 2), minlength=len(nodes))
        moments = rhs[loc] * (ell[:, None] / np.maximum(star[loc], 1e-300))[..., None]
        # a clamped endpoint mirrors the other one: constant traction on that edge
        clamped = ch["dirichlet"][loc]
        moments[clamped[:, 0], 0] = moments[clamped[:, 0], 1]
        moments[clamped[:, 1], 1] = moments[clamped[:, 1], 0]
        Minv = (2.0 / ell)[:, None, None] * np.array([[2.0, -1.0], [-1.0, 2.0]])
        out[p] = np.einsum("eab,ebc->eac", Minv, moments)
    return out


def lift_traction_Gh(sid, pair_tractions, topo):
    """Edge traction field of subdomain ``sid`` from the lifted chains."""
    edges, vals = [], []
    for p, F in pair_tractions.items():
        if sid not in p:
            continue
        sign = 1.0 if sid == p[0] else -1.0
        edges.append(topo.chains[p]["edges"])
        vals.append(sign * F)
    if not edges:
        return EdgeTractionField(sid, np.zeros(0, dtype=int), np.zeros((0, 2, 2)))
    edges = np.concatenate(edges)
    vals = np.concatenate(vals)
    order = np.argsort(edges, kind="stable")
    return EdgeTractionField(sid, edges[order], vals[order])


def virtual_work_loads(field, mesh):
    """Nodal loads ``{node: 2-vector}`` of an edge traction field."""
    out = {}
    for e, F in zip(field.edges, field.values):
        i, j = mesh.edges[e]
        Me = edge_mass(np.linalg.norm(mesh.nodes[j] - mesh.nodes[i]))
        w = Me @ F
        out[int(i)] = out.get(int(i), 0.0) + w[0]
        out[int(j)] = out.get(int(j), 0.0) + w[1]
    return out
