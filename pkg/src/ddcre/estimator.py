"""Error in constitutive relation: parallel and sequential estimators, true error."""
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .elasticity import (assemble_system, element_dofs, element_energy_sq,
                         solve_monolithic, strain_displacement)
from .equilibration import INTERFACE, LOADED, build_eet_plan, eet_equilibrate_Fh
from .errors import InvalidParameter, InvalidReference
from .mesh import build_gamma_mesh, partition_from_owner
from .recovery import (LIFT_MODES, InterfaceTopology, ka_internal_solve, lift_pair_tractions,
                       lift_traction_Gh, recover_nodal_pair, sa_local_displacement,
                       split_reactions)
from .substructuring import build_subdomains, operators_for


@dataclass
class EstimateReport:
    e_cr: float
    per_subdomain: list
    per_element: np.ndarray            # squared contribution of every mesh element
    n: int = 0
    r: float = 0.0
    e_h: float = None
    effectivity: float = None
    method: str = ""
    diagnostics: dict = field(default_factory=dict)

    def with_true_error(self, e_h):
        self.e_h = float(e_h)
        self.effectivity = self.e_cr / self.e_h if self.e_h > 0 else None
        return self

    def to_dict(self):
        d = asdict(self)
        d["per_element"] = [float(v) for v in self.per_element]
        d["per_subdomain"] = [float(v) for v in self.per_subdomain]
        return d

    def to_json(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1))
        return path


@dataclass(eq=False)
class AdmissiblePair:
    """KA displacement and SA stress of one subdomain."""
    sid: int
    u_hat: np.ndarray          # all local dofs
    stress: object             # ElementStressField over the subdomain elements
    eet: object                # EETResult
    tractions: object          # EdgeTractionField on the interface


def ecr_subdomain(pair, sub, hooke):
    """Squared contribution of every element and the subdomain estimate."""
    ldofs = element_dofs(sub.local_tris)
    B, _ = strain_displacement(sub.coords[sub.local_tris])
    strain = np.einsum("tij,tj->ti", B, pair.u_hat[ldofs])
    elem = element_energy_sq(pair.stress, strain, hooke, sub.coords[sub.local_tris])
    return math.sqrt(float(np.sum(elem))), elem


def ecr_global(values, comm=None):
    """Global estimate from subdomain estimates: one reduction of N_sd scalars."""
    sq = [v * v for v in values]
    total = comm.sum_scalars(sq) if comm is not None else math.fsum(sq)
    return math.sqrt(total)


class RecoveryPipeline:
    """Recover an admissible pair from a solver iterate and estimate the error.

    Geometry-dependent data (interface chains, star-patch systems, prescribed
    tractions) is built once; every call only redoes local solves.
    """

    def __init__(self, mesh, partition, subs, ops, hooke, loads, lift="nodal"):
        if lift not in LIFT_MODES:
            raise InvalidParameter(f"unknown lift mode {lift!r}")
        self.lift = lift
        self.mesh = mesh
        self.partition = partition
        self.subs = subs
        self.ops = ops
        self.hooke = hooke
        self.loads = loads
        self.topo = InterfaceTopology(mesh, partition)
        self.plans = [build_eet_plan(mesh, sd.elements) for sd in subs]
        self._base = [self._prescribed(p) for p in self.plans]
        self._iface = [self._interface_slots(p) for p in self.plans]

    def _prescribed(self, plan):
        known = np.zeros((len(plan.elements), 3, 2, 2))
        t, k = np.nonzero(plan.kind == LOADED)
        if len(t):
            p0 = self.mesh.nodes[plan.tris[t, k]]
            p1 = self.mesh.nodes[plan.tris[t, (k + 1) % 3]]
            known[t, k, 0] = self.loads.traction_at(p0)
            known[t, k, 1] = self.loads.traction_at(p1)
        return known

    def _interface_slots(self, plan):
        t, k = np.nonzero(plan.kind == INTERFACE)
        e = plan.edge[t, k]
        swap = plan.tris[t, k] != self.mesh.edges[e, 0]
        return t, k, e, swap

    def admissible_pairs(self, state):
        nodal = recover_nodal_pair(state, self.ops, self.subs)
        shares = split_reactions(nodal, self.subs, self.topo)
        chains = lift_pair_tractions(shares, self.topo, self.lift)
        scale = max(float(np.linalg.norm(sd.f)) for sd in self.subs) if self.subs else 1.0
        out = []
        for s, sd in enumerate(self.subs):
            u_hat = sd.full_local(ka_internal_solve(sd, nodal.u_b[s]))
            u_sa = sd.full_local(sa_local_displacement(sd, nodal.lam_b[s], scale=scale))
            field = lift_traction_Gh(s, chains, self.topo)
            known = self._base[s].copy()
            t, k, e, swap = self._iface[s]
            if len(t):
                vals = field.values[[field.lookup[int(x)] for x in e]]
                vals[swap] = vals[swap][:, ::-1]
                known[t, k] = vals
            ldofs = element_dofs(sd.local_tris)
            res = eet_equilibrate_Fh(self.plans[s], self.hooke, u_sa[ldofs],
                                     self.loads.body_force, known)
            out.append(AdmissiblePair(s, u_hat, res.stress, res, field))
        return nodal, out

    def estimate(self, state, comm=None):
        """Estimator report of a solver iterate (see ``estimate_at_iteration``)."""
        nodal, pairs = self.admissible_pairs(state)
        per_elem = np.zeros(self.mesh.n_triangles)
        values = []
        for s, (sd, pr) in enumerate(zip(self.subs, pairs)):
            val, elem = ecr_subdomain(pr, sd, self.hooke)
            per_elem[sd.elements] = elem
            values.append(val)
        e = ecr_global(values, comm)
        diag = {
            "eq_residual": max(float(np.max(p.eet.eq_residual, initial=0.0)) for p in pairs),
            "element_balance": max(float(np.max(p.eet.balance, initial=0.0)) for p in pairs),
        }
        rep = EstimateReport(e, values, per_elem, state.n, state.r, method=state.method,
                             diagnostics=diag)
        rep.pairs = pairs
        rep.nodal = nodal
        return rep

    def global_displacement(self, pairs):
        """Assembled nodal displacement of the KA fields."""
        u = np.zeros(self.mesh.n_dofs)
        for sd, pr in zip(self.subs, pairs):
            dofs = (2 * np.repeat(sd.nodes, 2) + np.tile([0, 1], len(sd.nodes)))
            u[dofs] = pr.u_hat
        return u


def estimate_at_iteration(state, pipeline, comm=None):
    """Recover, lift, equilibrate and estimate at the current iterate.

    Everything is local to each subdomain; the only global operation is the
    final sum of the N_sd squared subdomain estimates through ``comm``.
    """
    return pipeline.estimate(state, comm)


def sequential_estimate(mesh, hooke, loads, u=None):
    """Estimator on the whole mesh from the monolithic solution (one subdomain)."""
    part = partition_from_owner(mesh, np.zeros(mesh.n_triangles, dtype=int))
    subs = build_subdomains(mesh, part, hooke, loads)
    ops = operators_for(subs)
    if u is None:
        u = solve_monolithic(assemble_system(mesh, hooke, loads))
    sd = subs[0]
    dofs = 2 * np.repeat(sd.nodes, 2) + np.tile([0, 1], len(sd.nodes))
    pipe = RecoveryPipeline(mesh, part, subs, ops, hooke, loads)
    ldofs = element_dofs(sd.local_tris)
    res = eet_equilibrate_Fh(pipe.plans[0], hooke, u[dofs][ldofs], loads.body_force,
                             pipe._base[0])
    pair = AdmissiblePair(0, u[dofs], res.stress, res, None)
    val, elem = ecr_subdomain(pair, sd, hooke)
    per_elem = np.zeros(mesh.n_triangles)
    per_elem[sd.elements] = elem
    rep = EstimateReport(val, [val], per_elem, 0, 0.0, method="sequential",
                         diagnostics={"eq_residual": float(np.max(res.eq_residual)),
                                      "element_balance": float(np.max(res.balance))})
    rep.pairs = [pair]
    return rep


# -------------------------------------------------------------- true error

class ReferenceSolution:
    """Monolithic solution on a nested fine Gamma mesh."""

    def __init__(self, m_ref, hooke, loads, L=1.0):
        self.m_ref = int(m_ref)
        self.hooke = hooke
        self.loads = loads
        self.mesh = build_gamma_mesh(self.m_ref, L)
        self.system = assemble_system(self.mesh, hooke, loads)
        self.u = solve_monolithic(self.system)
        self.energy = float(self.u @ (self.system.K @ self.u))

    def check_nested(self, mesh):
        meta = mesh.meta
        if meta.get("kind") != "gamma" or not np.isclose(meta.get("L"), self.mesh.meta["L"]):
            raise InvalidReference("reference and mesh describe different domains")
        m = meta["m"]
        if self.m_ref % m != 0:
            raise InvalidReference(f"m_ref={self.m_ref} is not a multiple of m={m}")

    def prolong(self, mesh, u):
        """Interpolate a P1 field of a nested coarse mesh onto the reference nodes."""
        self.check_nested(mesh)
        tri, bary = mesh.locate(self.mesh.nodes)
        nodes = mesh.triangles[tri]
        out = np.zeros(self.mesh.n_dofs)
        for c in range(2):
            out[c::2] = np.einsum("nk,nk->n", bary, u[2 * nodes + c])
        return out


def true_error(u_h, mesh, reference, form="direct"):
    """Energy-norm distance between ``u_h`` and the reference solution.

    ``form="direct"`` prolongates ``u_h`` and measures the difference;
    ``form="identity"`` uses the energy difference, valid for Galerkin ``u_h``.
    """
    if form == "identity":
        reference.check_nested(mesh)
        sysm = assemble_system(mesh, reference.hooke, reference.loads)
        e2 = reference.energy - float(u_h @ (sysm.K @ u_h))
        return math.sqrt(max(e2, 0.0))
    d = reference.u - reference.prolong(mesh, u_h)
    return math.sqrt(max(float(d @ (reference.system.K @ d)), 0.0))

