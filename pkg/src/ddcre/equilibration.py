"""Element equilibration: statically admissible stresses from FE stresses.

Stage 1 builds linear tractions on every element edge.  Their moments
``b[e, j] = int_e g . phi_j`` against the hat function of each endpoint must
satisfy, for every element ``E`` and vertex ``j``,

    sum_{e in dE, j in e} eta_{E,e} b[e, j] = int_E sigma_h : eps(phi_j) - f . phi_j

where ``eta`` is +1 on the reference side of ``e`` and -1 on the other one.
Edges on the subdomain boundary keep prescribed tractions (Neumann data,
zero on free edges, lifted interface tractions); clamped edges are unknown.
The equations decouple node by node (star patches).  Among all solutions the
one closest to the averaged FE traction is kept.

Stage 2 solves on every element the Neumann problem with those tractions in
the space of vector polynomials of degree 4 and returns ``H eps(w)``, a
degree-3 stress.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix

from .elasticity import ElementStressField, element_stiffnesses, strain_displacement
from .errors import EETFailure
from .mesh import BoundaryTag
from .quadrature import (derivative_matrices, line_rule, map_points, monomial_exponents,
                         monomial_gradients, monomials, triangle_rule)

INTERIOR, CLAMPED, LOADED, FREE, INTERFACE = range(5)
LOCAL_DEGREE = 4


def _outward_normals(coords):
    """Outward unit normals and lengths of the three edges (v_k, v_k+1)."""
    d = np.roll(coords, -1, axis=1) - coords
    ell = np.linalg.norm(d, axis=2)
    n = np.stack([d[..., 1], -d[..., 0]], axis=2) / ell[..., None]
    return n, ell


@dataclass(eq=False)
class EETPlan:
    """Subdomain-local equilibration data that depends on geometry only."""
    elements: np.ndarray      # global element ids
    coords: np.ndarray        # (T, 3, 2)
    tris: np.ndarray          # (T, 3) global node ids
    edge: np.ndarray          # (T, 3) global edge of local edge k
    kind: np.ndarray          # (T, 3) edge kind
    eta: np.ndarray           # (T, 3) orientation sign
    cols: np.ndarray          # (T, 3, 2) unknown index of the endpoint moments, -1 if known
    normals: np.ndarray       # (T, 3, 2)
    lengths: np.ndarray       # (T, 3)
    A: csr_matrix             # moment equations
    A_pinv: csr_matrix        # block-wise pseudo-inverse
    row_node: np.ndarray
    n_unknowns: int
    ref_side: np.ndarray      # (n_unknowns,) local element on the reference side
    ref_edge: np.ndarray      # (n_unknowns,) local edge index there
    other_side: np.ndarray    # (n_unknowns,) local element on the other side, -1 if none


def build_eet_plan(mesh, elements):
    """Precompute the star-patch systems of an element set (one subdomain)."""
    elements = np.asarray(elements)
    T = len(elements)
    tris = mesh.triangles[elements]
    coords = mesh.coords[elements]
    edge = mesh.tri_edges[elements]
    et = mesh.edge_tris
    local = -np.ones(mesh.n_triangles, dtype=int)
    local[elements] = np.arange(T)
    tags = mesh.edge_tags

    kind = np.empty((T, 3), dtype=int)
    eta = np.ones((T, 3))
    for t in range(T):
        for k in range(3):
            e = edge[t, k]
            t0, t1 = et[e]
            if t1 < 0:
                tag = tags[e]
                kind[t, k] = {BoundaryTag.DIRICHLET: CLAMPED, BoundaryTag.NEUMANN: LOADED,
                              BoundaryTag.FREE: FREE}[BoundaryTag(tag)]
            elif local[t0] >= 0 and local[t1] >= 0:
                kind[t, k] = INTERIOR
                eta[t, k] = 1.0 if t0 == elements[t] else -1.0
            else:
                kind[t, k] = INTERFACE

    # unknowns: one moment per (edge, endpoint) on interior and clamped edges
    cols = -np.ones((T, 3, 2), dtype=int)
    index = {}
    ref_side, ref_edge, other = [], [], []
    for t in range(T):
        for k in range(3):
            if kind[t, k] not in (INTERIOR, CLAMPED):
                continue
            e = int(edge[t, k])
            for i, v in enumerate((tris[t, k], tris[t, (k + 1) % 3])):
                key = (e, int(v))
                if key not in index:
                    index[key] = len(index)
                    t0, t1 = et[e]
                    ref_side.append(local[t0])
                    k0 = int(np.flatnonzero(mesh.tri_edges[t0] == e)[0])
                    ref_edge.append(k0)
                    other.append(local[t1] if t1 >= 0 else -1)
                cols[t, k, i] = index[key]
    nu = len(index)

    # equation (t, k): edges k (starts at v_k) and k-1 (ends at v_k)
    rows, cc, vals = [], [], []
    for t in range(T):
        for k in range(3):
            r = 3 * t + k
            for kk, end in ((k, 0), ((k - 1) % 3, 1)):
                c = cols[t, kk, end]
                if c >= 0:
                    rows.append(r)
                    cc.append(c)
                    vals.append(eta[t, kk])
    A = coo_matrix((vals, (rows, cc)), shape=(3 * T, nu)).tocsr()
    row_node = tris.ravel()

    # block pseudo-inverse, one block per node (star patch)
    prow, pcol, pval = [], [], []
    order = np.argsort(row_node, kind="stable")
    bounds = np.flatnonzero(np.diff(row_node[order])) + 1
    for rset in np.split(order, bounds):
        sub = A[rset]
        cset = np.unique(sub.indices)
        if len(cset) == 0:
            continue
        P = np.linalg.pinv(sub[:, cset].toarray())
        ii, jj = np.meshgrid(cset, rset, indexing="ij")
        prow.append(ii.ravel())
        pcol.append(jj.ravel())
        pval.append(P.ravel())
    if prow:
        A_pinv = coo_matrix((np.concatenate(pval), (np.concatenate(prow), np.concatenate(pcol))),
                            shape=(nu, 3 * T)).tocsr()
    else:
        A_pinv = csr_matrix((nu, 3 * T))
    normals, lengths = _outward_normals(coords)
    return EETPlan(elements, coords, tris, edge, kind, eta, cols, normals, lengths, A,
                   A_pinv, row_node, nu, np.array(ref_side, dtype=int),
                   np.array(ref_edge, dtype=int), np.array(other, dtype=int))


@dataclass(eq=False)
class EETResult:
    stress: ElementStressField
    tractions: np.ndarray      # (T, 3, 2, 2) nodal tractions acting on each element
    moments: np.ndarray        # (n_unknowns, 2)
    balance: np.ndarray        # (T,) rigid-body imbalance of each element's loads
    eq_residual: np.ndarray    # (T,) weak equilibrium residual of the local solves
    patch_residual: float


def _moments_to_nodal(b, ell):
    """Nodal values of the linear traction with endpoint moments ``b``."""
    # inverse of ell/6 [[2, 1], [1, 2]]
    return (2.0 / ell)[..., None, None] * np.stack(
        [2.0 * b[..., 0, :] - b[..., 1, :], 2.0 * b[..., 1, :] - b[..., 0, :]], axis=-2)


def _nodal_to_moments(g, ell):
    return (ell / 6.0)[..., None, None] * (2.0 * g + g[..., ::-1, :])


def eet_equilibrate_Fh(plan, hooke, u_elem, body_force, known, rtol=1e-8):
    """Equilibrated degree-3 stress of one subdomain.

    Parameters
    ----------
    plan : EETPlan
    hooke : HookeTensor
    u_elem : ndarray (T, 6)
        Element displacement of a balanced local solution (FE stress source).
    body_force : 2-vector
    known : ndarray (T, 3, 2, 2)
        Prescribed nodal tractions on loaded, free and interface edges
        (ignored on interior and clamped edges), endpoints ``(v_k, v_k+1)``.
    """
    T = len(plan.elements)
    Ke = element_stiffnesses(plan.coords, hooke)
    e1 = plan.coords[:, 1] - plan.coords[:, 0]
    e2 = plan.coords[:, 2] - plan.coords[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    fb = np.asarray(body_force, dtype=float)
    Q = (np.einsum("tij,tj->ti", Ke, u_elem) - (area[:, None] / 3.0) * np.tile(fb, 3))
    Q = Q.reshape(T, 3, 2)

    known = np.array(known, dtype=float)
    fixed = plan.cols[..., 0] < 0
    known[~fixed] = 0.0
    kmom = _nodal_to_moments(known, plan.lengths)       # (T, 3, 2, 2)
    # vertex k touches local edge k at its start and edge k-1 at its end
    rhs = Q - kmom[:, :, 0, :] - np.roll(kmom[:, :, 1, :], 1, axis=1)
    rhs = rhs.reshape(3 * T, 2)

    # averaged FE traction on the reference side as tie-breaker
    B, _ = strain_displacement(plan.coords)
    sig = np.einsum("ij,tjk,tk->ti", hooke.matrix, B, u_elem)
    bbar = np.zeros((plan.n_unknowns, 2))
    if plan.n_unknowns:
        s0 = sig[plan.ref_side]
        s1 = np.where(plan.other_side[:, None] >= 0, sig[np.maximum(plan.other_side, 0)], s0)
        savg = 0.5 * (s0 + s1)
        n = plan.normals[plan.ref_side, plan.ref_edge]
        ell = plan.lengths[plan.ref_side, plan.ref_edge]
        trac = np.stack([savg[:, 0] * n[:, 0] + savg[:, 2] * n[:, 1],
                         savg[:, 2] * n[:, 0] + savg[:, 1] * n[:, 1]], axis=1)
        bbar = 0.5 * ell[:, None] * trac

    b = bbar + plan.A_pinv @ (rhs - plan.A @ bbar)
    res = plan.A @ b - rhs
    scale = max(np.abs(Q).max(), np.abs(rhs).max(), 1e-300)
    rnorm = np.abs(res).max(axis=1) if len(res) else np.zeros(0)
    if np.any(rnorm > rtol * scale):
        bad = int(plan.row_node[np.argmax(rnorm)])
        raise EETFailure(f"inconsistent star-patch system, residual {rnorm.max():.3e}",
                         patch=bad)

    # nodal tractions acting on each element
    mom = kmom.copy()
    free_cols = plan.cols >= 0
    mom[free_cols] = (b[plan.cols[free_cols]]
                      * plan.eta[:, :, None].repeat(2, axis=2)[free_cols][:, None])
    tractions = np.where(fixed[..., None, None], known, _moments_to_nodal(mom, plan.lengths))

    stress, eq_res, balance = element_local_solves(plan.coords, hooke, tractions, fb)
    return EETResult(stress, tractions, b, balance, eq_res, float(np.abs(res).max(initial=0.0)))


@lru_cache(maxsize=None)
def _rigid_coeffs(degree):
    nb = len(monomial_exponents(degree))
    R = np.zeros((2 * nb, 3))
    exps = [tuple(e) for e in monomial_exponents(degree)]
    one, xi, eta = exps.index((0, 0)), exps.index((1, 0)), exps.index((0, 1))
    R[one, 0] = 1.0
    R[nb + one, 1] = 1.0
    R[eta, 2] = -1.0
    R[nb + xi, 2] = 1.0
    return R / np.linalg.norm(R, axis=0)


def element_local_solves(coords, hooke, tractions, body_force, degree=LOCAL_DEGREE):
    """Per-element Neumann problems in vector polynomials of ``degree``.

    Unknown ``w = (sum_k a_k m_k, sum_k c_k m_k)`` with scaled monomials
    ``m_k``.  Returns the stress field ``H eps(w)``, the relative weak
    equilibrium residual and the rigid-body imbalance of the loads.
    """
    coords = np.asarray(coords, dtype=float)
    T = len(coords)
    nb = len(monomial_exponents(degree))
    centers = coords.mean(axis=1)
    d = np.roll(coords, -1, axis=1) - coords
    ell = np.linalg.norm(d, axis=2)
    scales = ell.max(axis=1)
    e1 = coords[:, 1] - coords[:, 0]
    e2 = coords[:, 2] - coords[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    # stiffness: exact for degree 2 (degree - 1)
    pts, w = triangle_rule(2 * (degree - 1))
    x = map_points(coords, pts)
    xi = (x[..., 0] - centers[:, None, 0]) / scales[:, None]
    et = (x[..., 1] - centers[:, None, 1]) / scales[:, None]
    gx, gy = monomial_gradients(xi, et, degree)
    gx = gx / scales[:, None, None]
    gy = gy / scales[:, None, None]
    Bq = np.zeros((T, len(w), 3, 2 * nb))
    Bq[:, :, 0, :nb] = gx
    Bq[:, :, 1, nb:] = gy
    Bq[:, :, 2, :nb] = gy
    Bq[:, :, 2, nb:] = gx
    wq = 2.0 * area[:, None] * w[None, :]
    K = np.einsum("tq,tqia,ij,tqjb->tab", wq, Bq, hooke.matrix, Bq)

    # loads: body force (degree 4 integrand) and linear edge tractions (degree 5)
    fb = np.asarray(body_force, dtype=float)
    rhs = np.zeros((T, 2 * nb))
    if np.any(fb != 0):
        pts_f, w_f = triangle_rule(degree)
        xf = map_points(coords, pts_f)
        Mf = monomials((xf[..., 0] - centers[:, None, 0]) / scales[:, None],
                       (xf[..., 1] - centers[:, None, 1]) / scales[:, None], degree)
        wf = 2.0 * area[:, None] * w_f[None, :]
        base = np.einsum("tq,tqk->tk", wf, Mf)
        rhs[:, :nb] += fb[0] * base
        rhs[:, nb:] += fb[1] * base
    s_pts, s_w = line_rule((degree + 2) // 2 + 1)
    for k in range(3):
        p0 = coords[:, k]
        p1 = coords[:, (k + 1) % 3]
        xs = p0[:, None, :] + s_pts[None, :, None] * (p1 - p0)[:, None, :]
        Ms = monomials((xs[..., 0] - centers[:, None, 0]) / scales[:, None],
                       (xs[..., 1] - centers[:, None, 1]) / scales[:, None], degree)
        g = (tractions[:, k, 0, None, :] * (1.0 - s_pts)[None, :, None]
             + tractions[:, k, 1, None, :] * s_pts[None, :, None])      # (T, S, 2)
        ws = ell[:, k, None] * s_w[None, :]
        rhs[:, :nb] += np.einsum("ts,ts,tsk->tk", ws, g[..., 0], Ms)
        rhs[:, nb:] += np.einsum("ts,ts,tsk->tk", ws, g[..., 1], Ms)

    R = _rigid_coeffs(degree)
    # rigid modes in physical units: the rotation column is already scaled
    balance = np.linalg.norm(rhs @ R, axis=1) / np.maximum(np.linalg.norm(rhs, axis=1), 1e-300)
    c = np.trace(K, axis1=1, axis2=2) / (2 * nb)
    Kreg = K + c[:, None, None] * (R @ R.T)[None]
    sol = np.linalg.solve(Kreg, rhs[..., None])[..., 0]
    res = np.einsum("tab,tb->ta", K, sol) - rhs
    eq_res = np.linalg.norm(res, axis=1) / np.maximum(np.linalg.norm(rhs, axis=1), 1e-300)

    Dx, Dy = derivative_matrices(degree)
    a = sol[:, :nb]
    cc = sol[:, nb:]
    exx = (a @ Dx.T) / scales[:, None]
    eyy = (cc @ Dy.T) / scales[:, None]
    gxy = (a @ Dy.T + cc @ Dx.T) / scales[:, None]
    eps = np.stack([exx, eyy, gxy], axis=1)                      # (T, 3, nb_low)
    coeffs = np.einsum("ij,tjk->tik", hooke.matrix, eps)
    field = ElementStressField(centers, scales, coeffs, degree - 1)
    zero_rhs = np.linalg.norm(rhs, axis=1) == 0
    eq_res[zero_rhs] = 0.0
    balance[zero_rhs] = 0.0
    return field, eq_res, balance

