"""Plane-stress P1 elasticity: material, assembly, monolithic solve, energy norms.

Voigt convention throughout: strain ``(exx, eyy, 2 exy)``, stress
``(sxx, syy, sxy)``.  Global dof of node ``n`` and component ``c`` is ``2n + c``.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.linalg import splu

from .errors import InvalidParameter, RankDeficiency, SingularGeometry
from .mesh import BoundaryTag
from .quadrature import map_points, monomials, triangle_rule


@dataclass(frozen=True)
class HookeTensor:
    E: float
    nu: float

    @cached_property
    def matrix(self):
        E, nu = self.E, self.nu
        return E / (1.0 - nu * nu) * np.array([[1.0, nu, 0.0],
                                               [nu, 1.0, 0.0],
                                               [0.0, 0.0, 0.5 * (1.0 - nu)]])

    @cached_property
    def compliance(self):
        return np.linalg.inv(self.matrix)


def hooke_plane_stress(E, nu):
    if not E > 0:
        raise InvalidParameter(f"Young modulus must be positive, got {E}")
    if not -1.0 < nu < 0.5:
        raise InvalidParameter(f"Poisson ratio must lie in (-1, 0.5), got {nu}")
    return HookeTensor(float(E), float(nu))


def strain_displacement(coords):
    """Constant strain-displacement matrices of P1 triangles.

    coords: (T, 3, 2).  Returns ``B`` of shape (T, 3, 6) and signed areas (T,).
    """
    coords = np.asarray(coords, dtype=float)
    x = coords[..., 0]
    y = coords[..., 1]
    b = np.roll(y, -1, axis=1) - np.roll(y, -2, axis=1)   # y_j - y_k
    c = np.roll(x, -2, axis=1) - np.roll(x, -1, axis=1)   # x_k - x_j
    area = 0.5 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    if np.any(np.abs(area) <= 1e-14 * np.max(np.abs(coords)) ** 2):
        raise SingularGeometry("degenerate triangle")
    inv2a = 1.0 / (2.0 * area)
    T = len(coords)
    B = np.zeros((T, 3, 6))
    B[:, 0, 0::2] = b * inv2a[:, None]
    B[:, 1, 1::2] = c * inv2a[:, None]
    B[:, 2, 0::2] = c * inv2a[:, None]
    B[:, 2, 1::2] = b * inv2a[:, None]
    return B, area


def element_stiffnesses(coords, hooke):
    B, area = strain_displacement(coords)
    if np.any(area <= 0):
        raise SingularGeometry("triangle with non-positive orientation")
    return area[:, None, None] * np.einsum("tki,kl,tlj->tij", B, hooke.matrix, B)


def element_stiffness(triangle, hooke):
    """6x6 stiffness of one triangle given its (3, 2) vertex coordinates."""
    return element_stiffnesses(np.asarray(triangle, dtype=float)[None], hooke)[0]


def element_dofs(triangles):
    tris = np.asarray(triangles)
    return np.stack([2 * tris, 2 * tris + 1], axis=2).reshape(len(tris), 6)


@dataclass
class LoadSpec:
    """Body force, Neumann traction and Dirichlet data.

    ``traction`` and ``dirichlet`` are either constant 2-vectors or callables
    mapping an (n, 2) array of points onto an (n, 2) array of values; the
    traction is interpolated linearly along each loaded edge.
    """
    body_force: tuple = (0.0, 0.0)
    traction: object = (1.0, 1.0)
    dirichlet: object = (0.0, 0.0)

    def traction_at(self, points):
        return _evaluate(self.traction, points)

    def dirichlet_at(self, points):
        return _evaluate(self.dirichlet, points)


def _evaluate(spec, points):
    points = np.atleast_2d(points)
    if callable(spec):
        vals = np.asarray(spec(points), dtype=float)
        return vals.reshape(len(points), 2)
    return np.broadcast_to(np.asarray(spec, dtype=float), (len(points), 2)).copy()


def element_body_loads(coords, areas, body_force):
    """Consistent nodal forces of a constant body force, (T, 6)."""
    f = np.asarray(body_force, dtype=float)
    return (areas[:, None] / 3.0) * np.tile(f, 3)[None, :]


def neumann_edge_loads(mesh, loads, tags=(BoundaryTag.NEUMANN,)):
    """Nodal loads of linear tractions on tagged boundary edges.

    Returns (edges (B, 2), traction nodal values (B, 2, 2), nodal forces (B, 2, 2)).
    """
    mask = np.isin(mesh.boundary_tags, tags)
    edges = mesh.boundary_edges[mask]
    if len(edges) == 0:
        z = np.zeros((0, 2, 2))
        return edges, z, z
    p0 = mesh.nodes[edges[:, 0]]
    p1 = mesh.nodes[edges[:, 1]]
    ell = np.linalg.norm(p1 - p0, axis=1)
    g = np.stack([loads.traction_at(p0), loads.traction_at(p1)], axis=1)
    # 1D mass matrix ell/6 [[2, 1], [1, 2]]
    forces = (ell[:, None, None] / 6.0) * (2.0 * g + g[:, ::-1, :])
    return edges, g, forces


@dataclass
class FESystem:
    K: csr_matrix
    f: np.ndarray
    dirichlet_dofs: np.ndarray
    dirichlet_values: np.ndarray

    @property
    def n_dofs(self):
        return len(self.f)

    @cached_property
    def free_dofs(self):
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.dirichlet_dofs] = False
        return np.flatnonzero(mask)


def assemble_matrix(n_dofs, dofs, Ke):
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    return coo_matrix((Ke.ravel(), (rows, cols)), shape=(n_dofs, n_dofs)).tocsr()


def dirichlet_dofs_values(mesh, loads, nodes=None):
    nodes = mesh.dirichlet_nodes if nodes is None else nodes
    vals = loads.dirichlet_at(mesh.nodes[nodes]) if len(nodes) else np.zeros((0, 2))
    dofs = np.stack([2 * nodes, 2 * nodes + 1], axis=1).ravel()
    return dofs.astype(int), vals.ravel()


def assemble_system(mesh, hooke, loads):
    Ke = element_stiffnesses(mesh.coords, hooke)
    dofs = element_dofs(mesh.triangles)
    K = assemble_matrix(mesh.n_dofs, dofs, Ke)
    f = np.zeros(mesh.n_dofs)
    np.add.at(f, dofs, element_body_loads(mesh.coords, mesh.areas, loads.body_force))
    edges, _, forces = neumann_edge_loads(mesh, loads)
    if len(edges):
        edofs = np.stack([2 * edges, 2 * edges + 1], axis=2)
        np.add.at(f, edofs, forces)
    ddofs, dvals = dirichlet_dofs_values(mesh, loads)
    return FESystem(K, f, ddofs, dvals)


def solve_monolithic(system):
    """Nodal displacement of the full (Dirichlet-eliminated) linear system."""
    if len(system.dirichlet_dofs) == 0:
        raise RankDeficiency("no Dirichlet condition: stiffness is singular")
    free = system.free_dofs
    d = system.dirichlet_dofs
    K = system.K
    u = np.zeros(system.n_dofs)
    u[d] = system.dirichlet_values
    rhs = system.f[free] - K[free][:, d] @ u[d]
    Kff = K[free][:, free].tocsc()
    try:
        lu = splu(Kff)
    except RuntimeError as exc:
        raise RankDeficiency(str(exc)) from exc
    u[free] = lu.solve(rhs)
    res = np.linalg.norm(Kff @ u[free] - rhs)
    if not np.isfinite(res) or res > 1e-8 * max(np.linalg.norm(rhs), 1e-300):
        raise RankDeficiency(f"constrained system is singular (residual {res:.3e})")
    return u


def element_strains(mesh, u, elements=None):
    """Constant Voigt strain of ``u`` on each element, (T, 3)."""
    tris = mesh.triangles if elements is None else mesh.triangles[elements]
    B, _ = strain_displacement(mesh.nodes[tris])
    return np.einsum("tij,tj->ti", B, u[element_dofs(tris)])


@dataclass
class ElementStressField:
    """Per-element polynomial stress in scaled monomial coordinates.

    On element ``e`` the stress is ``sum_k coeffs[e, :, k] * xi**a_k * eta**b_k``
    with ``xi = (x - centers[e, 0]) / scales[e]`` (likewise ``eta``).
    """
    centers: np.ndarray   # (T, 2)
    scales: np.ndarray    # (T,)
    coeffs: np.ndarray    # (T, 3, nb)
    degree: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.coeffs)):
            raise InvalidParameter("non-finite stress coefficients")

    @classmethod
    def constant(cls, centers, stress):
        stress = np.asarray(stress, dtype=float)
        return cls(np.asarray(centers, dtype=float), np.ones(len(stress)),
                   stress[:, :, None], 0)

    def evaluate(self, points):
        """Stress at physical points, points shape (T, Q, 2) -> (T, Q, 3)."""
        xi = (points[..., 0] - self.centers[:, None, 0]) / self.scales[:, None]
        eta = (points[..., 1] - self.centers[:, None, 1]) / self.scales[:, None]
        P = monomials(xi, eta, self.degree)
        return np.einsum("tqk,tck->tqc", P, self.coeffs)


def element_energy_sq(stress, strain, hooke, coords, degree=None):
    """Per-element ``int (s - H e) : H^-1 : (s - H e)`` with exact quadrature.

    ``stress`` is an ElementStressField over the same elements as ``coords``;
    ``strain`` is the constant Voigt strain of the displacement per element.
    """
    coords = np.asarray(coords, dtype=float)
    q = stress.degree if degree is None else degree
    pts, w = triangle_rule(max(2 * q, 2))
    x = map_points(coords, pts)
    s = stress.evaluate(x)
    d = s - (strain @ hooke.matrix.T)[:, None, :]
    dens = np.einsum("tqi,ij,tqj->tq", d, hooke.compliance, d)
    B, area = strain_displacement(coords)
    return 2.0 * area * (dens @ w)


def energy_norm_sq(stress, strain, hooke, coords, elements=None):
    """Squared energy norm of the constitutive residual over an element set."""
    vals = element_energy_sq(stress, strain, hooke, coords)
    if elements is not None:
        vals = vals[elements]
    return float(np.sum(vals))
