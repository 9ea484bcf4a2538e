"""Structured P1 triangulations and element-disjoint partitions.

The Gamma domain is ``[0, 2L] x [0, 2L]`` minus ``[L, 2L] x [0, L]``: three
``L x L`` blocks, clamped on the bottom side of the lower-left block and loaded
on the right side ``{2L} x [L, 2L]``.  Every grid square is split along its
bottom-left to top-right diagonal.
"""
import csv
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InvalidParameter, InvalidPartition


class BoundaryTag(IntEnum):
    FREE = 0
    DIRICHLET = 1
    NEUMANN = 2


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray          # (N, 2)
    triangles: np.ndarray      # (T, 3), counter-clockwise
    boundary_edges: np.ndarray  # (B, 2) node pairs
    boundary_tags: np.ndarray  # (B,) BoundaryTag values
    h: float
    grid: np.ndarray           # (N, 2) integer lattice coordinates
    cells: np.ndarray          # (C, 2) lattice index of each square
    cell_order: np.ndarray     # snake traversal of the squares
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_dofs(self):
        return 2 * len(self.nodes)

    @cached_property
    def coords(self):
        """Vertex coordinates per triangle, (T, 3, 2)."""
        return self.nodes[self.triangles]

    @cached_property
    def areas(self):
        c = self.coords
        e1 = c[:, 1] - c[:, 0]
        e2 = c[:, 2] - c[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def centroids(self):
        return self.coords.mean(axis=1)

    @cached_property
    def _topology(self):
        tris = self.triangles
        T = len(tris)
        loc = np.stack([tris, np.roll(tris, -1, axis=1)], axis=2)  # (T,3,2)
        pairs = np.sort(loc.reshape(-1, 2), axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        tri_edges = inverse.reshape(T, 3)
        edge_tris = -np.ones((len(edges), 2), dtype=int)
        owner = np.repeat(np.arange(T), 3)
        for k, e in enumerate(inverse):
            slot = 0 if edge_tris[e, 0] < 0 else 1
            edge_tris[e, slot] = owner[k]
        return edges, tri_edges, edge_tris

    @property
    def edges(self):
        """Unique edges as sorted node pairs, (E, 2)."""
        return self._topology[0]

    @property
    def tri_edges(self):
        """Edge id of local edge k = (v_k, v_{k+1}) of each triangle."""
        return self._topology[1]

    @property
    def edge_tris(self):
        """The one or two triangles of each edge; -1 marks the missing side."""
        return self._topology[2]

    @cached_property
    def edge_tags(self):
        """BoundaryTag per edge, -1 for interior edges."""
        tags = -np.ones(len(self.edges), dtype=int)
        lookup = {tuple(sorted(e)): t for e, t in
                  zip(self.boundary_edges.tolist(), self.boundary_tags.tolist())}
        for k, e in enumerate(self.edges.tolist()):
            t = lookup.get(tuple(e))
            if t is not None:
                tags[k] = t
        return tags

    @cached_property
    def dirichlet_nodes(self):
        sel = self.boundary_edges[self.boundary_tags == BoundaryTag.DIRICHLET]
        return np.unique(sel)

    @cached_property
    def node_elements(self):
        """CSR-like incidence: for each node the triangles containing it."""
        T = len(self.triangles)
        rows = self.triangles.ravel()
        cols = np.repeat(np.arange(T), 3)
        m = coo_matrix((np.ones_like(rows), (rows, cols)),
                       shape=(self.n_nodes, T)).tocsr()
        return m

    def locate(self, points):
        """Triangle index and barycentric coordinates of lattice-aligned points.

        Only valid for structured meshes produced by this module, where each
        square ``(i, j)`` holds a lower-right and an upper-left triangle.
        """
        pts = np.asarray(points, dtype=float)
        origin = self.meta["origin"]
        q = (pts - origin) / self.h
        ij = np.floor(q + 1e-12).astype(int)
        lookup = self.meta["cell_index"]
        ncx, ncy = self.meta["lattice_shape"]
        # points on the upper or right lattice line belong to the previous square
        ij[:, 0] = np.clip(ij[:, 0], 0, ncx - 1)
        ij[:, 1] = np.clip(ij[:, 1], 0, ncy - 1)
        local = q - ij
        cell = lookup[ij[:, 0], ij[:, 1]]
        bad = cell < 0
        if np.any(bad):
            # shift points on a missing square toward a neighbouring square
            for k in np.flatnonzero(bad):
                for di, dj in ((-1, 0), (0, -1), (-1, -1)):
                    ii, jj = ij[k, 0] + di, ij[k, 1] + dj
                    if 0 <= ii < ncx and 0 <= jj < ncy and lookup[ii, jj] >= 0:
                        if np.all(q[k] - (ii, jj) <= 1 + 1e-12):
                            ij[k] = (ii, jj)
                            local[k] = q[k] - ij[k]
                            cell[k] = lookup[ii, jj]
                            break
            if np.any(cell < 0):
                raise InvalidParameter("point outside the mesh")
        upper = local[:, 1] > local[:, 0]
        tri = 2 * cell + upper.astype(int)
        c = self.coords[tri]
        e1 = c[:, 1] - c[:, 0]
        e2 = c[:, 2] - c[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        d = pts - c[:, 0]
        l1 = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
        l2 = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
        bary = np.column_stack([1.0 - l1 - l2, l1, l2])
        return tri, bary


def _structured(cells, h, origin, tagger):
    cells = np.asarray(cells, dtype=int)
    corners = np.concatenate([cells, cells + (1, 0), cells + (1, 1), cells + (0, 1)])
    grid, inv = np.unique(corners, axis=0, return_inverse=True)
    inv = inv.ravel()
    C = len(cells)
    p00, p10, p11, p01 = (inv[k * C:(k + 1) * C] for k in range(4))
    tris = np.empty((2 * C, 3), dtype=int)
    tris[0::2] = np.column_stack([p00, p10, p11])
    tris[1::2] = np.column_stack([p00, p11, p01])
    nodes = origin + h * grid.astype(float)

    # boundary edges: appear once among triangle edges
    loc = np.stack([tris, np.roll(tris, -1, axis=1)], axis=2).reshape(-1, 2)
    key = np.sort(loc, axis=1)
    _, idx, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
    bedges = loc[idx[counts == 1]]
    mid = 0.5 * (nodes[bedges[:, 0]] + nodes[bedges[:, 1]])
    tags = np.array([tagger(x, y) for x, y in mid], dtype=int)

    ncx = cells[:, 0].max() + 1
    ncy = cells[:, 1].max() + 1
    lookup = -np.ones((ncx, ncy), dtype=int)
    lookup[cells[:, 0], cells[:, 1]] = np.arange(C)
    meta = {"origin": np.asarray(origin, dtype=float), "cell_index": lookup,
            "lattice_shape": (ncx, ncy)}
    return nodes, tris, bedges, tags, grid, meta


def build_gamma_mesh(m, L=1.0):
    """Structured triangulation of the Gamma domain with ``h = L / m``."""
    if int(m) != m or m < 1:
        raise InvalidParameter(f"m must be a positive integer, got {m!r}")
    if not L > 0:
        raise InvalidParameter(f"L must be positive, got {L!r}")
    m = int(m)
    h = L / m
    cells = [(i, j) for j in range(2 * m) for i in range(2 * m)
             if not (i >= m and j < m)]
    tol = 1e-9 * L

    def tagger(x, y):
        if abs(y) < tol and x < L + tol:
            return BoundaryTag.DIRICHLET
        if abs(x - 2 * L) < tol and y > L - tol:
            return BoundaryTag.NEUMANN
        return BoundaryTag.FREE

    # snake: rows of the left column (base -> top), then columns of the
    # upper-right block; the top row ends next to the first column.
    index = {c: k for k, c in enumerate(cells)}
    order = []
    for j in range(2 * m):
        row = range(m) if (2 * m - 1 - j) % 2 == 0 else range(m - 1, -1, -1)
        order.extend(index[(i, j)] for i in row)
    for c in range(m):
        col = range(2 * m - 1, m - 1, -1) if c % 2 == 0 else range(m, 2 * m)
        order.extend(index[(m + c, j)] for j in col)
    nodes, tris, bedges, tags, grid, meta = _structured(
        cells, h, np.zeros(2), tagger)
    meta.update(kind="gamma", m=m, L=L)
    return Mesh(nodes, tris, bedges, tags, h, grid, np.asarray(cells),
                np.asarray(order), meta)


def build_rect_mesh(nx, ny, lx=1.0, ly=1.0, tagger=None):
    """Structured triangulation of ``[0, lx] x [0, ly]`` (square cells).

    ``tagger(x, y)`` returns the BoundaryTag of the boundary edge whose
    midpoint is ``(x, y)``; by default the whole boundary is Dirichlet.
    """
    if nx < 1 or ny < 1:
        raise InvalidParameter("nx and ny must be positive")
    h = lx / nx
    if not np.isclose(ly / ny, h):
        raise InvalidParameter("cells must be square")
    if tagger is None:
        def tagger(x, y):
            return BoundaryTag.DIRICHLET
    cells = [(i, j) for j in range(ny) for i in range(nx)]
    order = []
    for j in range(ny):
        row = range(nx) if j % 2 == 0 else range(nx - 1, -1, -1)
        order.extend(j * nx + i for i in row)
    nodes, tris, bedges, tags, grid, meta = _structured(
        cells, h, np.zeros(2), tagger)
    meta.update(kind="rect", nx=nx, ny=ny)
    return Mesh(nodes, tris, bedges, tags, h, grid, np.asarray(cells),
                np.asarray(order), meta)


@dataclass(frozen=True, eq=False)
class Partition:
    nsd: int
    elem_owner: np.ndarray
    multiplicity: np.ndarray
    interface_nodes: dict      # node -> frozenset of subdomain ids

    def elements(self, s):
        return np.flatnonzero(self.elem_owner == s)

    def subdomain_nodes(self, mesh, s):
        return np.unique(mesh.triangles[self.elements(s)])


def partition_from_owner(mesh, elem_owner):
    """Build and validate a Partition from an element -> subdomain map."""
    owner = np.asarray(elem_owner, dtype=int)
    if owner.shape != (mesh.n_triangles,) or owner.min() < 0:
        raise InvalidPartition("element owner map must be total")
    nsd = int(owner.max()) + 1
    counts = np.bincount(owner, minlength=nsd)
    if np.any(counts == 0):
        raise InvalidPartition(f"empty subdomain(s): {np.flatnonzero(counts == 0)}")

    owners_of_node = [set() for _ in range(mesh.n_nodes)]
    for t, s in zip(mesh.triangles, owner):
        for n in t:
            owners_of_node[n].add(int(s))
    mult = np.array([len(o) for o in owners_of_node])
    iface = {n: frozenset(o) for n, o in enumerate(owners_of_node) if len(o) > 1}

    et = mesh.edge_tris
    both = (et[:, 1] >= 0)
    same = both.copy()
    same[both] = owner[et[both, 0]] == owner[et[both, 1]]

    # element set of each subdomain must be edge-connected
    a = et[same, 0]
    b = et[same, 1]
    T = mesh.n_triangles
    adj = coo_matrix((np.ones(len(a)), (a, b)), shape=(T, T))
    ncomp, labels = connected_components(adj, directed=False)
    for s in range(nsd):
        if len(np.unique(labels[owner == s])) != 1:
            raise InvalidPartition(f"subdomain {s} is not edge-connected")

    # each subdomain occupies one contiguous sector around every node
    elems_at = {}
    for t, s in zip(mesh.triangles, owner):
        for n in t:
            elems_at[(int(n), int(s))] = elems_at.get((int(n), int(s)), 0) + 1
    inner_at = {}
    for e in np.flatnonzero(same):
        s = int(owner[et[e, 0]])
        for n in mesh.edges[e]:
            inner_at[(int(n), s)] = inner_at.get((int(n), s), 0) + 1
    for key, k in elems_at.items():
        sectors = k - inner_at.get(key, 0)
        if sectors > 1:
            raise InvalidPartition(
                f"subdomain {key[1]} touches node {key[0]} through {sectors} sectors")
    return Partition(nsd, owner, mult, iface)


def partition_mesh(mesh, nsd):
    """Cut the snake ordering of squares into ``nsd`` contiguous chunks."""
    if int(nsd) != nsd or nsd < 1:
        raise InvalidParameter(f"nsd must be a positive integer, got {nsd!r}")
    nsd = int(nsd)
    C = len(mesh.cells)
    if nsd > C:
        raise InvalidParameter(f"nsd={nsd} exceeds the {C} squares of the mesh")
    bounds = (np.arange(nsd + 1) * C) // nsd
    cell_owner = np.empty(C, dtype=int)
    for s in range(nsd):
        cell_owner[mesh.cell_order[bounds[s]:bounds[s + 1]]] = s
    elem_owner = np.repeat(cell_owner, 2)
    return partition_from_owner(mesh, elem_owner)


def export_mesh_csv(mesh, partition, directory):
    """Write nodes.csv (id,x,y) and elems.csv (id,n0,n1,n2,owner)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    owner = (partition.elem_owner if partition is not None
             else np.zeros(mesh.n_triangles, dtype=int))
    with open(directory / "nodes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x", "y"])
        for k, (x, y) in enumerate(mesh.nodes):
            w.writerow([k, repr(float(x)), repr(float(y))])
    with open(directory / "elems.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "n0", "n1", "n2", "owner"])
        for k, (t, s) in enumerate(zip(mesh.triangles, owner)):
            w.writerow([k, *map(int, t), int(s)])
    return directory / "nodes.csv", directory / "elems.csv"
