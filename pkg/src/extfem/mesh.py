"""Simplicial background meshes on axis-aligned boxes.

The solver never fits the mesh to the geometry; it only needs a
quasi-uniform triangulation of a bounding box, plus face adjacency and
per-element affine maps.  Structured criss-cross (2D) and Kuhn (3D)
meshes are built here; externally generated simplicial meshes can be
read from a plain text format (``read_mesh_text``).
"""

from __future__ import annotations

import itertools

import numpy as np

__all__ = ["SimplexMesh", "build_structured_mesh", "read_mesh_text", "write_mesh_text"]


class SimplexMesh:
    """Simplicial mesh with face adjacency and element diameters.

    Parameters
    ----------
    vertices : (nv, dim) float array
        Vertex coordinates, ``dim`` in {2, 3}.
    elements : (ne, dim+1) int array
        Vertex indices per element.  Elements are reoriented on
        construction so the signed volume is positive.
    cell_width : float, optional
        Structured-grid edge length when the mesh came from
        :func:`build_structured_mesh`; ``nan`` otherwise.

    Attributes
    ----------
    faces : (nf, dim) int array
        Sorted vertex indices of each codimension-1 face.
    face_elements : (nf, 2) int array
        Incident element indices; second entry is -1 on the boundary.
    face_boundary : (nf,) bool array
    h_K : (ne,) float array
        Element diameters (longest edge).
    h : float
        ``max(h_K)``.
    """

    def __init__(self, vertices, elements, cell_width=float("nan")):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.elements = np.ascontiguousarray(elements, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] not in (2, 3):
            raise ValueError("vertices must be (nv, dim) with dim in {2, 3}")
        self.dim = self.vertices.shape[1]
        if self.elements.ndim != 2 or self.elements.shape[1] != self.dim + 1:
            raise ValueError("elements must be (ne, dim+1)")
        if self.elements.size and (
            self.elements.min() < 0 or self.elements.max() >= len(self.vertices)
        ):
            raise ValueError("element index out of range")
        self.cell_width = float(cell_width)

        self._orient_positively()
        self._build_faces()
        self._build_affine_maps()
        self._build_adjacency()

        edges = self.vertices[self.elements[:, self._edge_pairs[:, 0]]] - self.vertices[
            self.elements[:, self._edge_pairs[:, 1]]
        ]
        self.h_K = np.linalg.norm(edges, axis=2).max(axis=1)
        self.h = float(self.h_K.max())

    # -- construction helpers -------------------------------------------------

    @property
    def _edge_pairs(self):
        return np.array(list(itertools.combinations(range(self.dim + 1), 2)))

    def _orient_positively(self):
        v = self.vertices[self.elements]
        det = np.linalg.det(v[:, 1:] - v[:, :1])
        flip = det < 0
        if flip.any():
            self.elements[flip, -2:] = self.elements[flip, -2:][:, ::-1]
            det = np.abs(det)
        if np.any(det <= 0):
            raise ValueError("mesh contains degenerate elements")
        self._abs_det = det

    def _build_faces(self):
        d = self.dim
        ne = len(self.elements)
        combos = list(itertools.combinations(range(d + 1), d))
        all_faces = np.sort(
            self.elements[:, combos].reshape(ne * len(combos), d), axis=1
        )
        faces, inverse = np.unique(all_faces, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        owner = np.repeat(np.arange(ne), len(combos))
        counts = np.bincount(inverse, minlength=len(faces))
        if counts.max(initial=0) > 2:
            raise ValueError("face shared by more than two elements")
        order = np.argsort(inverse, kind="stable")
        ptr = np.concatenate([[0], np.cumsum(counts)])
        face_elements = np.full((len(faces), 2), -1, dtype=np.int64)
        face_elements[:, 0] = owner[order[ptr[:-1]]]
        interior = counts == 2
        face_elements[interior, 1] = owner[order[ptr[:-1][interior] + 1]]
        self.faces = faces
        self.face_elements = face_elements
        self.face_boundary = face_elements[:, 1] < 0
        fv = self.vertices[faces]
        if d == 2:
            self.h_e = np.linalg.norm(fv[:, 1] - fv[:, 0], axis=1)
        else:
            pairs = [(0, 1), (0, 2), (1, 2)]
            self.h_e = np.max(
                [np.linalg.norm(fv[:, a] - fv[:, b], axis=1) for a, b in pairs], axis=0
            )

    def _build_affine_maps(self):
        v = self.vertices[self.elements]
        # x = v0 + B @ xi, columns of B are edge vectors from vertex 0
        self.map_origin = v[:, 0]
        self.map_B = np.swapaxes(v[:, 1:] - v[:, :1], 1, 2)
        self.map_invB = np.linalg.inv(self.map_B)
        self.map_detB = self._abs_det
        self.volumes = self._abs_det / np.prod(np.arange(1, self.dim + 1))

    def _build_adjacency(self):
        flat = self.elements.ravel()
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=len(self.vertices))
        self._v2e_ptr = np.concatenate([[0], np.cumsum(counts)])
        self._v2e = order // (self.dim + 1)

    # -- queries ---------------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_faces(self):
        return len(self.faces)

    def element_vertices(self, K):
        """Coordinates of element ``K`` as a (dim+1, dim) array."""
        return self.vertices[self.elements[K]]

    def face_vertices(self, f):
        return self.vertices[self.faces[f]]

    def vertex_elements(self, v):
        """Indices of elements incident to vertex ``v``."""
        return self._v2e[self._v2e_ptr[v] : self._v2e_ptr[v + 1]]

    def element_patch(self, K):
        """All elements whose closure touches the closure of ``K``.

        For a simplicial mesh this is exactly the set of elements sharing
        at least one vertex with ``K`` (``K`` itself included).
        """
        K = int(K)
        if K < 0 or K >= self.n_elements:
            raise IndexError(f"element index {K} out of range")
        parts = [self.vertex_elements(v) for v in self.elements[K]]
        return np.unique(np.concatenate(parts))

    def face_normals(self):
        """Unit normals of all faces, oriented away from ``face_elements[:, 0]``.

        Computed once and cached.
        """
        if getattr(self, "_face_normals", None) is None:
            fv = self.vertices[self.faces]
            if self.dim == 2:
                t = fv[:, 1] - fv[:, 0]
                n = np.stack([t[:, 1], -t[:, 0]], axis=1)
            else:
                n = np.cross(fv[:, 1] - fv[:, 0], fv[:, 2] - fv[:, 0])
            n /= np.linalg.norm(n, axis=1)[:, None]
            owners = self.face_elements[:, 0]
            centroids = self.vertices[self.elements[owners]].mean(axis=1)
            flip = np.einsum("fd,fd->f", n, fv.mean(axis=1) - centroids) < 0
            n[flip] = -n[flip]
            self._face_normals = n
        return self._face_normals

    def face_normal(self, f):
        """Unit normal of face ``f`` pointing away from ``face_elements[f, 0]``."""
        return self.face_normals()[f]

    def face_measure(self, f):
        fv = self.face_vertices(f)
        if self.dim == 2:
            return float(np.linalg.norm(fv[1] - fv[0]))
        return float(0.5 * np.linalg.norm(np.cross(fv[1] - fv[0], fv[2] - fv[0])))

    def inradius(self):
        """Largest-inscribed-ball radius per element (shape-regularity measure)."""
        rho = np.empty(self.n_elements)
        combos = list(itertools.combinations(range(self.dim + 1), self.dim))
        for K in range(self.n_elements):
            v = self.element_vertices(K)
            if self.dim == 2:
                per = sum(
                    np.linalg.norm(v[a] - v[b])
                    for a, b in [(0, 1), (0, 2), (1, 2)]
                )
                rho[K] = 2.0 * self.volumes[K] / per
            else:
                area = 0.0
                for c in combos:
                    w = v[list(c)]
                    area += 0.5 * np.linalg.norm(np.cross(w[1] - w[0], w[2] - w[0]))
                rho[K] = 3.0 * self.volumes[K] / area
        return rho

    def shape_regularity(self):
        """max_K h_K / rho_K; constant under uniform refinement."""
        return float((self.h_K / self.inradius()).max())


def build_structured_mesh(bounds, n):
    """Triangulate an axis-aligned box with ``n`` cells per axis.

    2D cells are split into two triangles along a fixed diagonal; 3D
    cells into six tetrahedra (Kuhn split).  All diagonals point the
    same way, so the mesh is fully deterministic.

    Parameters
    ----------
    bounds : sequence of (lo, hi) pairs, one per axis
    n : int
        Number of cells per axis, at least 1.

    Returns
    -------
    SimplexMesh
    """
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2 or bounds.shape[0] not in (2, 3):
        raise ValueError("bounds must be ((lo, hi), ...) with 2 or 3 axes")
    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1")
    widths = (bounds[:, 1] - bounds[:, 0]) / n
    if np.any(widths <= 0):
        raise ValueError("degenerate box")
    dim = len(bounds)

    axes = [bounds[i, 0] + widths[i] * np.arange(n + 1) for i in range(dim)]
    grids = np.meshgrid(*axes, indexing="ij")
    vertices = np.stack([g.ravel() for g in grids], axis=1)

    def vid(idx):
        out = idx[..., 0]
        for a in range(1, dim):
            out = out * (n + 1) + idx[..., a]
        return out

    cells = np.stack(
        np.meshgrid(*[np.arange(n)] * dim, indexing="ij"), axis=-1
    ).reshape(-1, dim)
    elements = []
    if dim == 2:
        c00 = vid(cells)
        c10 = vid(cells + [1, 0])
        c01 = vid(cells + [0, 1])
        c11 = vid(cells + [1, 1])
        elements = np.concatenate(
            [
                np.stack([c00, c10, c11], axis=1),
                np.stack([c00, c11, c01], axis=1),
            ],
            axis=0,
        )
    else:
        corners = {
            b: vid(cells + list(b)) for b in itertools.product((0, 1), repeat=3)
        }
        tets = []
        for perm in itertools.permutations(range(3)):
            path = [(0, 0, 0)]
            cur = [0, 0, 0]
            for axis in perm:
                cur = cur.copy()
                cur[axis] = 1
                path.append(tuple(cur))
            tets.append(np.stack([corners[b] for b in path], axis=1))
        elements = np.concatenate(tets, axis=0)

    return SimplexMesh(vertices, elements, cell_width=float(widths.max()))


def write_mesh_text(mesh, path):
    """Write a mesh in the plain text interchange format.

    Layout: a header line ``dim n_vertices n_elements``, one vertex per
    line (``dim`` reals), then one element per line (``dim+1`` zero-based
    vertex indices), all whitespace-separated ASCII.
    """
    with open(path, "w") as fh:
        fh.write(f"{mesh.dim} {mesh.n_vertices} {mesh.n_elements}\n")
        for v in mesh.vertices:
            fh.write(" ".join(repr(float(x)) for x in v) + "\n")
        for e in mesh.elements:
            fh.write(" ".join(str(int(i)) for i in e) + "\n")


def read_mesh_text(path):
    """Read a mesh written by :func:`write_mesh_text`."""
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 3:
        raise ValueError("truncated mesh file")
    dim, nv, ne = (int(t) for t in tokens[:3])
    if dim not in (2, 3):
        raise ValueError(f"unsupported dimension {dim}")
    need = 3 + nv * dim + ne * (dim + 1)
    if len(tokens) != need:
        raise ValueError(f"expected {need} tokens, found {len(tokens)}")
    vals = tokens[3:]
    vertices = np.array(vals[: nv * dim], dtype=float).reshape(nv, dim)
    elements = np.array(vals[nv * dim :], dtype=np.int64).reshape(ne, dim + 1)
    return SimplexMesh(vertices, elements)
