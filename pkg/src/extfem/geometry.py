"""Level-set geometry: classification of elements/faces and host assignment.

The zero set of a scalar field ``phi`` splits the box into a negative
side (``SIDE0``, the inner domain) and a positive side (``SIDE1``).
Elements and faces are tagged by sampling signs on a barycentric
lattice; every cut element is then assigned one interior "host" element
per side, from which its polynomial will be borrowed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

__all__ = [
    "LevelSet",
    "Mode",
    "Tag",
    "DomainClassification",
    "AssumptionViolation",
    "EmptyDomainError",
    "classify",
    "assign_hosts",
    "verify_assumptions",
]


class Mode(Enum):
    BOUNDARY = "boundary"
    INTERFACE = "interface"


class Tag(IntEnum):
    """Sign classification of an element or face against the zero set."""

    SIDE0 = 0
    CUT = 1
    SIDE1 = 2
    # boundary-mode aliases
    INTERIOR0 = 0
    EXTERIOR0 = 2


class AssumptionViolation(RuntimeError):
    """A cut element has no interior neighbour to borrow from; refine the mesh."""

    def __init__(self, element, side):
        self.element = int(element)
        self.side = int(side)
        super().__init__(
            f"cut element {element} has no interior patch neighbour on side {side};"
            " the mesh does not resolve the geometry (refine)"
        )


class EmptyDomainError(RuntimeError):
    pass


class LevelSet:
    """Scalar field wrapper with vectorised evaluation and gradients.

    Parameters
    ----------
    phi : callable
        Maps an (n, dim) array of points to (n,) values.  Scalar
        point-wise callables are accepted and wrapped.
    grad : callable, optional
        Maps (n, dim) points to (n, dim) gradients.  When absent,
        central finite differences with step ``1e-6 * scale`` are used.
    descriptor : str
        Human-readable label.
    scale : float
        Characteristic domain length for the finite-difference step.
    """

    def __init__(self, phi, grad=None, descriptor="", scale=1.0):
        self._phi = phi
        self._grad = grad
        self.descriptor = descriptor
        self.scale = float(scale)
        self._vectorized = None

    def __call__(self, points):
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if self._vectorized is None:
            try:
                out = np.asarray(self._phi(pts), dtype=float)
                self._vectorized = out.shape == (len(pts),)
            except Exception:
                self._vectorized = False
            if self._vectorized:
                return float(out[0]) if single else out
        if self._vectorized:
            out = np.asarray(self._phi(pts), dtype=float)
        else:
            out = np.array([float(self._phi(p)) for p in pts])
        return float(out[0]) if single else out

    def gradient(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self._grad is not None:
            g = np.asarray(self._grad(pts), dtype=float)
            if g.shape != pts.shape:
                g = np.array([np.asarray(self._grad(p), dtype=float) for p in pts])
            return g
        h = 1e-6 * self.scale
        g = np.empty_like(pts)
        for d in range(pts.shape[1]):
            step = np.zeros(pts.shape[1])
            step[d] = h
            g[:, d] = (self(pts + step) - self(pts - step)) / (2 * h)
        return g

    def validate_gradient(self, points, tol=1e-4):
        """Check a supplied gradient against finite differences.

        Returns the maximum relative deviation; raises ``ValueError``
        when it exceeds ``tol``.
        """
        if self._grad is None:
            return 0.0
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ana = self.gradient(pts)
        h = 1e-6 * self.scale
        fd = np.empty_like(pts)
        for d in range(pts.shape[1]):
            step = np.zeros(pts.shape[1])
            step[d] = h
            fd[:, d] = (self(pts + step) - self(pts - step)) / (2 * h)
        scale = np.maximum(np.linalg.norm(ana, axis=1), 1.0)
        dev = float((np.linalg.norm(ana - fd, axis=1) / scale).max())
        if dev > tol:
            raise ValueError(f"gradient disagrees with finite differences: {dev:.3e}")
        return dev


@dataclass
class DomainClassification:
    """Per-element and per-face tags plus host maps for cut elements."""

    mode: Mode
    element_tag: np.ndarray
    face_tag: np.ndarray
    eps_geom: float
    vertex_phi: np.ndarray
    host0: np.ndarray = field(default=None)
    host1: np.ndarray = field(default=None)

    def cut_elements(self):
        return np.flatnonzero(self.element_tag == Tag.CUT)

    def elements_with(self, tag):
        return np.flatnonzero(self.element_tag == tag)

    def active_elements(self):
        """Elements carrying unknowns or quadrature in the current mode."""
        if self.mode is Mode.BOUNDARY:
            return np.flatnonzero(self.element_tag != Tag.SIDE1)
        return np.arange(len(self.element_tag))


def _bary_lattice(k, denom):
    """Barycentric lattice points of a k-simplex with the given denominator."""
    pts = []
    for combo in itertools.combinations_with_replacement(range(k + 1), denom):
        b = np.bincount(combo, minlength=k + 1)
        pts.append(b)
    return np.asarray(pts, dtype=float) / denom


def _sample_values(level_set, vertices, simplex_vertex_ids, lattice, chunk=2048):
    """phi at lattice samples of each simplex; returns (n_simplex, n_samples)."""
    n = len(simplex_vertex_ids)
    ns = len(lattice)
    out = np.empty((n, ns))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        verts = vertices[simplex_vertex_ids[lo:hi]]
        pts = np.einsum("sk,ekd->esd", lattice, verts).reshape(-1, vertices.shape[1])
        out[lo:hi] = level_set(pts).reshape(hi - lo, ns)
    return out


def _tag_from_samples(vals, eps):
    mx = vals.max(axis=1)
    mn = vals.min(axis=1)
    cut = (mx > eps) & (mn < -eps)
    tags = np.full(len(vals), Tag.SIDE1, dtype=np.int8)
    tags[~cut & (mx <= eps)] = Tag.SIDE0
    tags[cut] = Tag.CUT
    return tags


def classify(mesh, level_set, mode, depth=3):
    """Tag every element and face of the mesh against the zero set.

    An entity is CUT when its sampled values attain both signs beyond
    the geometric tolerance; otherwise it belongs to the side of the
    sign that is present.  Samples are the barycentric lattice with
    denominator ``2**depth`` (vertices, edge midpoints and recursive
    subdivision points).

    Raises
    ------
    EmptyDomainError
        In BOUNDARY mode when the negative region misses the mesh.
    """
    if not isinstance(mode, Mode):
        mode = Mode(mode)
    vertex_phi = level_set(mesh.vertices)
    eps = 1e-12 * max(1.0, float(np.abs(vertex_phi).max()))

    elem_lat = _bary_lattice(mesh.dim, 2**depth)
    evals = _sample_values(level_set, mesh.vertices, mesh.elements, elem_lat)
    element_tag = _tag_from_samples(evals, eps)

    face_lat = _bary_lattice(mesh.dim - 1, 2**depth)
    fvals = _sample_values(level_set, mesh.vertices, mesh.faces, face_lat)
    face_tag = _tag_from_samples(fvals, eps)

    if mode is Mode.BOUNDARY and not np.any(element_tag != Tag.SIDE1):
        raise EmptyDomainError("level set is positive on the whole mesh")

    return DomainClassification(
        mode=mode,
        element_tag=element_tag,
        face_tag=face_tag,
        eps_geom=eps,
        vertex_phi=vertex_phi,
    )


def assign_hosts(mesh, cls):
    """Pick an interior host element per side for every cut element.

    The host maximises, over candidates in the element patch with the
    correct tag, the minimum of ``|phi|`` over the candidate's vertices
    (most-interior choice); ties break to the smallest element index.
    Fills ``cls.host0`` (and ``cls.host1`` in INTERFACE mode) in place
    and returns ``cls``.
    """
    ne = mesh.n_elements
    cls.host0 = np.full(ne, -1, dtype=np.int64)
    if cls.mode is Mode.INTERFACE:
        cls.host1 = np.full(ne, -1, dtype=np.int64)
    absphi = np.abs(cls.vertex_phi)
    sides = [(0, Tag.SIDE0, cls.host0)]
    if cls.mode is Mode.INTERFACE:
        sides.append((1, Tag.SIDE1, cls.host1))
    for K in cls.cut_elements():
        patch = mesh.element_patch(K)
        for side, tag, host in sides:
            cands = patch[cls.element_tag[patch] == tag]
            if len(cands) == 0:
                raise AssumptionViolation(K, side)
            scores = absphi[mesh.elements[cands]].min(axis=1)
            best = cands[np.lexsort((cands, -scores))[0]]
            host[K] = best
    return cls


@dataclass
class AssumptionReport:
    passed: bool
    multi_crossing_faces: list
    hostless_elements: list

    def __str__(self):
        if self.passed:
            return "geometry assumptions verified: pass"
        lines = ["geometry assumptions verified: FAIL"]
        if self.multi_crossing_faces:
            lines.append(
                "  faces crossed more than once: "
                + ", ".join(f"{f} ({c}x)" for f, c in self.multi_crossing_faces)
            )
        if self.hostless_elements:
            lines.append(
                "  cut elements without host: "
                + ", ".join(str(k) for k in self.hostless_elements)
            )
        return "\n".join(lines)


def _count_edge_crossings(level_set, a, b, samples):
    t = np.linspace(0.0, 1.0, samples)
    pts = a[None, :] + t[:, None] * (b - a)[None, :]
    s = np.sign(level_set(pts))
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] * s[:-1] < 0))


def _count_face_components(level_set, fv, depth=4):
    """Connected components of the zero set on a triangular face (3D)."""
    tris = [fv]
    for _ in range(depth):
        nxt = []
        for t in tris:
            m01, m02, m12 = (
                0.5 * (t[0] + t[1]),
                0.5 * (t[0] + t[2]),
                0.5 * (t[1] + t[2]),
            )
            nxt += [
                np.array([t[0], m01, m02]),
                np.array([m01, t[1], m12]),
                np.array([m02, m12, t[2]]),
                np.array([m01, m12, m02]),
            ]
        tris = nxt
    tris = np.array(tris)
    mids = 0.5 * (tris[:, [0, 0, 1]] + tris[:, [1, 2, 2]])
    pts = np.concatenate([tris, mids], axis=1)
    vals = level_set(pts.reshape(-1, 3)).reshape(len(tris), 6)
    cut = (vals.max(axis=1) > 0) & (vals.min(axis=1) < 0)
    idx = np.flatnonzero(cut)
    if len(idx) == 0:
        return 0
    # union-find over cut leaves, adjacency via shared (rounded) edge keys
    parent = {int(i): int(i) for i in idx}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    edge_map = {}
    for i in idx:
        t = tris[i]
        for a, b in ((0, 1), (0, 2), (1, 2)):
            key = tuple(sorted((tuple(np.round(t[a], 12)), tuple(np.round(t[b], 12)))))
            j = edge_map.setdefault(key, int(i))
            ri, rj = find(int(i)), find(j)
            if ri != rj:
                parent[ri] = rj
    return len({find(int(i)) for i in idx})


def verify_assumptions(mesh, level_set, cls, samples=257):
    """Check that the zero set is resolved by the mesh.

    Reports faces that the zero set crosses more than once (fine 1D
    sampling in 2D, component counting on a subdivision in 3D) and cut
    elements that lack a host.  Purely diagnostic; never raises.
    """
    multi = []
    for f in np.flatnonzero(cls.face_tag == Tag.CUT):
        fv = mesh.face_vertices(f)
        if mesh.dim == 2:
            count = _count_edge_crossings(level_set, fv[0], fv[1], samples)
        else:
            count = _count_face_components(level_set, fv)
        if count > 1:
            multi.append((int(f), count))
    hostless = []
    tags = [Tag.SIDE0] + ([Tag.SIDE1] if cls.mode is Mode.INTERFACE else [])
    for K in cls.cut_elements():
        patch = mesh.element_patch(K)
        if any(not np.any(cls.element_tag[patch] == tag) for tag in tags):
            hostless.append(int(K))
    return AssumptionReport(
        passed=not multi and not hostless,
        multi_crossing_faces=multi,
        hostless_elements=hostless,
    )
