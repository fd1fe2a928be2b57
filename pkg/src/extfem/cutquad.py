"""Quadrature on cut simplices.

Rules over ``K & {phi < 0}``, over the zero set inside an element, and
over cut faces are produced by recursive uniform subdivision: sub
simplices on one side of the zero set get a standard rule, mixed leaves
at the finest level are clipped against the linear interpolant of
``phi`` at their vertices and the resulting polytopes are triangulated
exactly.  The subdivision depth is the accuracy knob; the linearised
geometry converges at second order in the leaf size.

Surface rule nodes are additionally projected onto the true zero set by
a Newton iteration along the gradient (weights keep the linearised
measure, normals are ``grad phi / |grad phi|`` at the projected nodes).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

__all__ = [
    "Side",
    "QuadRule",
    "UnsupportedDegreeError",
    "ClippingError",
    "ProjectionError",
    "MultipleCrossings",
    "reference_simplex_rule",
    "cut_volume_rule",
    "cut_surface_rule",
    "cut_face_rule",
]

MAX_DEGREE = 10
NEWTON_MAXIT = 20


class Side(IntEnum):
    NEG = 0
    POS = 1


class UnsupportedDegreeError(ValueError):
    pass


class ClippingError(RuntimeError):
    """Clipped pieces do not partition a leaf; degenerate geometry."""


class ProjectionError(RuntimeError):
    """Newton projection onto the zero set failed to converge."""


class MultipleCrossings(RuntimeError):
    """The zero set crosses a face more than once (mesh too coarse)."""


@dataclass
class QuadRule:
    """Nodes and weights (and unit normals for surface rules)."""

    nodes: np.ndarray
    weights: np.ndarray
    normals: np.ndarray = None
    exactness_degree: int = 0

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(len(self.weights), -1)
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights <= 0):
            raise ClippingError("quadrature rule with nonpositive weight")

    def __len__(self):
        return len(self.weights)

    @property
    def total(self):
        return float(self.weights.sum())


def _empty_rule(dim, degree, surface=False):
    r = QuadRule.__new__(QuadRule)
    r.nodes = np.zeros((0, dim))
    r.weights = np.zeros(0)
    r.normals = np.zeros((0, dim)) if surface else None
    r.exactness_degree = degree
    return r


# ---------------------------------------------------------------------------
# reference rules (conical product: positive weights, any degree)
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _gauss01(q):
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def _jacobi01(q, alpha):
    # nodes/weights for weight (1-t)^alpha on (0, 1)
    x, w = roots_jacobi(q, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


def reference_simplex_rule(dim, degree):
    """Positive-weight rule on the unit simplex, exact to ``degree``.

    Built as a conical (Duffy) product of Gauss and Gauss-Jacobi rules;
    the weight sum equals the simplex measure ``1/dim!``.
    """
    degree = int(degree)
    if degree < 1:
        raise ValueError("degree must be >= 1")
    if degree > MAX_DEGREE:
        raise UnsupportedDegreeError(
            f"degree {degree} above the implemented cap {MAX_DEGREE}"
        )
    if dim not in (1, 2, 3):
        raise ValueError("dim must be 1, 2 or 3")
    q = (degree + 2) // 2
    x0, w0 = _gauss01(q)
    if dim == 1:
        return QuadRule(x0[:, None], w0, exactness_degree=degree)
    x1, w1 = _jacobi01(q, 1.0)
    if dim == 2:
        xi, eta = np.meshgrid(x0, x1, indexing="ij")
        nodes = np.stack([(xi * (1 - eta)).ravel(), eta.ravel()], axis=1)
        weights = np.outer(w0, w1).ravel()
        return QuadRule(nodes, weights, exactness_degree=degree)
    x2, w2 = _jacobi01(q, 2.0)
    xi, eta, zeta = np.meshgrid(x0, x1, x2, indexing="ij")
    nodes = np.stack(
        [
            (xi * (1 - eta) * (1 - zeta)).ravel(),
            (eta * (1 - zeta)).ravel(),
            zeta.ravel(),
        ],
        axis=1,
    )
    weights = np.einsum("i,j,k->ijk", w0, w1, w2).ravel()
    return QuadRule(nodes, weights, exactness_degree=degree)


def _map_rule_to_simplices(ref, verts):
    """Map a reference rule onto a batch of (possibly embedded) simplices.

    verts: (n, k+1, d).  Returns nodes (n*nq, d) and weights (n*nq,).
    """
    n, kp1, d = verts.shape
    k = kp1 - 1
    edges = verts[:, 1:] - verts[:, :1]
    if k == d:
        scale = np.abs(np.linalg.det(edges))
    else:
        gram = np.einsum("nId,nJd->nIJ", edges, edges)
        scale = np.sqrt(np.abs(np.linalg.det(gram)))
    # reference weights already sum to 1/k!, so the Jacobian alone rescales
    nodes = verts[:, None, 0] + np.einsum("qk,nkd->nqd", ref.nodes, edges)
    weights = ref.weights[None, :] * scale[:, None]
    return nodes.reshape(-1, d), weights.ravel()


# ---------------------------------------------------------------------------
# recursive subdivision
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _sample_matrix(k):
    """Vertices first, then edge midpoints, as barycentric rows."""
    rows = list(np.eye(k + 1))
    for a, b in itertools.combinations(range(k + 1), 2):
        r = np.zeros(k + 1)
        r[a] = r[b] = 0.5
        rows.append(r)
    return np.array(rows)


@lru_cache(maxsize=None)
def _facet_samples(k):
    """Per facet of a k-simplex: (vertex ids, sample-row ids on that facet)."""
    edges = list(itertools.combinations(range(k + 1), 2))
    out = []
    for drop in range(k + 1):
        fac = tuple(v for v in range(k + 1) if v != drop)
        idx = list(fac)
        for i, (a, b) in enumerate(edges):
            if a in fac and b in fac:
                idx.append(k + 1 + i)
        out.append((fac, tuple(idx)))
    return tuple(out)


@lru_cache(maxsize=None)
def _child_matrices(k):
    """Uniform refinement into 2^k children (barycentric row maps)."""
    if k == 1:
        return np.array([[[1.0, 0.0], [0.5, 0.5]], [[0.5, 0.5], [0.0, 1.0]]])
    e = np.eye(k + 1)

    def mid(a, b):
        return 0.5 * (e[a] + e[b])

    if k == 2:
        v0, v1, v2 = e
        m01, m02, m12 = mid(0, 1), mid(0, 2), mid(1, 2)
        return np.array(
            [
                [v0, m01, m02],
                [m01, v1, m12],
                [m02, m12, v2],
                [m01, m12, m02],
            ]
        )
    if k == 3:
        x0, x1, x2, x3 = e
        m01, m02, m03 = mid(0, 1), mid(0, 2), mid(0, 3)
        m12, m13, m23 = mid(1, 2), mid(1, 3), mid(2, 3)
        return np.array(
            [
                [x0, m01, m02, m03],
                [m01, x1, m12, m13],
                [m02, m12, x2, m23],
                [m03, m13, m23, x3],
                [m01, m02, m03, m13],
                [m01, m02, m12, m13],
                [m02, m03, m13, m23],
                [m02, m12, m13, m23],
            ]
        )
    raise ValueError(f"unsupported simplex dimension {k}")


def _default_eps(level_set, verts):
    return 1e-12 * max(1.0, float(np.abs(level_set(verts)).max()))


def _refine(level_set, verts, depth, eps):
    """Split a simplex into one-signed leaves plus mixed leaves at max depth.

    Returns (kept_neg, kept_pos, mixed_verts, mixed_vertex_values,
    zero_facets).  The kept lists hold one (n_i, k+1, d) array per
    level.  ``zero_facets`` are leaf facets lying entirely on the zero
    set; they are collected from negative-side leaves only, so each such
    facet is reported exactly once even though leaves on both sides of
    it terminate as one-signed.
    """
    k = verts.shape[0] - 1
    d = verts.shape[1]
    S = _sample_matrix(k)
    C = _child_matrices(k)
    batch = verts[None, :, :]
    kept_neg, kept_pos = [], []
    zero_facets = []
    mixed_final = np.zeros((0, k + 1, d))
    mixed_final_vals = np.zeros((0, k + 1))
    for level in range(depth + 1):
        if len(batch) == 0:
            break
        samples = np.einsum("sk,nkd->nsd", S, batch)
        vals = level_set(samples.reshape(-1, d)).reshape(len(batch), -1)
        mx = vals.max(axis=1)
        mn = vals.min(axis=1)
        mixed = (mx > eps) & (mn < -eps)
        neg = ~mixed & (mx <= eps)
        pos = ~mixed & ~neg
        if neg.any():
            kept_neg.append(batch[neg])
            cand = neg & (mx >= -eps)  # zero facets need samples at |phi|<=eps
            if k >= 2 and cand.any():
                nb, nv = batch[cand], vals[cand]
                for fac, idx in _facet_samples(k):
                    on_zero = np.all(np.abs(nv[:, idx]) <= eps, axis=1)
                    if on_zero.any():
                        zero_facets.append(nb[on_zero][:, fac, :])
        if pos.any():
            kept_pos.append(batch[pos])
        if level == depth:
            mixed_final = batch[mixed]
            mixed_final_vals = vals[mixed][:, : k + 1]
        else:
            parents = batch[mixed]
            batch = np.einsum("ckj,njd->nckd", C, parents).reshape(-1, k + 1, d)
    return kept_neg, kept_pos, mixed_final, mixed_final_vals, zero_facets


# ---------------------------------------------------------------------------
# linear clipping of mixed leaves
# ---------------------------------------------------------------------------


def _simplex_measures(verts):
    kp1 = verts.shape[1]
    edges = verts[:, 1:] - verts[:, :1]
    if kp1 - 1 == verts.shape[2]:
        vol = np.abs(np.linalg.det(edges))
    else:
        gram = np.einsum("nId,nJd->nIJ", edges, edges)
        vol = np.sqrt(np.abs(np.linalg.det(gram)))
    return vol / float(np.prod(np.arange(1, kp1)))


class _PieceCollector:
    """Accumulates clipped simplices together with their owning leaf index."""

    def __init__(self, d, kp1):
        self.d = d
        self.kp1 = kp1
        self.parts = []
        self.owners = []

    def add(self, simplices, owner_ids):
        if len(simplices):
            self.parts.append(np.asarray(simplices, dtype=float))
            self.owners.append(np.broadcast_to(owner_ids, (len(simplices),)).copy())

    def result(self):
        if not self.parts:
            return np.zeros((0, self.kp1, self.d)), np.zeros(0, dtype=int)
        return np.concatenate(self.parts), np.concatenate(self.owners)


def _clip_triangles(verts, vals, eps):
    """Clip mixed triangle leaves against their linear interpolants.

    Returns (neg, pos, segments, owner_neg, owner_pos, owner_seg); the
    owner arrays map every piece back to its leaf index.
    """
    d = verts.shape[2]
    neg = _PieceCollector(d, 3)
    pos = _PieceCollector(d, 3)
    seg = _PieceCollector(d, 2)
    strict = np.all(np.abs(vals) > eps, axis=1)
    strict_ids = np.flatnonzero(strict)

    sv = verts[strict]
    sf = vals[strict]
    if len(sv):
        negmask = sf < 0
        nneg = negmask.sum(axis=1)
        neg.add(sv[nneg == 3], strict_ids[nneg == 3])
        pos.add(sv[nneg == 0], strict_ids[nneg == 0])
        for lone in range(3):
            j, k = (lone + 1) % 3, (lone + 2) % 3
            for lone_is_neg in (True, False):
                if lone_is_neg:
                    m = negmask[:, lone] & ~negmask[:, j] & ~negmask[:, k]
                else:
                    m = ~negmask[:, lone] & negmask[:, j] & negmask[:, k]
                if not m.any():
                    continue
                ids = strict_ids[m]
                vi, vj, vk = sv[m, lone], sv[m, j], sv[m, k]
                fi, fj, fk = sf[m, lone], sf[m, j], sf[m, k]
                pij = vi + (fi / (fi - fj))[:, None] * (vj - vi)
                pik = vi + (fi / (fi - fk))[:, None] * (vk - vi)
                tri_lone = np.stack([vi, pij, pik], axis=1)
                quad1 = np.stack([pij, vj, vk], axis=1)
                quad2 = np.stack([pij, vk, pik], axis=1)
                if lone_is_neg:
                    neg.add(tri_lone, ids)
                    pos.add(quad1, ids)
                    pos.add(quad2, ids)
                else:
                    pos.add(tri_lone, ids)
                    neg.add(quad1, ids)
                    neg.add(quad2, ids)
                seg.add(np.stack([pij, pik], axis=1), ids)

    for i in np.flatnonzero(~strict):
        tn, tp, sg = _clip_triangle_scalar(verts[i], vals[i], eps)
        neg.add(tn, np.full(len(tn), i))
        pos.add(tp, np.full(len(tp), i))
        seg.add(sg, np.full(len(sg), i))

    n, on = neg.result()
    p, op = pos.result()
    z, oz = seg.result()
    return n, p, z, on, op, oz


def _clip_triangle_scalar(V, F, eps):
    """Sutherland-Hodgman split of one triangle; zero vertices join both sides."""

    def polygon(keep_neg):
        out = []
        for a in range(3):
            b = (a + 1) % 3
            fa, fb = F[a], F[b]
            ina = fa <= eps if keep_neg else fa >= -eps
            inb = fb <= eps if keep_neg else fb >= -eps
            if ina:
                out.append(V[a])
            if ina != inb:
                t = fa / (fa - fb)
                out.append(V[a] + t * (V[b] - V[a]))
        return out

    def fan(poly):
        return [
            np.array([poly[0], poly[i], poly[i + 1]])
            for i in range(1, len(poly) - 1)
        ]

    tri_area = _simplex_measures(V[None])[0]
    tol = 1e-13 * tri_area

    def keep_nondegenerate(tris):
        out = []
        for t in tris:
            if _simplex_measures(t[None])[0] > tol:
                out.append(t)
        return out

    neg = keep_nondegenerate(fan(polygon(True)))
    pos = keep_nondegenerate(fan(polygon(False)))

    pts = [V[a] for a in range(3) if abs(F[a]) <= eps]
    for a in range(3):
        b = (a + 1) % 3
        if F[a] > eps and F[b] < -eps or F[a] < -eps and F[b] > eps:
            t = F[a] / (F[a] - F[b])
            pts.append(V[a] + t * (V[b] - V[a]))
    segs = []
    if len(pts) >= 2:
        pts = np.array(pts)
        dists = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
        i, j = np.unravel_index(np.argmax(dists), dists.shape)
        if dists[i, j] > 1e-13 * np.sqrt(tri_area):
            segs.append(np.array([pts[i], pts[j]]))
    return neg, pos, segs


_TET_EDGES = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


def _clip_tets(verts, vals, eps):
    """Clip mixed tetrahedral leaves; same interface as :func:`_clip_triangles`."""
    d = verts.shape[2]
    neg = _PieceCollector(d, 4)
    pos = _PieceCollector(d, 4)
    srf = _PieceCollector(d, 3)
    strict = np.all(np.abs(vals) > eps, axis=1)
    strict_ids = np.flatnonzero(strict)

    sv = verts[strict]
    sf = vals[strict]
    if len(sv):
        negmask = sf < 0
        nneg = negmask.sum(axis=1)
        neg.add(sv[nneg == 4], strict_ids[nneg == 4])
        pos.add(sv[nneg == 0], strict_ids[nneg == 0])

        def cross(m, a, b):
            fa, fb = sf[m, a], sf[m, b]
            t = (fa / (fa - fb))[:, None]
            return sv[m, a] + t * (sv[m, b] - sv[m, a])

        # one vertex against three
        for lone in range(4):
            others = [o for o in range(4) if o != lone]
            for lone_is_neg in (True, False):
                if lone_is_neg:
                    m = (nneg == 1) & negmask[:, lone]
                else:
                    m = (nneg == 3) & ~negmask[:, lone]
                if not m.any():
                    continue
                ids = strict_ids[m]
                vi = sv[m, lone]
                vj, vk, vl = (sv[m, o] for o in others)
                cj, ck, cl = (cross(m, lone, o) for o in others)
                lone_tet = np.stack([vi, cj, ck, cl], axis=1)
                rest = [
                    np.stack([vj, cj, ck, cl], axis=1),
                    np.stack([vj, vk, vl, cl], axis=1),
                    np.stack([vj, vk, cl, ck], axis=1),
                ]
                if lone_is_neg:
                    neg.add(lone_tet, ids)
                    for r in rest:
                        pos.add(r, ids)
                else:
                    pos.add(lone_tet, ids)
                    for r in rest:
                        neg.add(r, ids)
                srf.add(np.stack([cj, ck, cl], axis=1), ids)

        # two against two
        for i, j in itertools.combinations(range(4), 2):
            k, l = [o for o in range(4) if o not in (i, j)]
            m = (nneg == 2) & negmask[:, i] & negmask[:, j]
            if not m.any():
                continue
            ids = strict_ids[m]
            cik, cil = cross(m, i, k), cross(m, i, l)
            cjk, cjl = cross(m, j, k), cross(m, j, l)
            vi, vj, vk, vl = sv[m, i], sv[m, j], sv[m, k], sv[m, l]
            for tet in (
                np.stack([vi, cik, cil, cjl], axis=1),
                np.stack([vi, cik, cjl, cjk], axis=1),
                np.stack([vi, vj, cjk, cjl], axis=1),
            ):
                neg.add(tet, ids)
            for tet in (
                np.stack([vk, cik, cjk, cjl], axis=1),
                np.stack([vk, cik, cjl, cil], axis=1),
                np.stack([vk, vl, cil, cjl], axis=1),
            ):
                pos.add(tet, ids)
            srf.add(np.stack([cik, cil, cjl], axis=1), ids)
            srf.add(np.stack([cik, cjl, cjk], axis=1), ids)

    for i in np.flatnonzero(~strict):
        tn, tp, tz = _clip_tet_scalar(verts[i], vals[i], eps)
        neg.add(tn, np.full(len(tn), i))
        pos.add(tp, np.full(len(tp), i))
        srf.add(tz, np.full(len(tz), i))

    n, on = neg.result()
    p, op = pos.result()
    z, oz = srf.result()
    return n, p, z, on, op, oz


def _clip_tet_scalar(V, F, eps):
    """Tetrahedron with vertices on the zero set: convex-hull fallback."""
    from scipy.spatial import Delaunay, QhullError

    def kept(keep_neg):
        pts = [V[a] for a in range(4) if (F[a] <= eps if keep_neg else F[a] >= -eps)]
        for a, b in _TET_EDGES:
            if F[a] > eps and F[b] < -eps or F[a] < -eps and F[b] > eps:
                t = F[a] / (F[a] - F[b])
                pts.append(V[a] + t * (V[b] - V[a]))
        if len(pts) < 4:
            return []
        pts = np.array(pts)
        try:
            tri = Delaunay(pts)
        except QhullError:
            return []
        vol_tol = 1e-13 * _simplex_measures(V[None])[0]
        return [
            pts[s]
            for s in tri.simplices
            if _simplex_measures(pts[s][None])[0] > vol_tol
        ]

    zero_pts = [V[a] for a in range(4) if abs(F[a]) <= eps]
    for a, b in _TET_EDGES:
        if F[a] > eps and F[b] < -eps or F[a] < -eps and F[b] > eps:
            t = F[a] / (F[a] - F[b])
            zero_pts.append(V[a] + t * (V[b] - V[a]))
    tris = []
    if len(zero_pts) >= 3:
        pts = np.array(zero_pts)
        centroid = pts.mean(axis=0)
        edges = V[1:] - V[0]
        g = np.linalg.solve(edges, F[1:] - F[0])
        gn = np.linalg.norm(g)
        if gn > 0:
            g = g / gn
            u = np.eye(3)[np.argmin(np.abs(g))]
            u = u - np.dot(u, g) * g
            u /= np.linalg.norm(u)
            v = np.cross(g, u)
            loc = (pts - centroid) @ np.stack([u, v], axis=1)
            order = np.argsort(np.arctan2(loc[:, 1], loc[:, 0]))
            pts = pts[order]
            area_tol = 1e-13 * _simplex_measures(V[None])[0] ** (2 / 3)
            for i in range(1, len(pts) - 1):
                t = np.array([pts[0], pts[i], pts[i + 1]])
                if _simplex_measures(t[None])[0] > area_tol:
                    tris.append(t)
    return kept(True), kept(False), tris


def _clip_mixed(verts, vals, eps):
    if verts.shape[1] == 3:
        return _clip_triangles(verts, vals, eps)
    return _clip_tets(verts, vals, eps)


def _check_partition(leaf_verts, neg, pos, owner_neg, owner_pos):
    """Clipped sides of every leaf must add back to the leaf measure."""
    leaf_vol = _simplex_measures(leaf_verts)
    got = np.zeros(len(leaf_verts))
    if len(neg):
        np.add.at(got, owner_neg, _simplex_measures(neg))
    if len(pos):
        np.add.at(got, owner_pos, _simplex_measures(pos))
    # measures of tiny leaves carry absolute (coordinate-scale) roundoff
    k = leaf_verts.shape[1] - 1
    atol = 1e-12 * max(1.0, float(np.abs(leaf_verts).max())) ** k
    bad = np.abs(got - leaf_vol) > 1e-9 * leaf_vol + atol
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ClippingError(
            f"clipped pieces of leaf {i} sum to {got[i]:.17g}, "
            f"leaf measure {leaf_vol[i]:.17g}"
        )


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def cut_volume_rule(vertices, level_set, side, degree, depth, eps=None):
    """Quadrature over the part of a simplex on one side of the zero set.

    ``vertices`` is the (k+1, d) coordinate array of the simplex (k may
    be d-1 for an embedded face).  For an uncut simplex the rule equals
    the standard mapped rule.  The weight sum converges to the measure
    of the kept region as ``depth`` grows.
    """
    vertices = np.asarray(vertices, dtype=float)
    side = Side(side)
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if eps is None:
        eps = _default_eps(level_set, vertices)
    ref = reference_simplex_rule(vertices.shape[0] - 1, degree)
    kept_neg, kept_pos, mixed, mixed_vals, _ = _refine(level_set, vertices, depth, eps)
    kept = kept_neg if side is Side.NEG else kept_pos

    nodes_parts, weight_parts = [], []
    for batch in kept:
        n, w = _map_rule_to_simplices(ref, batch)
        nodes_parts.append(n)
        weight_parts.append(w)
    if len(mixed):
        neg, pos, _, on, op, _ = _clip_mixed(mixed, mixed_vals, eps)
        _check_partition(mixed, neg, pos, on, op)
        chosen, owner = (neg, on) if side is Side.NEG else (pos, op)
        if len(chosen):
            leaf_vol = _simplex_measures(mixed)
            keep = _simplex_measures(chosen) > 1e-14 * leaf_vol[owner]
            if keep.any():
                n, w = _map_rule_to_simplices(ref, chosen[keep])
                nodes_parts.append(n)
                weight_parts.append(w)
    if not nodes_parts:
        return _empty_rule(vertices.shape[1], degree)
    return QuadRule(
        np.concatenate(nodes_parts),
        np.concatenate(weight_parts),
        exactness_degree=degree,
    )


def _project_to_zero(level_set, pts, tol, context=""):
    x = pts.copy()
    f = level_set(x)
    for _ in range(NEWTON_MAXIT):
        active = np.abs(f) > tol
        if not active.any():
            return x
        g = level_set.gradient(x[active])
        gg = np.einsum("nd,nd->n", g, g)
        if np.any(gg <= 1e-300):
            raise ProjectionError(f"vanishing gradient during projection {context}")
        x[active] -= (f[active] / gg)[:, None] * g
        f = level_set(x)
    bad = int(np.argmax(np.abs(f)))
    raise ProjectionError(
        f"no convergence after {NEWTON_MAXIT} Newton steps {context}; "
        f"worst node {x[bad]} with value {f[bad]:.3e}"
    )


def cut_surface_rule(vertices, level_set, degree, depth, eps=None, project=True):
    """Quadrature over the zero set inside a (cut) element, with normals.

    On each mixed leaf the zero set of the linearised field is a segment
    (2D) or planar polygon (3D); reference nodes on those pieces are
    projected onto the true zero set along the gradient.  Weights are
    the linearised measure.
    """
    vertices = np.asarray(vertices, dtype=float)
    d = vertices.shape[1]
    if eps is None:
        eps = _default_eps(level_set, vertices)
    _, _, mixed, mixed_vals, zero_facets = _refine(level_set, vertices, depth, eps)
    zeros = np.zeros((0, d, d))
    if len(mixed):
        _, _, zeros, _, _, owner_zero = _clip_mixed(mixed, mixed_vals, eps)
        if len(zeros):
            # codim-1 measure scale of each leaf, for the degeneracy threshold
            leaf_size = _simplex_measures(mixed) ** ((d - 1.0) / d)
            zeros = zeros[_simplex_measures(zeros) > 1e-14 * leaf_size[owner_zero]]
    if zero_facets:
        zeros = np.concatenate([zeros] + zero_facets)
    if not len(zeros):
        return _empty_rule(d, degree, surface=True)
    ref = reference_simplex_rule(d - 1, degree)
    nodes, weights = _map_rule_to_simplices(ref, zeros)
    keep = weights > 0
    nodes, weights = nodes[keep], weights[keep]
    if project:
        scale = max(1.0, float(np.abs(level_set(vertices)).max()))
        nodes = _project_to_zero(level_set, nodes, 1e-13 * scale, context="(surface rule)")
    g = level_set.gradient(nodes)
    norms = np.linalg.norm(g, axis=1)
    if np.any(norms <= 0):
        raise ProjectionError("vanishing gradient at surface node")
    normals = g / norms[:, None]
    rule = QuadRule(nodes, weights, exactness_degree=degree)
    rule.normals = normals
    return rule


def cut_face_rule(vertices, level_set, side, degree, depth, eps=None):
    """Quadrature over the part of a face on one side of the zero set.

    2D faces (edges) are handled by bracketing the single root of
    ``phi`` along the edge and mapping a Gauss rule to the kept
    sub-segment; more than one sign change raises
    :class:`MultipleCrossings`.  3D faces (triangles) reuse the
    subdivision machinery one dimension down.
    """
    vertices = np.asarray(vertices, dtype=float)
    side = Side(side)
    if eps is None:
        eps = _default_eps(level_set, vertices)
    if vertices.shape[0] == 3:
        return cut_volume_rule(vertices, level_set, side, degree, depth, eps=eps)

    a, b = vertices
    h_e = float(np.linalg.norm(b - a))
    nsamp = max(65, 2**depth + 1)
    t = np.linspace(0.0, 1.0, nsamp)
    pts = a[None, :] + t[:, None] * (b - a)[None, :]
    vals = level_set(pts)
    mx, mn = vals.max(), vals.min()
    ref = reference_simplex_rule(1, degree)
    if mx <= eps:  # fully on the negative side
        if side is Side.NEG:
            return QuadRule(pts[0] + ref.nodes * (b - a), ref.weights * h_e, None, degree)
        return _empty_rule(len(a), degree)
    if mn >= -eps:
        if side is Side.POS:
            return QuadRule(pts[0] + ref.nodes * (b - a), ref.weights * h_e, None, degree)
        return _empty_rule(len(a), degree)

    s = np.sign(vals)
    s = s[s != 0]
    crossings = int(np.count_nonzero(s[1:] * s[:-1] < 0))
    if crossings > 1:
        raise MultipleCrossings(
            f"zero set crosses the face {crossings} times (edge of length {h_e:.3g})"
        )
    # bracket the single root between the last strict-sign sample of the
    # leading sign and the first strict sample of the trailing sign
    strict_idx = np.flatnonzero(np.abs(vals) > eps)
    s0 = np.sign(vals[strict_idx[0]])
    flipped = strict_idx[np.sign(vals[strict_idx]) != s0]
    hi_i = flipped[0]
    lo_i = strict_idx[(strict_idx < hi_i)][-1]
    lo, hi, flo = t[lo_i], t[hi_i], vals[lo_i]
    tol = 1e-13  # in the unit edge parameter, i.e. 1e-13 * h_e in length
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = level_set((a + mid * (b - a))[None, :])[0]
        if fm == 0.0:
            lo = hi = mid
            break
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    root = 0.5 * (lo + hi)
    neg_first = s0 < 0
    if (side is Side.NEG) == neg_first:
        t0, t1 = 0.0, root
    else:
        t0, t1 = root, 1.0
    if t1 - t0 <= 0:
        return _empty_rule(len(a), degree)
    seg_a = a + t0 * (b - a)
    seg_b = a + t1 * (b - a)
    nodes = seg_a[None, :] + ref.nodes * (seg_b - seg_a)[None, :]
    return QuadRule(nodes, ref.weights * (t1 - t0) * h_e, None, degree)
