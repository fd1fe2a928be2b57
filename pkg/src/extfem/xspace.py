"""Finite element spaces whose unknowns live only on interior elements.

Cut elements carry no degrees of freedom.  Instead each cut element
delegates evaluation to an interior host element from its patch: the
host's polynomial is evaluated as-is at points of the cut element
(reference coordinates simply fall outside the unit simplex).  This
realises the extension of the interior space onto the full cover
without re-expanding coefficients, so global polynomials are reproduced
exactly.
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np

from .geometry import Mode, Tag

__all__ = ["LagrangeBasis", "ExtendedSpace", "build_space"]

MAX_DEGREE = 4


def _multi_indices(dim, total):
    """All exponent tuples of length ``dim`` with sum <= total, lexicographic."""
    out = []
    for c in itertools.product(range(total + 1), repeat=dim):
        if sum(c) <= total:
            out.append(c)
    out.sort()
    return np.array(out, dtype=int)


class LagrangeBasis:
    """Nodal basis of degree ``m`` on the unit simplex, equispaced nodes."""

    def __init__(self, dim, degree):
        if degree < 1 or degree > MAX_DEGREE:
            raise ValueError(f"degree must be in 1..{MAX_DEGREE}")
        self.dim = dim
        self.degree = degree
        exps = _multi_indices(dim, degree)
        self.exponents = exps
        self.n_local = len(exps)
        # node at barycentric integers (m - sum(k), k_1, ..., k_dim) / m
        self.nodes_bary = np.column_stack([degree - exps.sum(axis=1), exps])
        self.ref_nodes = exps / float(degree)
        V = self._monomials(self.ref_nodes)
        self.coeff = np.linalg.solve(V, np.eye(self.n_local))

    def _monomials(self, pts):
        pts = np.atleast_2d(pts)
        out = np.ones((len(pts), self.n_local))
        for j, e in enumerate(self.exponents):
            for d in range(self.dim):
                if e[d]:
                    out[:, j] *= pts[:, d] ** e[d]
        return out

    def _monomial_grads(self, pts):
        pts = np.atleast_2d(pts)
        out = np.zeros((len(pts), self.n_local, self.dim))
        for j, e in enumerate(self.exponents):
            for d in range(self.dim):
                if e[d] == 0:
                    continue
                g = np.full(len(pts), float(e[d]))
                for dd in range(self.dim):
                    p = e[dd] - (dd == d)
                    if p:
                        g *= pts[:, dd] ** p
                out[:, j, d] = g
        return out

    def eval(self, pts):
        """Shape function values and reference gradients at ``pts``.

        Returns ``(values, grads)`` with shapes (n, n_local) and
        (n, n_local, dim).  Points may lie outside the unit simplex.
        """
        vals = self._monomials(pts) @ self.coeff
        grads = np.einsum("pmd,mj->pjd", self._monomial_grads(pts), self.coeff)
        return vals, grads


@lru_cache(maxsize=None)
def _basis(dim, degree):
    return LagrangeBasis(dim, degree)


class ExtendedSpace:
    """Degrees of freedom on interior elements plus the delegation map.

    Built by :func:`build_space`.  ``delegate(K, side)`` names the
    element whose polynomial represents the discrete function on
    element ``K`` (itself for interior elements, the host for cut
    ones); all evaluation goes through the delegate's affine map.
    """

    def __init__(self, mesh, cls, degree, continuity):
        continuity = str(continuity).upper()
        if continuity not in ("C0", "DG"):
            raise ValueError("continuity must be 'C0' or 'DG'")
        self.mesh = mesh
        self.cls = cls
        self.degree = int(degree)
        self.continuity = continuity
        self.mode = cls.mode
        self.basis = _basis(mesh.dim, self.degree)
        self.level_set = None  # cached by the assemblers
        self._build()

    # -- construction ---------------------------------------------------------

    def _interior_elements(self, side):
        tag = Tag.SIDE0 if side == 0 else Tag.SIDE1
        return np.flatnonzero(self.cls.element_tag == tag)

    def _build(self):
        mesh, cls = self.mesh, self.cls
        nb = self.basis.n_local
        sides = (0, 1) if self.mode is Mode.INTERFACE else (0,)

        self.element_dofs = np.full((mesh.n_elements, nb), -1, dtype=np.int64)
        dof_points = []
        dof_side = []
        next_dof = 0
        key_map = {}
        for side in sides:
            interior = self._interior_elements(side)
            if len(interior) == 0:
                raise ValueError(
                    f"no interior elements on side {side}: the mesh does not"
                    " resolve the domain at this resolution"
                )
            for K in interior:
                everts = mesh.elements[K]
                coords = mesh.vertices[everts]
                for loc, bary in enumerate(self.basis.nodes_bary):
                    if self.continuity == "C0":
                        key = (
                            side,
                            tuple(
                                sorted(
                                    (int(v), int(c))
                                    for v, c in zip(everts, bary)
                                    if c > 0
                                )
                            ),
                        )
                        dof = key_map.get(key)
                        if dof is None:
                            dof = key_map[key] = next_dof
                            next_dof += 1
                            dof_points.append(bary @ coords / self.basis.degree)
                            dof_side.append(side)
                    else:
                        dof = next_dof
                        next_dof += 1
                        dof_points.append(bary @ coords / self.basis.degree)
                        dof_side.append(side)
                    self.element_dofs[K, loc] = dof

        self.dof_count = next_dof
        self.dof_points = np.array(dof_points)
        self.dof_side = np.array(dof_side, dtype=np.int8)

        ne = mesh.n_elements
        self.delegate0 = np.full(ne, -1, dtype=np.int64)
        self.delegate1 = np.full(ne, -1, dtype=np.int64)
        tags = cls.element_tag
        self.delegate0[tags == Tag.SIDE0] = np.flatnonzero(tags == Tag.SIDE0)
        cut = cls.cut_elements()
        self.delegate0[cut] = cls.host0[cut]
        if self.mode is Mode.INTERFACE:
            self.delegate1[tags == Tag.SIDE1] = np.flatnonzero(tags == Tag.SIDE1)
            self.delegate1[cut] = cls.host1[cut]

        if self.mode is Mode.BOUNDARY:
            self.active_elements = cls.active_elements()
        else:
            self.active_elements = np.arange(ne)

    # -- queries ----------------------------------------------------------------

    def delegate(self, K, side=None):
        side = self._resolve_side(K, side)
        H = self.delegate0[K] if side == 0 else self.delegate1[K]
        if H < 0:
            raise ValueError(f"element {K} has no representation on side {side}")
        return int(H)

    def _resolve_side(self, K, side):
        if side is not None:
            return int(side)
        if self.mode is Mode.BOUNDARY:
            return 0
        tag = self.cls.element_tag[K]
        if tag == Tag.CUT:
            raise ValueError(f"cut element {K} needs an explicit side")
        return 0 if tag == Tag.SIDE0 else 1

    def dofs_of(self, K, side=None):
        """Global dof indices carried by the delegate of ``(K, side)``."""
        return self.element_dofs[self.delegate(K, side)]

    def eval_basis(self, K, points, side=None):
        """Basis values/gradients of the delegate's polynomial at ``points``.

        Returns ``(dofs, values, grads)``; values has shape
        (n_points, n_local) and grads (n_points, n_local, dim).  Points
        are mapped through the delegate's affine reference map, so they
        may land outside the unit simplex by design.
        """
        H = self.delegate(K, side)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ref = (pts - self.mesh.map_origin[H]) @ self.mesh.map_invB[H].T
        vals, gref = self.basis.eval(ref)
        grads = np.einsum("pjd,dD->pjD", gref, self.mesh.map_invB[H])
        return self.element_dofs[H], vals, grads

    def evaluate(self, coeffs, K, points, side=None, gradient=False):
        """Value (and optionally gradient) of the coefficient vector on ``K``."""
        dofs, vals, grads = self.eval_basis(K, points, side)
        u = vals @ coeffs[dofs]
        if gradient:
            return u, np.einsum("pjd,j->pd", grads, coeffs[dofs])
        return u

    def interpolate(self, u):
        """Nodal interpolant: coefficients are ``u`` at the dof positions.

        In INTERFACE mode ``u`` may be a pair ``(u_neg, u_pos)``; a
        single callable is used for both sides.
        """
        if isinstance(u, (tuple, list)):
            u0, u1 = u
        else:
            u0 = u1 = u
        coeffs = np.empty(self.dof_count)
        for side, fn in ((0, u0), (1, u1)):
            idx = np.flatnonzero(self.dof_side == side)
            if len(idx) == 0:
                continue
            pts = self.dof_points[idx]
            try:
                vals = np.asarray(fn(pts), dtype=float).reshape(len(idx))
            except Exception:
                vals = np.array([float(fn(p)) for p in pts])
            coeffs[idx] = vals
        return coeffs


def build_space(mesh, cls, degree, continuity="C0"):
    """Build the extension space for a classified mesh.

    Interior elements carry standard Lagrange dofs (shared across
    elements in C0 mode, element-local in DG mode); cut elements
    delegate to their hosts.  In INTERFACE mode the two interior
    sub-spaces share one global numbering.
    """
    if cls.host0 is None:
        raise ValueError("assign_hosts must run before build_space")
    return ExtendedSpace(mesh, cls, degree, continuity)
