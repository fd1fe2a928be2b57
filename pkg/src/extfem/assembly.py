"""Assembly of the interior-penalty / Nitsche systems on cut meshes.

Both schemes share three ingredient families:

* volume stiffness over the part of each element inside the domain,
* face terms ``-({grad u}.[v] + s {grad v}.[u] - (pen/h_e)[u].[v])``
  over the in-domain part of every active face (``s`` is +1 for the
  symmetric variant and -1 for the non-symmetric one),
* zero-set terms of the same shape with ``pen/h_K``, which impose the
  Dirichlet or jump data weakly through the right-hand side.

Traces of a discrete function on a cut element are traces of its host's
polynomial, so jumps across faces touching cut elements do not vanish
even for C0 spaces; all active faces are assembled in both continuity
modes and only faces whose two sides share the same delegate (provably
zero jump) are skipped.

Assembly is deterministic: entities are visited in index order and
duplicate triplets are combined by a stable sort, so repeated runs are
bitwise identical and the symmetric variant yields a bitwise-symmetric
matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .cutquad import (
    Side,
    cut_face_rule,
    cut_surface_rule,
    cut_volume_rule,
    reference_simplex_rule,
)
from .geometry import Mode, Tag

__all__ = [
    "ModelProblem",
    "SparseSystem",
    "assemble_boundary",
    "assemble_interface",
    "galerkin_residual",
    "local_cell_matrix",
    "local_face_matrix",
    "local_interface_matrix",
    "write_matrix_market",
]

DEFAULT_DEPTH = 5


@dataclass
class ModelProblem:
    """Data of the model problem (source, boundary/jump data, penalty).

    ``f`` is the volume source (a pair per side in INTERFACE mode),
    ``g`` the Dirichlet datum, ``a``/``b`` the solution-/flux-jump data
    on the zero set (INTERFACE only).  ``penalty`` scales the h^-1 jump
    terms; the symmetric variant needs it large enough, the
    non-symmetric one accepts any positive value.
    """

    variant: Mode
    f: object
    g: object
    a: object = None
    b: object = None
    alpha0: float = 1.0
    alpha1: float = 1.0
    penalty: float = 10.0
    symmetry: str = "sym"

    def __post_init__(self):
        if not isinstance(self.variant, Mode):
            self.variant = Mode(self.variant)
        if self.symmetry not in ("sym", "nonsym"):
            raise ValueError("symmetry must be 'sym' or 'nonsym'")
        if self.penalty <= 0:
            raise ValueError("penalty must be positive")
        if self.alpha0 <= 0 or self.alpha1 <= 0:
            raise ValueError("diffusion coefficients must be positive")

    @property
    def sym_sign(self):
        return 1.0 if self.symmetry == "sym" else -1.0

    def alpha(self, side):
        return self.alpha0 if side == 0 else self.alpha1

    def f_side(self, side):
        if isinstance(self.f, (tuple, list)):
            return self.f[side]
        return self.f


@dataclass
class SparseSystem:
    """Assembled stiffness matrix (CSR) and load vector."""

    A: sp.csr_matrix
    rhs: np.ndarray

    @property
    def n(self):
        return self.A.shape[0]

    def dump(self, matrix_path, rhs_path=None):
        write_matrix_market(matrix_path, self.A)
        if rhs_path is not None:
            with open(rhs_path, "w") as fh:
                fh.write("%%MatrixMarket matrix array real general\n")
                fh.write(f"{len(self.rhs)} 1\n")
                for v in self.rhs:
                    fh.write(f"{v:.17g}\n")


def write_matrix_market(path, A):
    """Write a sparse matrix in Matrix Market coordinate format (1-based)."""
    coo = sp.coo_matrix(A)
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")


def _call_scalar(fn, pts):
    pts = np.atleast_2d(pts)
    try:
        out = np.asarray(fn(pts), dtype=float)
        if out.shape == (len(pts),):
            return out
    except Exception:
        pass
    return np.array([float(fn(p)) for p in pts])


def _call_vector(fn, pts):
    pts = np.atleast_2d(pts)
    try:
        out = np.asarray(fn(pts), dtype=float)
        if out.shape == pts.shape:
            return out
    except Exception:
        pass
    return np.array([np.asarray(fn(p), dtype=float) for p in pts])


class _Accumulator:
    """COO triplet store with stable deterministic duplicate reduction.

    Every local block of the symmetric variant is symmetric up to
    rounding; a final ``(A + A.T)/2`` in :meth:`tocsr` makes the global
    matrix bitwise symmetric without constraining accumulation order.
    """

    def __init__(self, n, symmetric=False):
        self.n = n
        self.symmetric = symmetric
        self.rows = []
        self.cols = []
        self.vals = []
        self.rhs = np.zeros(n)

    def add(self, dofs, M):
        dofs = np.asarray(dofs)
        k = len(dofs)
        self.rows.append(np.repeat(dofs, k))
        self.cols.append(np.tile(dofs, k))
        self.vals.append(np.asarray(M, dtype=float).ravel())

    def add_batch(self, dofs, M):
        # dofs (nE, k), M (nE, k, k)
        nE, k = dofs.shape
        self.rows.append(np.repeat(dofs, k, axis=1).ravel())
        self.cols.append(np.tile(dofs, (1, k)).ravel())
        self.vals.append(M.ravel())

    def add_rhs(self, dofs, v):
        np.add.at(self.rhs, np.asarray(dofs).ravel(), np.asarray(v).ravel())

    def tocsr(self):
        if self.rows:
            rows = np.concatenate(self.rows)
            cols = np.concatenate(self.cols)
            vals = np.concatenate(self.vals)
        else:
            rows = cols = np.zeros(0, dtype=int)
            vals = np.zeros(0)
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if len(rows):
            new = np.empty(len(rows), dtype=bool)
            new[0] = True
            new[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            starts = np.flatnonzero(new)
            vals = np.add.reduceat(vals, starts)
            rows, cols = rows[starts], cols[starts]
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        np.cumsum(indptr, out=indptr)
        A = sp.csr_matrix((vals, cols, indptr), shape=(self.n, self.n))
        if self.symmetric:
            A = (A + A.T) / 2.0
            A.sort_indices()
        return A


def _mirror(P):
    """Exactly symmetric copy of an (approximately symmetric) matrix batch."""
    if P.ndim == 2:
        U = np.triu(P)
        return U + np.triu(P, 1).T
    U = np.triu(P)
    return U + np.transpose(np.triu(P, 1), (0, 2, 1))


def _face_contrib_matrix(Vj, An, w, pen_over_h, s, sym):
    """Local face matrix for stacked jump rows Vj and average rows An."""
    D = np.einsum("qi,q,qj->ij", Vj, w, An)
    P = np.einsum("qi,q,qj->ij", Vj, w, Vj)
    if sym:
        return -(D + D.T) + pen_over_h * _mirror(P)
    E = np.einsum("qi,q,qj->ij", An, w, Vj)
    return -D + s * (-E) + pen_over_h * P


# ---------------------------------------------------------------------------
# element-level pieces (shared by the assemblers and exposed for testing)
# ---------------------------------------------------------------------------


def _quad_degree(space, quad_degree):
    return int(quad_degree) if quad_degree else 2 * space.degree + 2


def _cell_piece(space, ls, problem, K, side, degree, depth, want_rhs=True):
    """Volume contribution of one element on one side; None when empty."""
    mesh = space.mesh
    tag = space.cls.element_tag[K]
    other = Tag.SIDE1 if side == 0 else Tag.SIDE0
    if tag == other:
        return None
    if tag == Tag.CUT:
        rule = cut_volume_rule(
            mesh.element_vertices(K),
            ls,
            Side.NEG if side == 0 else Side.POS,
            degree,
            depth,
            eps=space.cls.eps_geom,
        )
        if len(rule) == 0:
            return None
        nodes, w = rule.nodes, rule.weights
    else:
        ref = reference_simplex_rule(mesh.dim, degree)
        nodes = mesh.map_origin[K] + ref.nodes @ mesh.map_B[K].T
        w = ref.weights * mesh.map_detB[K]
    dofs, vals, grads = space.eval_basis(K, nodes, side=side)
    alpha = problem.alpha(side) if problem.variant is Mode.INTERFACE else 1.0
    M = alpha * np.einsum("q,qid,qjd->ij", w, grads, grads)
    M = _mirror(M)
    rl = None
    if want_rhs:
        fv = _call_scalar(problem.f_side(side), nodes)
        rl = (vals * (w * fv)[:, None]).sum(axis=0)
    return dofs, M, rl


def _face_rule(space, ls, f, side, degree, depth):
    mesh = space.mesh
    tag = space.cls.face_tag[f]
    same = Tag.SIDE0 if side == 0 else Tag.SIDE1
    other = Tag.SIDE1 if side == 0 else Tag.SIDE0
    if tag == other:
        return None
    fverts = mesh.face_vertices(f)
    if tag == same:
        ref = reference_simplex_rule(mesh.dim - 1, degree)
        nodes = fverts[0] + ref.nodes @ (fverts[1:] - fverts[0])
        if mesh.dim == 2:
            scale = np.linalg.norm(fverts[1] - fverts[0])
        else:
            e = fverts[1:] - fverts[0]
            scale = np.sqrt(np.abs(np.linalg.det(e @ e.T)))
        return nodes, ref.weights * scale
    rule = cut_face_rule(
        fverts,
        ls,
        Side.NEG if side == 0 else Side.POS,
        degree,
        depth,
        eps=space.cls.eps_geom,
    )
    if len(rule) == 0:
        return None
    return rule.nodes, rule.weights


def _face_piece(space, ls, problem, f, side, degree, depth, want_rhs=True):
    """Face contribution of one face on one side; None when empty/skipped."""
    mesh = space.mesh
    rw = _face_rule(space, ls, f, side, degree, depth)
    if rw is None:
        return None
    nodes, w = rw
    K1, K2 = mesh.face_elements[f]
    normal = mesh.face_normal(f)
    h_e = mesh.h_e[f]
    s = problem.sym_sign
    interface = problem.variant is Mode.INTERFACE
    alpha = problem.alpha(side) if interface else 1.0
    pen = problem.penalty / h_e

    d1, V1, G1 = space.eval_basis(K1, nodes, side=side if interface else None)
    G1n = np.einsum("qjd,d->qj", G1, normal)
    if K2 >= 0:
        if space.delegate(K1, side if interface else None) == space.delegate(
            K2, side if interface else None
        ):
            return None  # identical polynomials: jump is exactly zero
        d2, V2, G2 = space.eval_basis(K2, nodes, side=side if interface else None)
        G2n = np.einsum("qjd,d->qj", G2, normal)
        dofs = np.concatenate([d1, d2])
        Vj = np.concatenate([V1, -V2], axis=1)
        An = 0.5 * alpha * np.concatenate([G1n, G2n], axis=1)
    else:
        dofs = d1
        Vj = V1
        An = alpha * G1n
    M = _face_contrib_matrix(Vj, An, w, pen, s, problem.symmetry == "sym")
    rl = None
    if want_rhs and K2 < 0 and interface:
        gv = _call_scalar(problem.g, nodes)
        rl = ((-s * An + pen * Vj) * (w * gv)[:, None]).sum(axis=0)
    return dofs, M, rl


def _interface_piece(space, ls, problem, K, degree, depth, want_rhs=True):
    """Zero-set contribution of one cut element; None when empty."""
    mesh = space.mesh
    rule = cut_surface_rule(
        mesh.element_vertices(K), ls, degree, depth, eps=space.cls.eps_geom
    )
    if len(rule) == 0:
        return None
    nodes, w, normals = rule.nodes, rule.weights, rule.normals
    h_K = mesh.h_K[K]
    pen = problem.penalty / h_K
    s = problem.sym_sign
    if problem.variant is Mode.BOUNDARY:
        dofs, V, G = space.eval_basis(K, nodes, side=0)
        Gn = np.einsum("qjd,qd->qj", G, normals)
        M = _face_contrib_matrix(V, Gn, w, pen, s, problem.symmetry == "sym")
        rl = None
        if want_rhs:
            gv = _call_scalar(problem.g, nodes)
            rl = ((-s * Gn + pen * V) * (w * gv)[:, None]).sum(axis=0)
        return dofs, M, rl
    d0, V0, G0 = space.eval_basis(K, nodes, side=0)
    d1, V1, G1 = space.eval_basis(K, nodes, side=1)
    G0n = np.einsum("qjd,qd->qj", G0, normals)
    G1n = np.einsum("qjd,qd->qj", G1, normals)
    dofs = np.concatenate([d0, d1])
    Vj = np.concatenate([V0, -V1], axis=1)
    An = 0.5 * np.concatenate([problem.alpha0 * G0n, problem.alpha1 * G1n], axis=1)
    M = _face_contrib_matrix(Vj, An, w, pen, s, problem.symmetry == "sym")
    rl = None
    if want_rhs:
        Vavg = 0.5 * np.concatenate([V0, V1], axis=1)
        bv = _call_scalar(problem.b, nodes) if problem.b is not None else 0.0 * w
        av = _call_scalar(problem.a, nodes) if problem.a is not None else 0.0 * w
        rl = (
            Vavg * (w * bv)[:, None]
            + (-s * An + pen * Vj) * (w * av)[:, None]
        ).sum(axis=0)
    return dofs, M, rl


# ---------------------------------------------------------------------------
# public element-level operations
# ---------------------------------------------------------------------------


def _resolve_ls(space, ls):
    ls = ls if ls is not None else getattr(space, "level_set", None)
    if ls is None:
        raise ValueError("a level set is required (pass ls=...)")
    return ls


def local_cell_matrix(space, K, problem, quad_degree=None, quad_depth=DEFAULT_DEPTH, ls=None):
    """Volume stiffness of one element (both sides in INTERFACE mode)."""
    ls = _resolve_ls(space, ls)
    degree = _quad_degree(space, quad_degree)
    sides = (0, 1) if problem.variant is Mode.INTERFACE else (0,)
    n = space.dof_count
    M = sp.lil_matrix((n, n))
    for side in sides:
        piece = _cell_piece(space, ls, problem, K, side, degree, quad_depth, False)
        if piece is None:
            continue
        dofs, Mloc, _ = piece
        M[np.ix_(dofs, dofs)] += Mloc
    return M.tocsr()


def local_face_matrix(space, f, problem, quad_degree=None, quad_depth=DEFAULT_DEPTH, ls=None):
    """Interior-penalty block of one face (both side pieces in INTERFACE mode)."""
    ls = _resolve_ls(space, ls)
    degree = _quad_degree(space, quad_degree)
    sides = (0, 1) if problem.variant is Mode.INTERFACE else (0,)
    n = space.dof_count
    M = sp.lil_matrix((n, n))
    for side in sides:
        piece = _face_piece(space, ls, problem, f, side, degree, quad_depth, False)
        if piece is None:
            continue
        dofs, Mloc, _ = piece
        M[np.ix_(dofs, dofs)] += Mloc
    return M.tocsr()


def local_interface_matrix(space, K, problem, quad_degree=None, quad_depth=DEFAULT_DEPTH, ls=None):
    """Zero-set (Nitsche) block of one cut element."""
    ls = _resolve_ls(space, ls)
    degree = _quad_degree(space, quad_degree)
    n = space.dof_count
    M = sp.lil_matrix((n, n))
    piece = _interface_piece(space, ls, problem, K, degree, quad_depth, False)
    if piece is not None:
        dofs, Mloc, _ = piece
        M[np.ix_(dofs, dofs)] += Mloc
    return M.tocsr()


# ---------------------------------------------------------------------------
# assemblers
# ---------------------------------------------------------------------------


def _batched_uncut_volume(space, problem, acc, side, degree):
    """Vectorised volume terms for all uncut elements of one side."""
    mesh = space.mesh
    tag = Tag.SIDE0 if side == 0 else Tag.SIDE1
    els = np.flatnonzero(space.cls.element_tag == tag)
    if problem.variant is Mode.BOUNDARY and side == 1:
        return
    if len(els) == 0:
        return
    ref = reference_simplex_rule(mesh.dim, degree)
    vals, gref = space.basis.eval(ref.nodes)
    alpha = problem.alpha(side) if problem.variant is Mode.INTERFACE else 1.0
    chunk = max(1, 2_000_000 // (len(ref) * space.basis.n_local))
    for lo in range(0, len(els), chunk):
        E = els[lo : lo + chunk]
        invB = mesh.map_invB[E]
        grads = np.einsum("qjd,edD->eqjD", gref, invB)
        w = ref.weights[None, :] * mesh.map_detB[E][:, None]
        M = alpha * np.einsum("eq,eqid,eqjd->eij", w, grads, grads)
        M = _mirror(M)
        dofs = space.element_dofs[E]
        acc.add_batch(dofs, M)
        # map_B axes are (element, dim, k): contract over the k axis
        nodes = mesh.map_origin[E][:, None] + np.einsum(
            "qk,eDk->eqD", ref.nodes, mesh.map_B[E]
        )
        fv = _call_scalar(problem.f_side(side), nodes.reshape(-1, mesh.dim)).reshape(
            len(E), len(ref)
        )
        rl = np.einsum("eq,qj->ej", w * fv, vals)
        acc.add_rhs(dofs, rl)


def _face_batch_geometry(space, faces, ref):
    """Physical quad nodes and scaled weights for a batch of full faces."""
    mesh = space.mesh
    fv = mesh.vertices[mesh.faces[faces]]
    edges = fv[:, 1:] - fv[:, :1]
    if mesh.dim == 2:
        scale = np.linalg.norm(edges[:, 0], axis=1)
    else:
        gram = np.einsum("fId,fJd->fIJ", edges, edges)
        scale = np.sqrt(np.abs(np.linalg.det(gram)))
    nodes = fv[:, None, 0] + np.einsum("qk,fkd->fqd", ref.nodes, edges)
    w = ref.weights[None, :] * scale[:, None]
    return nodes, w


def _batch_traces(space, elements, nodes, normals):
    """Values and normal gradients of the given elements at per-face nodes."""
    mesh = space.mesh
    nf, nq, d = nodes.shape
    ref = np.einsum(
        "fqd,fkd->fqk", nodes - mesh.map_origin[elements][:, None], mesh.map_invB[elements]
    )
    vals, gref = space.basis.eval(ref.reshape(-1, d))
    nb = space.basis.n_local
    vals = vals.reshape(nf, nq, nb)
    gphys = np.einsum(
        "fqjk,fkD->fqjD", gref.reshape(nf, nq, nb, d), mesh.map_invB[elements]
    )
    Gn = np.einsum("fqjD,fD->fqj", gphys, normals)
    return vals, Gn


def _batched_full_faces(space, ls, problem, acc, side, degree):
    """Vectorised face terms for all one-signed (full-rule) faces of a side."""
    mesh = space.mesh
    cls = space.cls
    tag = Tag.SIDE0 if side == 0 else Tag.SIDE1
    faces = np.flatnonzero(cls.face_tag == tag)
    if len(faces) == 0:
        return
    interface = problem.variant is Mode.INTERFACE
    s = problem.sym_sign
    sym = problem.symmetry == "sym"
    alpha = problem.alpha(side) if interface else 1.0
    delegate = space.delegate0 if side == 0 else space.delegate1
    ref = reference_simplex_rule(mesh.dim - 1, degree)
    normals_all = mesh.face_normals()

    K1 = mesh.face_elements[faces, 0]
    K2 = mesh.face_elements[faces, 1]
    for boundary in (False, True):
        sel = (K2 < 0) if boundary else (K2 >= 0)
        fs, k1, k2 = faces[sel], K1[sel], K2[sel]
        if not boundary:
            keep = delegate[k1] != delegate[k2]  # identical delegates: zero jump
            fs, k1, k2 = fs[keep], k1[keep], k2[keep]
        if len(fs) == 0:
            continue
        chunk = max(1, 400_000 // max(1, len(ref) * space.basis.n_local))
        for lo in range(0, len(fs), chunk):
            F = fs[lo : lo + chunk]
            E1 = delegate[k1[lo : lo + chunk]]
            nodes, w = _face_batch_geometry(space, F, ref)
            nrm = normals_all[F]
            pen = problem.penalty / mesh.h_e[F]
            V1, G1n = _batch_traces(space, E1, nodes, nrm)
            if boundary:
                Vj, An = V1, alpha * G1n
                dofs = space.element_dofs[E1]
            else:
                E2 = delegate[k2[lo : lo + chunk]]
                V2, G2n = _batch_traces(space, E2, nodes, nrm)
                Vj = np.concatenate([V1, -V2], axis=2)
                An = 0.5 * alpha * np.concatenate([G1n, G2n], axis=2)
                dofs = np.concatenate(
                    [space.element_dofs[E1], space.element_dofs[E2]], axis=1
                )
            D = np.einsum("fqi,fq,fqj->fij", Vj, w, An)
            P = np.einsum("fqi,fq,fqj->fij", Vj, w, Vj)
            if sym:
                M = -(D + np.transpose(D, (0, 2, 1))) + pen[:, None, None] * P
            else:
                E_ = np.einsum("fqi,fq,fqj->fij", An, w, Vj)
                M = -D + s * (-E_) + pen[:, None, None] * P
            acc.add_batch(dofs, M)
            if boundary and interface:
                gv = _call_scalar(problem.g, nodes.reshape(-1, mesh.dim)).reshape(
                    nodes.shape[:2]
                )
                rl = np.einsum(
                    "fqi,fq->fi", -s * An + pen[:, None, None] * Vj, w * gv
                )
                acc.add_rhs(dofs, rl)


def _assemble(space, ls, problem, quad_degree, quad_depth):
    if not hasattr(space, "level_set") or space.level_set is None:
        space.level_set = ls
    mesh = space.mesh
    cls = space.cls
    degree = _quad_degree(space, quad_degree)
    acc = _Accumulator(space.dof_count, symmetric=problem.symmetry == "sym")
    interface = problem.variant is Mode.INTERFACE
    sides = (0, 1) if interface else (0,)

    for side in sides:
        _batched_uncut_volume(space, problem, acc, side, degree)
    for K in cls.cut_elements():
        for side in sides:
            piece = _cell_piece(space, ls, problem, K, side, degree, quad_depth)
            if piece is None:
                continue
            dofs, M, rl = piece
            acc.add(dofs, M)
            acc.add_rhs(dofs, rl)

    for side in sides:
        _batched_full_faces(space, ls, problem, acc, side, degree)
    for f in np.flatnonzero(cls.face_tag == Tag.CUT):
        for side in sides:
            piece = _face_piece(space, ls, problem, f, side, degree, quad_depth)
            if piece is None:
                continue
            dofs, M, rl = piece
            acc.add(dofs, M)
            if rl is not None:
                acc.add_rhs(dofs, rl)

    for K in cls.cut_elements():
        piece = _interface_piece(space, ls, problem, K, degree, quad_depth)
        if piece is None:
            continue
        dofs, M, rl = piece
        acc.add(dofs, M)
        if rl is not None:
            acc.add_rhs(dofs, rl)

    return SparseSystem(acc.tocsr(), acc.rhs)


def assemble_boundary(space, ls, problem, quad_degree=None, quad_depth=DEFAULT_DEPTH):
    """Assemble the curved-boundary scheme (volume + faces + zero-set terms)."""
    if space.mode is not Mode.BOUNDARY or problem.variant is not Mode.BOUNDARY:
        raise ValueError("assemble_boundary needs BOUNDARY space and problem")
    return _assemble(space, ls, problem, quad_degree, quad_depth)


def assemble_interface(space, ls, problem, quad_degree=None, quad_depth=DEFAULT_DEPTH):
    """Assemble the interface scheme (two-sided volume, faces, jump data)."""
    if space.mode is not Mode.INTERFACE or problem.variant is not Mode.INTERFACE:
        raise ValueError("assemble_interface needs INTERFACE space and problem")
    return _assemble(space, ls, problem, quad_degree, quad_depth)


# ---------------------------------------------------------------------------
# consistency residual with the exact solution inserted
# ---------------------------------------------------------------------------


def galerkin_residual(
    space, ls, problem, u, grad_u, quad_degree=None, quad_depth=DEFAULT_DEPTH
):
    """Residual ``a_h(u, phi_j) - l_h(phi_j)`` with exact ``u`` inserted.

    For a smooth exact solution the jump of ``u`` vanishes and the
    Dirichlet datum cancels at the (projected) surface nodes, leaving a
    pure quadrature residual; it decays as the subdivision depth grows.
    BOUNDARY mode only.
    """
    if problem.variant is not Mode.BOUNDARY:
        raise ValueError("galerkin_residual supports BOUNDARY mode")
    mesh = space.mesh
    cls = space.cls
    degree = _quad_degree(space, quad_degree)
    r = np.zeros(space.dof_count)

    for K in space.active_elements:
        if cls.element_tag[K] == Tag.CUT:
            rule = cut_volume_rule(
                mesh.element_vertices(K), ls, Side.NEG, degree, quad_depth,
                eps=cls.eps_geom,
            )
            if len(rule) == 0:
                continue
            nodes, w = rule.nodes, rule.weights
        else:
            ref = reference_simplex_rule(mesh.dim, degree)
            nodes = mesh.map_origin[K] + ref.nodes @ mesh.map_B[K].T
            w = ref.weights * mesh.map_detB[K]
        dofs, vals, grads = space.eval_basis(K, nodes, side=0)
        gu = _call_vector(grad_u, nodes)
        fv = _call_scalar(problem.f, nodes)
        np.add.at(
            r,
            dofs,
            np.einsum("q,qjd,qd->j", w, grads, gu) - vals.T @ (w * fv),
        )

    for f in np.flatnonzero(cls.face_tag != Tag.SIDE1):
        rw = _face_rule(space, ls, f, 0, degree, quad_depth)
        if rw is None:
            continue
        nodes, w = rw
        K1, K2 = mesh.face_elements[f]
        normal = mesh.face_normal(f)
        gu_n = np.einsum("qd,d->q", _call_vector(grad_u, nodes), normal)
        d1, V1, _ = space.eval_basis(K1, nodes, side=0)
        if K2 >= 0:
            d2, V2, _ = space.eval_basis(K2, nodes, side=0)
            np.add.at(r, d1, -V1.T @ (w * gu_n))
            np.add.at(r, d2, V2.T @ (w * gu_n))
        else:
            np.add.at(r, d1, -V1.T @ (w * gu_n))

    for K in cls.cut_elements():
        rule = cut_surface_rule(
            mesh.element_vertices(K), ls, degree, quad_depth, eps=cls.eps_geom
        )
        if len(rule) == 0:
            continue
        gu_n = np.einsum("qd,qd->q", _call_vector(grad_u, rule.nodes), rule.normals)
        dofs, V, _ = space.eval_basis(K, rule.nodes, side=0)
        np.add.at(r, dofs, -V.T @ (rule.weights * gu_n))

    return r
