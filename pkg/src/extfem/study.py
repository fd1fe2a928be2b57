"""Error norms, the built-in problem bank and the convergence driver.

The six built-in problems cover curved-boundary Poisson problems (1-3)
and elliptic interface problems (4-6) in two and three dimensions.  All
data functions (source, Dirichlet datum, jump data) are hand-derived
from the exact solutions and unit-tested against finite differences.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    ModelProblem,
    _call_scalar,
    _call_vector,
    assemble_boundary,
    assemble_interface,
)
from .cutquad import Side, cut_surface_rule, cut_volume_rule, reference_simplex_rule
from .geometry import LevelSet, Mode, Tag, assign_hosts, classify
from .linalg import estimate_cond, solve_cg, solve_sparse_direct
from .mesh import build_structured_mesh
from .xspace import build_space

__all__ = [
    "BuiltinProblem",
    "ConvergenceRow",
    "ConvergenceStudy",
    "EnergyErrorBreakdown",
    "ExperimentConfig",
    "builtin_problem",
    "default_penalty",
    "energy_error",
    "fitted_order",
    "l2_error",
    "observed_rates",
    "run_convergence",
    "verify_quadrature",
    "write_csv",
    "read_csv",
    "render_table",
]

CSV_COLUMNS = [
    "m", "n", "h", "dofs", "e_l2", "e_energy",
    "rate_l2", "rate_energy", "kappa", "cg_iters", "wall_ms",
]


def default_penalty(m):
    """Penalty large enough for coercivity of the symmetric scheme."""
    return 3.0 * m * m + 10.0


# ---------------------------------------------------------------------------
# error norms
# ---------------------------------------------------------------------------


def _as_pair(u):
    if isinstance(u, (tuple, list)):
        return u[0], u[1]
    return u, u


def _element_rule(space, ls, K, side, degree, depth):
    mesh = space.mesh
    tag = space.cls.element_tag[K]
    other = Tag.SIDE1 if side == 0 else Tag.SIDE0
    if tag == other:
        return None
    if tag == Tag.CUT:
        rule = cut_volume_rule(
            mesh.element_vertices(K), ls,
            Side.NEG if side == 0 else Side.POS,
            degree, depth, eps=space.cls.eps_geom,
        )
        if len(rule) == 0:
            return None
        return rule.nodes, rule.weights
    ref = reference_simplex_rule(mesh.dim, degree)
    nodes = mesh.map_origin[K] + ref.nodes @ mesh.map_B[K].T
    return nodes, ref.weights * mesh.map_detB[K]


def l2_error(space, coeffs, u_exact, ls, quad_degree=None, quad_depth=7):
    """``sqrt(sum_K int (u - u_h)^2)`` over the computational domain.

    BOUNDARY mode integrates over the negative side only; INTERFACE mode
    integrates both sides.  ``u_exact`` may be a per-side pair.
    """
    mesh = space.mesh
    degree = quad_degree or 2 * space.degree + 2
    u0, u1 = _as_pair(u_exact)
    sides = (0, 1) if space.mode is Mode.INTERFACE else (0,)
    total = 0.0
    for side in sides:
        fn = u0 if side == 0 else u1
        tag = Tag.SIDE0 if side == 0 else Tag.SIDE1
        els = np.flatnonzero(space.cls.element_tag == tag)
        if len(els):
            ref = reference_simplex_rule(mesh.dim, degree)
            vals, _ = space.basis.eval(ref.nodes)
            nodes = mesh.map_origin[els][:, None] + np.einsum(
                "qk,eDk->eqD", ref.nodes, mesh.map_B[els]
            )
            w = ref.weights[None, :] * mesh.map_detB[els][:, None]
            ue = _call_scalar(fn, nodes.reshape(-1, mesh.dim)).reshape(len(els), -1)
            uh = np.einsum("qj,ej->eq", vals, coeffs[space.element_dofs[els]])
            total += float((w * (ue - uh) ** 2).sum())
        for K in space.cls.cut_elements():
            rw = _element_rule(space, ls, K, side, degree, quad_depth)
            if rw is None:
                continue
            nodes, w = rw
            uh = space.evaluate(coeffs, K, nodes, side=side)
            ue = _call_scalar(fn, nodes)
            total += float((w * (ue - uh) ** 2).sum())
    return float(np.sqrt(total))


def _field_batch(space, elements, coeffs, nodes):
    """Discrete values and gradients of the given elements at per-face nodes."""
    mesh = space.mesh
    nf, nq, d = nodes.shape
    ref = np.einsum(
        "fqd,fkd->fqk", nodes - mesh.map_origin[elements][:, None], mesh.map_invB[elements]
    )
    vals, gref = space.basis.eval(ref.reshape(-1, d))
    nb = space.basis.n_local
    c = coeffs[space.element_dofs[elements]]
    u = np.einsum("fqj,fj->fq", vals.reshape(nf, nq, nb), c)
    g = np.einsum(
        "fqjk,fkD,fj->fqD", gref.reshape(nf, nq, nb, d), mesh.map_invB[elements], c
    )
    return u, g


def _batched_face_energy(space, coeffs, ufn, gfn, faces, side, degree):
    """Vectorised h*|avg|^2 and h^-1*|jump|^2 sums over full-rule faces."""
    from .assembly import _face_batch_geometry

    mesh = space.mesh
    delegate = space.delegate0 if side in (0, None) else space.delegate1
    ref = reference_simplex_rule(mesh.dim - 1, degree)
    K1 = mesh.face_elements[faces, 0]
    K2 = mesh.face_elements[faces, 1]
    face_avg = face_jump = 0.0
    for boundary in (False, True):
        sel = (K2 < 0) if boundary else (K2 >= 0)
        fs, k1, k2 = faces[sel], K1[sel], K2[sel]
        if len(fs) == 0:
            continue
        chunk = max(1, 400_000 // max(1, len(ref) * space.basis.n_local))
        for lo in range(0, len(fs), chunk):
            F = fs[lo : lo + chunk]
            nodes, w = _face_batch_geometry(space, F, ref)
            flat = nodes.reshape(-1, mesh.dim)
            ge = _call_vector(gfn, flat).reshape(nodes.shape)
            u1h, g1h = _field_batch(space, delegate[k1[lo : lo + chunk]], coeffs, nodes)
            if boundary:
                ue = _call_scalar(ufn, flat).reshape(nodes.shape[:2])
                avg = ge - g1h
                jump = ue - u1h
            else:
                u2h, g2h = _field_batch(
                    space, delegate[k2[lo : lo + chunk]], coeffs, nodes
                )
                avg = ge - 0.5 * (g1h + g2h)
                jump = u2h - u1h
            h_e = mesh.h_e[F]
            face_avg += float((h_e[:, None] * w * (avg**2).sum(axis=2)).sum())
            face_jump += float((w * jump**2 / h_e[:, None]).sum())
    return face_avg, face_jump


@dataclass
class EnergyErrorBreakdown:
    """The five squared contributions of the mesh-dependent energy norm."""

    volume: float
    face_avg: float
    face_jump: float
    gamma_avg: float
    gamma_jump: float

    @property
    def total(self):
        return float(
            np.sqrt(
                self.volume + self.face_avg + self.face_jump
                + self.gamma_avg + self.gamma_jump
            )
        )


def energy_error(
    space, coeffs, u_exact, grad_u_exact, ls, quad_degree=None, quad_depth=7
):
    """Mesh-dependent energy norm of ``u - u_h`` with exact traces.

    Contributions: broken gradient, h-weighted face averages, h^-1 face
    jumps, and the matching average/jump terms on the zero set.
    Returns an :class:`EnergyErrorBreakdown` (use ``.total``).
    """
    from .assembly import _face_rule  # local import to avoid a cycle at load

    mesh = space.mesh
    degree = quad_degree or 2 * space.degree + 2
    u0, u1 = _as_pair(u_exact)
    g0, g1 = _as_pair(grad_u_exact)
    interface = space.mode is Mode.INTERFACE
    sides = (0, 1) if interface else (0,)

    vol = 0.0
    for side in sides:
        ufn, gfn = (u0, g0) if side == 0 else (u1, g1)
        tag = Tag.SIDE0 if side == 0 else Tag.SIDE1
        els = np.flatnonzero(space.cls.element_tag == tag)
        if len(els):
            ref = reference_simplex_rule(mesh.dim, degree)
            _, gref = space.basis.eval(ref.nodes)
            chunk = max(1, 1_000_000 // max(1, len(ref) * space.basis.n_local))
            for lo in range(0, len(els), chunk):
                E = els[lo : lo + chunk]
                nodes = mesh.map_origin[E][:, None] + np.einsum(
                    "qk,eDk->eqD", ref.nodes, mesh.map_B[E]
                )
                gh = np.einsum(
                    "qjk,ekD,ej->eqD", gref, mesh.map_invB[E],
                    coeffs[space.element_dofs[E]],
                )
                ge = _call_vector(gfn, nodes.reshape(-1, mesh.dim)).reshape(nodes.shape)
                w = ref.weights[None, :] * mesh.map_detB[E][:, None]
                vol += float((w * ((ge - gh) ** 2).sum(axis=2)).sum())
        for K in space.cls.cut_elements():
            rw = _element_rule(space, ls, K, side, degree, quad_depth)
            if rw is None:
                continue
            nodes, w = rw
            _, gh = space.evaluate(coeffs, K, nodes, side=side, gradient=True)
            ge = _call_vector(gfn, nodes)
            vol += float((w * ((ge - gh) ** 2).sum(axis=1)).sum())

    face_avg = face_jump = 0.0
    for side in sides:
        ufn, gfn = (u0, g0) if side == 0 else (u1, g1)
        tag = Tag.SIDE0 if side == 0 else Tag.SIDE1
        full = np.flatnonzero(space.cls.face_tag == tag)
        if len(full):
            fa, fj = _batched_face_energy(
                space, coeffs, ufn, gfn, full, side if interface else None, degree
            )
            face_avg += fa
            face_jump += fj
        for f in np.flatnonzero(space.cls.face_tag == Tag.CUT):
            K1, K2 = mesh.face_elements[f]
            h_e = mesh.h_e[f]
            rw = _face_rule(space, ls, f, side, degree, quad_depth)
            if rw is None:
                continue
            nodes, w = rw
            ue = _call_scalar(ufn, nodes)
            ge = _call_vector(gfn, nodes)
            s_arg = side if interface else None
            u1h, g1h = space.evaluate(coeffs, K1, nodes, side=s_arg, gradient=True)
            if K2 >= 0:
                u2h, g2h = space.evaluate(coeffs, K2, nodes, side=s_arg, gradient=True)
                avg = ge - 0.5 * (g1h + g2h)
                jump = u2h - u1h  # exact solution is single-valued here
            else:
                avg = ge - g1h
                jump = ue - u1h
            face_avg += h_e * float((w * (avg**2).sum(axis=1)).sum())
            face_jump += float((w * jump**2).sum()) / h_e

    gamma_avg = gamma_jump = 0.0
    for K in space.cls.cut_elements():
        rule = cut_surface_rule(
            mesh.element_vertices(K), ls, degree, quad_depth, eps=space.cls.eps_geom
        )
        if len(rule) == 0:
            continue
        nodes, w = rule.nodes, rule.weights
        h_K = mesh.h_K[K]
        if interface:
            uh0, gh0 = space.evaluate(coeffs, K, nodes, side=0, gradient=True)
            uh1, gh1 = space.evaluate(coeffs, K, nodes, side=1, gradient=True)
            ge = 0.5 * (_call_vector(g0, nodes) + _call_vector(g1, nodes))
            avg = ge - 0.5 * (gh0 + gh1)
            jump = (_call_scalar(u0, nodes) - _call_scalar(u1, nodes)) - (uh0 - uh1)
        else:
            uh, gh = space.evaluate(coeffs, K, nodes, side=0, gradient=True)
            avg = _call_vector(g0, nodes) - gh
            jump = _call_scalar(u0, nodes) - uh
        gamma_avg += h_K * float((w * (avg**2).sum(axis=1)).sum())
        gamma_jump += float((w * jump**2).sum()) / h_K
    return EnergyErrorBreakdown(vol, face_avg, face_jump, gamma_avg, gamma_jump)


# ---------------------------------------------------------------------------
# built-in problems
# ---------------------------------------------------------------------------


@dataclass
class BuiltinProblem:
    """A level set, exact solution (with gradients) and derived data."""

    id: object
    name: str
    mode: Mode
    bounds: tuple
    level_set: LevelSet
    u: object
    grad_u: object
    f: object
    g: object
    a: object = None
    b: object = None
    alpha0: float = 1.0
    alpha1: float = 1.0
    default_grids: tuple = ()

    @property
    def dim(self):
        return len(self.bounds)

    def model(self, penalty, symmetry="sym"):
        return ModelProblem(
            variant=self.mode,
            f=self.f,
            g=self.g,
            a=self.a,
            b=self.b,
            alpha0=self.alpha0,
            alpha1=self.alpha1,
            penalty=penalty,
            symmetry=symmetry,
        )


def _polar(pts):
    x, y = pts[:, 0], pts[:, 1]
    r = np.hypot(x, y)
    theta = np.arctan2(y, x)
    return x, y, r, theta


def _example1():
    ls = LevelSet(
        lambda p: p[:, 0] ** 2 + p[:, 1] ** 2 - 0.49,
        grad=lambda p: 2.0 * p,
        descriptor="circle r=0.7",
    )
    u = lambda p: np.sin(2 * np.pi * p[:, 0]) * np.sin(4 * np.pi * p[:, 1])
    gu = lambda p: np.stack(
        [
            2 * np.pi * np.cos(2 * np.pi * p[:, 0]) * np.sin(4 * np.pi * p[:, 1]),
            4 * np.pi * np.sin(2 * np.pi * p[:, 0]) * np.cos(4 * np.pi * p[:, 1]),
        ],
        axis=1,
    )
    f = lambda p: 20 * np.pi**2 * u(p)
    return BuiltinProblem(
        1, "disk", Mode.BOUNDARY, ((-1, 1), (-1, 1)), ls, u, gu, f, u,
        default_grids=(10, 20, 40),
    )


def _example2():
    def phi(p):
        x, y, r, th = _polar(p)
        return r - 0.6 - 0.2 * np.cos(5 * th)

    def gphi(p):
        x, y, r, th = _polar(p)
        r = np.maximum(r, 1e-30)
        s5 = np.sin(5 * th)
        return np.stack([x / r - y * s5 / r**2, y / r + x * s5 / r**2], axis=1)

    ls = LevelSet(phi, grad=gphi, descriptor="flower r=0.6+0.2cos(5t)")
    u = lambda p: np.cos(2 * np.pi * (p[:, 0] - p[:, 1]))
    gu = lambda p: np.stack(
        [
            -2 * np.pi * np.sin(2 * np.pi * (p[:, 0] - p[:, 1])),
            2 * np.pi * np.sin(2 * np.pi * (p[:, 0] - p[:, 1])),
        ],
        axis=1,
    )
    f = lambda p: 8 * np.pi**2 * u(p)
    return BuiltinProblem(
        2, "flower", Mode.BOUNDARY, ((-1, 1), (-1, 1)), ls, u, gu, f, u,
        default_grids=(12, 24, 48),
    )


def _example3():
    c = 0.5
    ls = LevelSet(
        lambda p: ((p - c) ** 2).sum(axis=1) - 0.35**2,
        grad=lambda p: 2.0 * (p - c),
        descriptor="sphere r=0.35",
    )
    u = lambda p: np.cos(np.pi * p[:, 0]) * np.cos(np.pi * p[:, 1]) * np.cos(np.pi * p[:, 2])
    gu = lambda p: -np.pi * np.stack(
        [
            np.sin(np.pi * p[:, 0]) * np.cos(np.pi * p[:, 1]) * np.cos(np.pi * p[:, 2]),
            np.cos(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1]) * np.cos(np.pi * p[:, 2]),
            np.cos(np.pi * p[:, 0]) * np.cos(np.pi * p[:, 1]) * np.sin(np.pi * p[:, 2]),
        ],
        axis=1,
    )
    f = lambda p: 3 * np.pi**2 * u(p)
    return BuiltinProblem(
        3, "sphere", Mode.BOUNDARY, ((0, 1), (0, 1), (0, 1)), ls, u, gu, f, u,
        default_grids=(4, 8, 16),
    )


def _example4(contrast=10.0):
    bcoef = float(contrast)
    ls = LevelSet(
        lambda p: p[:, 0] ** 2 + p[:, 1] ** 2 - 0.25,
        grad=lambda p: 2.0 * p,
        descriptor="circle r=0.5",
    )

    u0 = lambda p: np.sin(2 * np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1])
    g0 = lambda p: np.stack(
        [
            2 * np.pi * np.cos(2 * np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1]),
            np.pi * np.sin(2 * np.pi * p[:, 0]) * np.cos(np.pi * p[:, 1]),
        ],
        axis=1,
    )
    f0 = lambda p: 5 * np.pi**2 * u0(p)

    def u1(p):
        s = p[:, 0] ** 2 + p[:, 1] ** 2
        return -(s**2 / 2 + s) / bcoef

    g1 = lambda p: -(2 * (p[:, 0] ** 2 + p[:, 1] ** 2) + 2)[:, None] * p / bcoef
    f1 = lambda p: 8 * (p[:, 0] ** 2 + p[:, 1] ** 2) + 4

    a = lambda p: u0(p) - u1(p)

    def bflux(p):
        x, y, r, _ = _polar(p)
        n = np.stack([x / r, y / r], axis=1)
        return (g0(p) * n).sum(axis=1) - bcoef * (g1(p) * n).sum(axis=1)

    return BuiltinProblem(
        4, f"circle-interface b={bcoef:g}", Mode.INTERFACE, ((-1, 1), (-1, 1)),
        ls, (u0, u1), (g0, g1), (f0, f1), u1, a, bflux,
        alpha0=1.0, alpha1=bcoef, default_grids=(10, 20, 40, 80),
    )


def _example5():
    def phi(p):
        x, y, r, th = _polar(p)
        return r - 0.5 - np.sin(5 * th) / 7.0

    def gphi(p):
        x, y, r, th = _polar(p)
        r = np.maximum(r, 1e-30)
        c5 = np.cos(5 * th)
        return np.stack(
            [x / r + 5 * y * c5 / (7 * r**2), y / r - 5 * x * c5 / (7 * r**2)],
            axis=1,
        )

    ls = LevelSet(phi, grad=gphi, descriptor="star r=0.5+sin(5t)/7")

    def u0(p):
        s = p[:, 0] ** 2 + p[:, 1] ** 2
        return np.exp(s)

    g0 = lambda p: 2.0 * np.exp((p**2).sum(axis=1))[:, None] * p

    def f0(p):
        s = (p**2).sum(axis=1)
        return -(4 + 4 * s) * np.exp(s)

    def _guard(r):
        if np.any(r < 0.1):
            raise ValueError("outer branch evaluated at r < 0.1 (ln(2r) singular)")

    def u1(p):
        x, y, r, _ = _polar(p)
        _guard(r)
        return 0.1 * r**2 - 0.01 * np.log(2 * r)

    def g1(p):
        x, y, r, _ = _polar(p)
        _guard(r)
        return (0.2 - 0.01 / r**2)[:, None] * p

    f1 = lambda p: np.full(len(p), -4.0)

    a = lambda p: u0(p) - u1(p)

    def bflux(p):
        g = ls.gradient(p)
        n = g / np.linalg.norm(g, axis=1)[:, None]
        return (g0(p) * n).sum(axis=1) - 10.0 * (g1(p) * n).sum(axis=1)

    return BuiltinProblem(
        5, "star-interface", Mode.INTERFACE, ((-1, 1), (-1, 1)),
        ls, (u0, u1), (g0, g1), (f0, f1), u1, a, bflux,
        alpha0=1.0, alpha1=10.0, default_grids=(16, 32, 64),
    )


def _example6():
    def _xyz(p):
        X = 2.5 * (p[:, 0] - 0.5)
        Y = 4.0 * (p[:, 1] - 0.5)
        Z = 2.5 * (p[:, 2] - 0.5)
        return X, Y, Z

    def phi(p):
        X, Y, Z = _xyz(p)
        Q = X**2 + Y**2 + Z**2 + 0.6
        return Q**2 - 3.5 * Y**2 - 0.6

    def gphi(p):
        X, Y, Z = _xyz(p)
        Q = X**2 + Y**2 + Z**2 + 0.6
        return np.stack([10 * Q * X, 16 * Q * Y - 28 * Y, 10 * Q * Z], axis=1)

    ls = LevelSet(phi, grad=gphi, descriptor="two-atom molecular surface")

    tw = 2 * np.pi
    u0 = lambda p: np.sin(tw * p[:, 0]) * np.sin(tw * p[:, 1]) * np.sin(tw * p[:, 2])
    g0 = lambda p: tw * np.stack(
        [
            np.cos(tw * p[:, 0]) * np.sin(tw * p[:, 1]) * np.sin(tw * p[:, 2]),
            np.sin(tw * p[:, 0]) * np.cos(tw * p[:, 1]) * np.sin(tw * p[:, 2]),
            np.sin(tw * p[:, 0]) * np.sin(tw * p[:, 1]) * np.cos(tw * p[:, 2]),
        ],
        axis=1,
    )
    f0 = lambda p: 12 * np.pi**2 * u0(p)

    u1 = lambda p: np.exp(2 * (p[:, 0] + p[:, 1] + p[:, 2]))
    g1 = lambda p: 2.0 * u1(p)[:, None] * np.ones(3)
    f1 = lambda p: -12.0 * u1(p)

    a = lambda p: u0(p) - u1(p)

    def bflux(p):
        g = ls.gradient(p)
        n = g / np.linalg.norm(g, axis=1)[:, None]
        return (g0(p) * n).sum(axis=1) - (g1(p) * n).sum(axis=1)

    return BuiltinProblem(
        6, "molecular-interface", Mode.INTERFACE, ((0, 1), (0, 1), (0, 1)),
        ls, (u0, u1), (g0, g1), (f0, f1), u1, a, bflux,
        alpha0=1.0, alpha1=1.0, default_grids=(4, 8, 16),
    )


def builtin_problem(example, contrast=None):
    """The built-in problem bank (1-6); 4 accepts a ``contrast`` override."""
    if example == 4:
        return _example4(10.0 if contrast is None else contrast)
    makers = {1: _example1, 2: _example2, 3: _example3, 5: _example5, 6: _example6}
    if example not in makers:
        raise ValueError(f"unknown example id {example!r}")
    if contrast is not None:
        raise ValueError("contrast only applies to example 4")
    return makers[example]()


# ---------------------------------------------------------------------------
# convergence studies
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    example: object = 1
    degrees: tuple = (1,)
    grid_sizes: tuple = (10, 20)
    penalty: float = None  # None -> 3 m^2 + 10
    symmetry: str = "sym"
    quad_degree: int = None
    quad_depth: int = None  # None -> 5 in 2D, 3 in 3D
    verify_depth: int = None  # None -> 7 in 2D, 4 in 3D
    solver: str = "direct"
    solver_tol: float = 1e-10
    solver_maxit: int = None
    report_condition: bool = False
    contrast: float = None
    out_csv: str = None

    def __post_init__(self):
        gs = tuple(int(n) for n in self.grid_sizes)
        if any(b <= a for a, b in zip(gs, gs[1:])):
            raise ValueError("grid_sizes must be strictly increasing")
        self.grid_sizes = gs
        self.degrees = tuple(int(m) for m in self.degrees)
        if any(m not in (1, 2, 3) for m in self.degrees):
            raise ValueError("degrees must be a subset of {1, 2, 3}")
        if self.solver not in ("direct", "cg"):
            raise ValueError("solver must be 'direct' or 'cg'")


@dataclass
class ConvergenceRow:
    m: int
    n: int
    h: float
    dofs: int
    e_l2: float
    e_energy: float
    rate_l2: float = None
    rate_energy: float = None
    kappa: float = None
    cg_iters: int = None
    wall_ms: float = None


@dataclass
class ConvergenceStudy:
    rows: list
    fitted: dict
    failures: list = field(default_factory=list)

    def rows_for(self, m):
        return [r for r in self.rows if r.m == m]


def observed_rates(hs, errors):
    """Per-step rates log(e_prev/e_cur)/log(h_prev/h_cur); None for row 0."""
    out = [None]
    for i in range(1, len(hs)):
        out.append(
            float(np.log(errors[i - 1] / errors[i]) / np.log(hs[i - 1] / hs[i]))
        )
    return out

def fitted_order(hs, errors):
    """Least-squares slope of log(error) against log(h)."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(hs) < 2:
        return None
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


def _resolve_problem(config):
    if isinstance(config.example, BuiltinProblem):
        return config.example
    return builtin_problem(int(config.example), contrast=config.contrast)


def solve_problem(
    problem,
    n,
    m,
    penalty=None,
    symmetry="sym",
    quad_degree=None,
    quad_depth=None,
    solver="direct",
    solver_tol=1e-10,
    solver_maxit=None,
    continuity="C0",
):
    """One full pipeline run; returns (space, level_set, coeffs, info dict)."""
    mesh = build_structured_mesh(problem.bounds, n)
    cls = classify(mesh, problem.level_set, problem.mode)
    assign_hosts(mesh, cls)
    space = build_space(mesh, cls, m, continuity)
    pen = default_penalty(m) if penalty is None else penalty
    model = problem.model(pen, symmetry)
    depth = quad_depth if quad_depth is not None else (5 if mesh.dim == 2 else 3)
    if problem.mode is Mode.BOUNDARY:
        system = assemble_boundary(space, problem.level_set, model, quad_degree, depth)
    else:
        system = assemble_interface(space, problem.level_set, model, quad_degree, depth)
    info = {"dofs": space.dof_count, "system": system, "cg_iters": None}
    if solver == "cg":
        coeffs, iters = solve_cg(
            system.A, system.rhs, tol=solver_tol, maxit=solver_maxit
        )
        info["cg_iters"] = iters
    else:
        coeffs = solve_sparse_direct(system.A, system.rhs)
    return space, problem.level_set, coeffs, info


def run_convergence(config):
    """Run the (m, n) sweep of a configuration and collect error rows."""
    problem = _resolve_problem(config)
    rows, failures = [], []
    fitted = {}
    for m in config.degrees:
        seq = []
        for n in config.grid_sizes:
            t0 = time.perf_counter()
            try:
                space, ls, coeffs, info = solve_problem(
                    problem,
                    n,
                    m,
                    penalty=config.penalty,
                    symmetry=config.symmetry,
                    quad_degree=config.quad_degree,
                    quad_depth=config.quad_depth,
                    solver=config.solver,
                    solver_tol=config.solver_tol,
                    solver_maxit=config.solver_maxit,
                )
                vdepth = config.verify_depth
                if vdepth is None:
                    vdepth = 7 if space.mesh.dim == 2 else 4
                e2 = l2_error(space, coeffs, problem.u, ls, config.quad_degree, vdepth)
                ee = energy_error(
                    space, coeffs, problem.u, problem.grad_u, ls,
                    config.quad_degree, vdepth,
                ).total
                kappa = None
                if config.report_condition:
                    kappa = estimate_cond(info["system"].A)
                row = ConvergenceRow(
                    m=m,
                    n=n,
                    h=space.mesh.cell_width,
                    dofs=info["dofs"],
                    e_l2=e2,
                    e_energy=ee,
                    kappa=kappa,
                    cg_iters=info["cg_iters"],
                    wall_ms=1e3 * (time.perf_counter() - t0),
                )
                rows.append(row)
                seq.append(row)
            except Exception as exc:  # keep going; record why this row is absent
                failures.append((m, n, f"{type(exc).__name__}: {exc}"))
        if len(seq) >= 2:
            hs = [r.h for r in seq]
            r2 = observed_rates(hs, [r.e_l2 for r in seq])
            re = observed_rates(hs, [r.e_energy for r in seq])
            for r, a, b in zip(seq, r2, re):
                r.rate_l2, r.rate_energy = a, b
            fitted[(m, "l2")] = fitted_order(hs, [r.e_l2 for r in seq])
            fitted[(m, "energy")] = fitted_order(hs, [r.e_energy for r in seq])
    study = ConvergenceStudy(rows, fitted, failures)
    if config.out_csv:
        write_csv(config.out_csv, study)
    return study


# ---------------------------------------------------------------------------
# quadrature verification (measure convergence on a built-in geometry)
# ---------------------------------------------------------------------------


def verify_quadrature(example, depths, n=40, degree=2):
    """Measure convergence table for a built-in geometry.

    For each depth: total negative-side volume, zero-set measure and the
    divergence-theorem residual ``|sum F.n - volume|`` for ``F = x/dim``.
    Analytic references are attached for the circular/spherical cases.
    """
    problem = _resolve_problem(ExperimentConfig(example=example, grid_sizes=(n,)))
    ls = problem.level_set
    mesh = build_structured_mesh(problem.bounds, n)
    cls = classify(mesh, ls, problem.mode)
    dim = mesh.dim
    analytic = {
        1: (np.pi * 0.49, 2 * np.pi * 0.7),
        3: (4 / 3 * np.pi * 0.35**3, 4 * np.pi * 0.35**2),
        4: (np.pi * 0.25, 2 * np.pi * 0.5),
    }.get(problem.id if isinstance(problem.id, int) else None)
    inside = float(mesh.volumes[cls.element_tag == Tag.SIDE0].sum())
    out = []
    for depth in depths:
        vol = inside
        surf = 0.0
        div = 0.0
        for K in cls.cut_elements():
            verts = mesh.element_vertices(K)
            vol += cut_volume_rule(
                verts, ls, Side.NEG, degree, depth, eps=cls.eps_geom
            ).total
            rule = cut_surface_rule(verts, ls, degree, depth, eps=cls.eps_geom)
            if len(rule):
                surf += rule.total
                div += float(
                    (rule.weights * (rule.nodes * rule.normals).sum(axis=1)).sum()
                ) / dim
        row = {
            "depth": int(depth),
            "volume": vol,
            "surface": surf,
            "div_residual": abs(div - vol),
        }
        if analytic:
            row["volume_err"] = abs(vol - analytic[0]) / analytic[0]
            row["surface_err"] = abs(surf - analytic[1]) / analytic[1]
        out.append(row)
    return out


# ---------------------------------------------------------------------------
# CSV and table rendering
# ---------------------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6e}"
    return str(v)


def write_csv(path_or_file, study):
    rows = study.rows if isinstance(study, ConvergenceStudy) else study
    close = False
    if isinstance(path_or_file, (str, bytes)):
        fh = open(path_or_file, "w", newline="")
        close = True
    else:
        fh = path_or_file
    try:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow(
                [
                    r.m, r.n, _fmt(r.h), r.dofs, _fmt(r.e_l2), _fmt(r.e_energy),
                    "" if r.rate_l2 is None else f"{r.rate_l2:.3f}",
                    "" if r.rate_energy is None else f"{r.rate_energy:.3f}",
                    _fmt(r.kappa),
                    "" if r.cg_iters is None else r.cg_iters,
                    "" if r.wall_ms is None else f"{r.wall_ms:.1f}",
                ]
            )
    finally:
        if close:
            fh.close()


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


def render_table(header, rows):
    """Aligned-text rendering of a results table."""
    cols = list(zip(*([header] + rows))) if rows else [(h,) for h in header]
    widths = [max(len(str(c)) for c in col) for col in cols]
    lines = []
    for row in [header] + rows:
        lines.append(
            "  ".join(str(c).rjust(w) for c, w in zip(row, widths))
        )
    return "\n".join(lines)
