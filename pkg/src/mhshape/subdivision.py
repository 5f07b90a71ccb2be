"""Loop limit-surface evaluation: box-spline basis, frames, quadrature.

Parameter convention: a point on face (a, b, c) is addressed by barycentric
coordinates (u, v) with u, v >= 0 and u + v <= 1; u and v are the weights of
corners b and c, the weight of corner a is 1 - u - v.

Regular patches (all corner valences 6) are evaluated directly from the 12
quartic box-spline polynomials. Irregular patches (exactly one extraordinary
corner) are evaluated by repeated local subdivision: the parameter point is
mapped into one of the four child patches until it lands in a regular one;
parametric derivatives pick up a factor 2 per level through the accumulated
child-map Jacobians. Per-valence child maps are extracted once from Loop
subdivision of a small canonical neighborhood mesh and cached.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DomainError,
    SingularFrame,
    UnsupportedDegree,
    ValidationError,
)
from .mesh import ControlMesh, build_mesh, loop_subdivide, patch_stencil

__all__ = [
    "BasisEval",
    "TriangleQuadrature",
    "LimitEvaluator",
    "eval_regular_basis",
    "eval_patch",
    "quadrature_rule",
    "ensure_analysis_ready",
    "limit_surface_area",
    "limit_samples",
]

# ---------------------------------------------------------------------------
# Regular-patch box-spline tables.
#
# Rows follow the canonical stencil order of mesh.patch_stencil; columns are
# monomials u^a v^b listed in _MONO_EXP. Entries are 12x the polynomial
# coefficients (exact integers, derived from the de Boor box-spline
# recurrence for the quartic three-direction box spline).
# ---------------------------------------------------------------------------

_MONO_EXP = np.array(
    [(a, b) for a in range(5) for b in range(5 - a)], dtype=np.int64
)

_BASIS12 = np.array(
    [
        [6, 0, -12, 8, -1, 0, -12, 12, -2, -12, 12, 0, 8, -2, -1],
        [1, 2, 0, -4, 2, 4, 6, -12, 4, 6, -6, 0, -4, -2, -1],
        [1, 4, 6, -4, -1, 2, 6, -6, -2, 0, -12, 0, -4, 4, 2],
        [1, -2, 0, 2, -1, 2, -6, 6, -2, 0, 0, 0, -4, 4, 2],
        [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 2, -2, -1],
        [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 2, 1],
        [0, 0, 0, 2, -1, 0, 0, 6, -2, 0, 6, 0, 2, -2, -1],
        [0, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0],
        [0, 0, 0, 2, -1, 0, 0, 0, -2, 0, 0, 0, 0, 0, 0],
        [1, 2, 0, -4, 2, -2, -6, 0, 4, 0, 6, 0, 2, -2, -1],
        [1, -2, 0, 2, -1, -4, 6, 0, -2, 6, -6, 0, -4, 2, 1],
        [1, -4, 6, -4, 1, -2, 6, -6, 2, 0, 0, 0, 2, -2, -1],
    ],
    dtype=np.float64,
) / 12.0


def _mono_values(u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    a = _MONO_EXP[:, 0]
    b = _MONO_EXP[:, 1]
    return u[..., None] ** a * v[..., None] ** b


def _derive_table(table, axis):
    """Coefficient table of d/du (axis 0) or d/dv (axis 1)."""
    out = np.zeros_like(table)
    exp = _MONO_EXP.copy()
    for k, (a, b) in enumerate(_MONO_EXP):
        if axis == 0 and a > 0:
            tgt = np.flatnonzero((exp[:, 0] == a - 1) & (exp[:, 1] == b))[0]
            out[:, tgt] += a * table[:, k]
        if axis == 1 and b > 0:
            tgt = np.flatnonzero((exp[:, 0] == a) & (exp[:, 1] == b - 1))[0]
            out[:, tgt] += b * table[:, k]
    return out


_BASIS12_DU = _derive_table(_BASIS12, 0)
_BASIS12_DV = _derive_table(_BASIS12, 1)

_DOMAIN_TOL = 1e-12


def _check_domain(u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if ((u < -_DOMAIN_TOL) | (v < -_DOMAIN_TOL) | (u + v > 1.0 + _DOMAIN_TOL)).any():
        raise DomainError("barycentric point outside the reference triangle")
    return u, v


def eval_regular_basis(u, v):
    """The 12 regular-patch basis values and parametric derivatives.

    Accepts scalars or arrays; returns (values, d_du, d_dv) with shape
    (..., 12) in the canonical stencil order.
    """
    u, v = _check_domain(u, v)
    m = _mono_values(u, v)
    return m @ _BASIS12.T, m @ _BASIS12_DU.T, m @ _BASIS12_DV.T


# ---------------------------------------------------------------------------
# Triangle quadrature.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TriangleQuadrature:
    """Points (Q, 2) and weights (Q,) on the reference triangle; sum(w) = 1/2."""

    degree: int
    points: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.weights)


def _orbit3(a):
    b = 1.0 - 2.0 * a
    return [(b, a), (a, b), (a, a)]


def _orbit6(a, b):
    c = 1.0 - a - b
    return [(a, b), (b, a), (a, c), (c, a), (b, c), (c, b)]


def _dunavant(degree):
    if degree == 1:
        pts = [(1 / 3, 1 / 3)]
        wts = [1.0]
    elif degree == 2:
        pts = _orbit3(1.0 / 6.0)
        wts = [1.0 / 3.0] * 3
    elif degree == 4:
        pts = _orbit3(0.445948490915965) + _orbit3(0.091576213509771)
        wts = [0.223381589678011] * 3 + [0.109951743655322] * 3
    elif degree == 6:
        pts = (
            _orbit3(0.249286745170910)
            + _orbit3(0.063089014491502)
            + _orbit6(0.310352451033785, 0.053145049844816)
        )
        wts = (
            [0.116786275726379] * 3
            + [0.050844906370207] * 3
            + [0.082851075618374] * 6
        )
    else:
        return None
    p = np.array(pts, dtype=float)
    w = np.array(wts, dtype=float) * 0.5
    return p, w / w.sum() * 0.5


def _collapsed_gauss(degree):
    """Interior-point rule exact to `degree` from a collapsed tensor grid."""
    m = (degree + 3) // 2
    x, wx = np.polynomial.legendre.leggauss(m)
    x = 0.5 * (x + 1.0)
    wx = 0.5 * wx
    u = np.repeat(x, m)
    t = np.tile(x, m)
    v = t * (1.0 - u)
    w = np.repeat(wx, m) * np.tile(wx, m) * (1.0 - u)
    return np.column_stack([u, v]), w


def quadrature_rule(degree):
    """Quadrature on the reference triangle, exact for polynomials of `degree`.

    Degrees 1, 2, 4 and 6 use classical symmetric interior-point rules;
    higher degrees fall back to a collapsed Gauss grid (interior, positive).
    """
    if not isinstance(degree, (int, np.integer)) or degree < 1:
        raise UnsupportedDegree(f"no triangle rule of degree {degree!r}")
    got = _dunavant(int(degree))
    if got is None:
        if degree > 60:
            raise UnsupportedDegree(f"degree {degree} unreasonably high")
        got = _collapsed_gauss(int(degree))
    points, weights = got
    points.setflags(write=False)
    weights.setflags(write=False)
    return TriangleQuadrature(degree=int(degree), points=points, weights=weights)


# ---------------------------------------------------------------------------
# Canonical neighborhoods and child maps for irregular patches.
# ---------------------------------------------------------------------------

def _canonical_neighborhood(n):
    """Closed mesh around one valence-n vertex whose face 0 = (EV, r0, r1).

    The extraordinary vertex is vertex 0, its ring is 1..n, a second ring
    2n wide keeps the patch one-ring interior, and an apex closes the mesh.
    Only connectivity matters; positions are any valid embedding.
    """
    ring = 1 + np.arange(n)
    second = 1 + n + np.arange(2 * n)
    apex = 3 * n + 1
    faces = []
    for i in range(n):
        faces.append((0, ring[i], ring[(i + 1) % n]))
    s = lambda j: second[j % (2 * n)]
    for i in range(n):
        ri, rj = ring[i], ring[(i + 1) % n]
        faces.append((ri, s(2 * i - 1), s(2 * i)))
        faces.append((ri, s(2 * i), s(2 * i + 1)))
        faces.append((ri, s(2 * i + 1), rj))
    for j in range(2 * n):
        faces.append((s(j + 1), s(j), apex))
    # embed: EV raised at center, rings at radii 1 and 2, apex below
    verts = np.zeros((3 * n + 2, 3))
    verts[0] = (0.0, 0.0, 0.5)
    ang1 = 2.0 * np.pi * np.arange(n) / n
    verts[ring] = np.column_stack([np.cos(ang1), np.sin(ang1), np.zeros(n)])
    ang2 = 2.0 * np.pi * (np.arange(2 * n) - 0.5) / (2 * n)
    verts[second] = np.column_stack(
        [2.0 * np.cos(ang2), 2.0 * np.sin(ang2), -0.5 * np.ones(2 * n)]
    )
    verts[apex] = (0.0, 0.0, -3.0)
    return build_mesh(verts, np.array(faces, dtype=np.int64))


_CHILD_MAPS = {}


def _child_maps(n):
    """Per-child stencil maps for a patch whose corner 0 has valence n.

    Returns a list of four matrices; child k's stencil values are
    M[k] @ (parent stencil values). Child 0 keeps the extraordinary corner,
    children 1..3 are regular.
    """
    if n in _CHILD_MAPS:
        return _CHILD_MAPS[n]
    base = _canonical_neighborhood(n)
    parent = patch_stencil(base, 0)
    S = base.topology.subdivision_matrix().tocsr()
    child_mesh = loop_subdivide(base)
    maps = []
    for k in range(4):
        st = patch_stencil(child_mesh, k)
        rows = S[st.indices, :].toarray()
        outside = np.delete(rows, parent.indices, axis=1)
        if np.abs(outside).max() > 1e-14:
            raise AssertionError("child stencil escaped the parent stencil")
        maps.append(rows[:, parent.indices])
    _CHILD_MAPS[n] = maps
    return maps


# child parameter maps: (u, v) are the weights of corners 1 and 2
_CHILD_JAC = [
    np.array([[2.0, 0.0], [0.0, 2.0]]),
    np.array([[0.0, 2.0], [-2.0, -2.0]]),
    np.array([[-2.0, -2.0], [2.0, 0.0]]),
    np.array([[2.0, 2.0], [-2.0, 0.0]]),
]


def _select_child(u, v):
    w0 = 1.0 - u - v
    if w0 >= 0.5:
        return 0, 2.0 * u, 2.0 * v
    if u >= 0.5:
        return 1, 2.0 * v, 2.0 * w0
    if v >= 0.5:
        return 2, 2.0 * w0, 2.0 * u
    return 3, 2.0 * u + 2.0 * v - 1.0, 1.0 - 2.0 * u


_ROT_JAC = {
    0: np.eye(2),
    1: np.array([[0.0, 1.0], [-1.0, -1.0]]),
    2: np.array([[-1.0, -1.0], [1.0, 0.0]]),
}


def _rotate_param(u, v, shift):
    if shift == 0:
        return u, v
    if shift == 1:
        return v, 1.0 - u - v
    return 1.0 - u - v, u


def _irregular_rows(n, shift, u, v, max_depth):
    """Basis row and derivative rows for one point of an irregular patch.

    Returns (value_row, du_row, dv_row) against the shift-rotated stencil.
    """
    maps = _child_maps(n)
    uu, vv = _rotate_param(u, v, shift)
    jac = _ROT_JAC[shift].copy()
    chain = np.eye(n + 6)
    for _ in range(max_depth):
        k, uu, vv = _select_child(uu, vv)
        if k == 0:
            chain = maps[0] @ chain
            jac = _CHILD_JAC[0] @ jac
            continue
        chain = maps[k] @ chain
        jac = _CHILD_JAC[k] @ jac
        break
    else:
        # depth cap: snap into the central child of the deepest level
        k, uu, vv = 3, min(max(2.0 * uu + 2.0 * vv - 1.0, 0.0), 1.0), \
            min(max(1.0 - 2.0 * uu, 0.0), 1.0)
        if uu + vv > 1.0:
            scl = 1.0 / (uu + vv)
            uu, vv = uu * scl, vv * scl
        chain = maps[3] @ chain
        jac = _CHILD_JAC[3] @ jac
    vals, du, dv = eval_regular_basis(uu, vv)
    row = vals @ chain
    d = jac.T @ np.vstack([du, dv]) @ chain
    return row, d[0], d[1]


# ---------------------------------------------------------------------------
# Evaluator.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BasisEval:
    """Full evaluation record at one parameter point of one patch."""

    face: int
    stencil: np.ndarray
    values: np.ndarray
    d_du: np.ndarray
    d_dv: np.ndarray
    position: np.ndarray
    r_u: np.ndarray
    r_v: np.ndarray
    normal: np.ndarray
    jacobian: float
    surface_gradients: np.ndarray


class _Plan:
    """Cached per-topology basis tables at a fixed parameter-point set."""

    __slots__ = ("points", "indices", "values", "d_du", "d_dv", "sizes")

    def __init__(self, points, indices, values, d_du, d_dv, sizes):
        self.points = points
        self.indices = indices  # (F, nmax) padded with 0
        self.values = values    # (F, P, nmax) padded with 0.0
        self.d_du = d_du
        self.d_dv = d_dv
        self.sizes = sizes      # (F,) true stencil sizes


class LimitEvaluator:
    """Limit-surface evaluation on one mesh connectivity.

    Basis tables (which depend only on connectivity and parameter points)
    are cached on the mesh topology, so evaluators over meshes that share
    connectivity reuse them. Geometry enters only through vertex positions.
    """

    def __init__(self, mesh, max_depth=20):
        self.mesh = mesh
        self.max_depth = max_depth
        topo = mesh.topology
        key = ("limit_eval_setup", max_depth)
        if key not in topo._caches:
            valence = topo.valence
            shifts = np.zeros(topo.num_faces, dtype=np.int64)
            extraordinary = valence[topo.faces] != 6
            n_extra = extraordinary.sum(axis=1)
            if (n_extra > 1).any():
                raise ValidationError(
                    "a face has more than one extraordinary corner; "
                    "refine once first (ensure_analysis_ready)"
                )
            shifts[n_extra == 1] = np.argmax(
                extraordinary[n_extra == 1], axis=1
            )
            stencils = []
            for f in range(topo.num_faces):
                st = patch_stencil(mesh, f, shift=int(shifts[f]))
                if not st.regular and st.corner_valences == (6, 6, 6):
                    raise ValidationError(
                        f"face {f} has an aliased stencil; mesh too coarse"
                    )
                if not st.regular and st.size != st.corner_valences[0] + 6:
                    raise ValidationError(
                        f"face {f} has an aliased stencil; mesh too coarse"
                    )
                stencils.append(st)
            topo._caches[key] = (shifts, stencils)
        self._shifts, self._stencils = topo._caches[key]

    # -- plans ---------------------------------------------------------------

    def plan(self, points, key=None):
        """Basis tables for a fixed (Q, 2) parameter-point set on every face."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        _check_domain(points[:, 0], points[:, 1])
        topo = self.mesh.topology
        cache_key = ("limit_eval_plan", self.max_depth,
                     key if key is not None else points.tobytes())
        if cache_key in topo._caches:
            return topo._caches[cache_key]
        F = topo.num_faces
        P = points.shape[0]
        sizes = np.array([st.size for st in self._stencils], dtype=np.int64)
        nmax = int(sizes.max())
        indices = np.zeros((F, nmax), dtype=np.int64)
        values = np.zeros((F, P, nmax))
        d_du = np.zeros((F, P, nmax))
        d_dv = np.zeros((F, P, nmax))
        reg_v, reg_du, reg_dv = eval_regular_basis(points[:, 0], points[:, 1])
        # rows for irregular faces depend only on (valence, shift); cache them
        irr_cache = {}
        for f in range(F):
            st = self._stencils[f]
            indices[f, : st.size] = st.indices
            if st.regular:
                values[f, :, :12] = reg_v
                d_du[f, :, :12] = reg_du
                d_dv[f, :, :12] = reg_dv
                continue
            n = st.corner_valences[0]
            shift = int(self._shifts[f])
            ck = (n, shift)
            if ck not in irr_cache:
                rows = np.zeros((P, st.size))
                rdu = np.zeros((P, st.size))
                rdv = np.zeros((P, st.size))
                for p, (u, v) in enumerate(points):
                    rows[p], rdu[p], rdv[p] = _irregular_rows(
                        n, shift, float(u), float(v), self.max_depth
                    )
                irr_cache[ck] = (rows, rdu, rdv)
            rows, rdu, rdv = irr_cache[ck]
            values[f, :, : st.size] = rows
            d_du[f, :, : st.size] = rdu
            d_dv[f, :, : st.size] = rdv
        plan = _Plan(points, indices, values, d_du, d_dv, sizes)
        topo._caches[cache_key] = plan
        return plan

    def frames(self, plan, singular_tol=1e-13):
        """Geometry at every (face, point) of a plan.

        Returns dict with positions, r_u, r_v, unit normals, jacobians and
        surface_gradients (F, P, nmax, 3), for the evaluator's current mesh.
        """
        X = self.mesh.vertices[plan.indices]  # (F, nmax, 3)
        pos = np.einsum("fpn,fnk->fpk", plan.values, X)
        r_u = np.einsum("fpn,fnk->fpk", plan.d_du, X)
        r_v = np.einsum("fpn,fnk->fpk", plan.d_dv, X)
        nrm = np.cross(r_u, r_v)
        jac = np.linalg.norm(nrm, axis=-1)
        scale = self.mesh.bounding_box_diagonal() ** 2
        if (jac <= singular_tol * scale).any():
            f, p = np.unravel_index(int(np.argmin(jac)), jac.shape)
            raise SingularFrame(
                f"degenerate frame on face {f} at point {p} "
                f"(|r_u x r_v| = {jac[f, p]:.3e})"
            )
        unit = nrm / jac[..., None]
        # inverse first fundamental form applied to parametric gradients
        e = np.einsum("fpk,fpk->fp", r_u, r_u)
        f_ = np.einsum("fpk,fpk->fp", r_u, r_v)
        g = np.einsum("fpk,fpk->fp", r_v, r_v)
        det = e * g - f_ * f_
        a = (g[..., None] * plan.d_du - f_[..., None] * plan.d_dv) / det[..., None]
        b = (-f_[..., None] * plan.d_du + e[..., None] * plan.d_dv) / det[..., None]
        grads = a[..., None] * r_u[:, :, None, :] + b[..., None] * r_v[:, :, None, :]
        return {
            "positions": pos,
            "r_u": r_u,
            "r_v": r_v,
            "normals": unit,
            "jacobians": jac,
            "surface_gradients": grads,
        }

    def evaluate(self, face, u, v):
        """Single-point evaluation returning a BasisEval record."""
        plan_pts = np.array([[float(u), float(v)]])
        _check_domain(plan_pts[:, 0], plan_pts[:, 1])
        st = self._stencils[face]
        if st.regular:
            vals, du, dv = eval_regular_basis(plan_pts[0, 0], plan_pts[0, 1])
        else:
            vals, du, dv = _irregular_rows(
                st.corner_valences[0], int(self._shifts[face]),
                float(u), float(v), self.max_depth,
            )
        X = self.mesh.vertices[st.indices]
        pos = vals @ X
        r_u = du @ X
        r_v = dv @ X
        nrm = np.cross(r_u, r_v)
        jac = float(np.linalg.norm(nrm))
        scale = self.mesh.bounding_box_diagonal() ** 2
        if jac <= 1e-13 * scale:
            raise SingularFrame(f"degenerate frame on face {face}")
        e = r_u @ r_u
        f_ = r_u @ r_v
        g = r_v @ r_v
        det = e * g - f_ * f_
        a = (g * du - f_ * dv) / det
        b = (-f_ * du + e * dv) / det
        grads = a[:, None] * r_u + b[:, None] * r_v
        return BasisEval(
            face=int(face), stencil=st.indices, values=vals, d_du=du, d_dv=dv,
            position=pos, r_u=r_u, r_v=r_v, normal=nrm / jac, jacobian=jac,
            surface_gradients=grads,
        )


def eval_patch(mesh, face, u, v, max_depth=20):
    """Evaluate the limit surface of `mesh` on `face` at barycentric (u, v)."""
    return LimitEvaluator(mesh, max_depth=max_depth).evaluate(face, u, v)


def ensure_analysis_ready(mesh):
    """Refine once if any face has more than one extraordinary corner.

    Loop refinement leaves the limit surface unchanged, so analysis results
    are unaffected; only the basis granularity changes.
    """
    extra = mesh.valence[mesh.faces] != 6
    if (extra.sum(axis=1) > 1).any():
        return loop_subdivide(mesh)
    return mesh


def limit_surface_area(mesh, degree=4):
    """Total limit-surface area by per-patch quadrature."""
    mesh = ensure_analysis_ready(mesh)
    rule = quadrature_rule(degree)
    ev = LimitEvaluator(mesh)
    plan = ev.plan(rule.points, key=f"quad{degree}")
    jac = ev.frames(plan)["jacobians"]
    return float(jac @ rule.weights if jac.ndim == 1 else (jac * rule.weights).sum())


def limit_samples(mesh, per_edge=4):
    """Dense limit-surface sample points, (N, 3), on a barycentric lattice.

    Samples the open interior lattice (i + 1/3, j + 1/3)/per_edge of every
    face, which covers patches evenly and avoids extraordinary corners.
    """
    mesh = ensure_analysis_ready(mesh)
    pts = []
    for i in range(per_edge):
        for j in range(per_edge - i):
            pts.append(((i + 1.0 / 3.0) / per_edge, (j + 1.0 / 3.0) / per_edge))
    pts = np.array(pts)
    ev = LimitEvaluator(mesh)
    plan = ev.plan(pts, key=f"lattice{per_edge}")
    pos = ev.frames(plan)["positions"]
    return pos.reshape(-1, 3)
