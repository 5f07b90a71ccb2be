"""Galerkin boundary element solver for exterior sound-soft scattering.

The combined (Burton-Miller) boundary operator is discretized with the same
subdivision basis that carries the geometry. Kernel convention:
G(r, r') = exp(-i k R) / (4 pi R) with time dependence exp(+i w t)
suppressed; incident plane waves are exp(-i k d.r). Far-field values follow
the operator  (1/4pi) Int Lambda(r') exp(+i k rhat.r') ds', i.e. the
scattered field behaves as  -FF(rhat) exp(-i k r)/r.

Assembly strategy: a dense kernel matrix between all surface quadrature
points is sandwiched between sparse basis/weight maps (fast, vectorized);
coincident patch pairs are then corrected with a polar (Duffy) rule and
adjacent/near pairs with an elevated-order rule, both batched. The
adjoint-double-layer block carries the exterior-trace jump term +1/2 I,
which oracle validation on the sphere confirms (see tests).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy import sparse
from scipy.special import eval_legendre, spherical_jn, spherical_yn

from .errors import (
    DirectionMismatch,
    ParseError,
    QuadratureBreakdown,
    SingularFrame,
    SingularMatrix,
    ValidationError,
)
from .subdivision import LimitEvaluator, quadrature_rule

__all__ = [
    "IncidentWave",
    "BemSystem",
    "BemSolution",
    "FarFieldPattern",
    "FarFieldDataset",
    "plane_wave",
    "assemble_system",
    "assemble_rhs",
    "solve_density",
    "far_field",
    "sphere_farfield_oracle",
    "epsilon_l2",
    "lebedev26",
    "fibonacci_directions",
    "gauss_sphere_directions",
    "direction_from_angles",
    "save_farfield",
    "load_farfield",
]


# ---------------------------------------------------------------------------
# Waves and direction sets.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IncidentWave:
    """Plane wave exp(-i k d.r): unit direction, wavenumber, amplitude."""

    direction: np.ndarray
    wavenumber: float
    amplitude: complex = 1.0 + 0.0j

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (3,) or not np.isfinite(d).all():
            raise ValidationError("direction must be a finite 3-vector")
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-8:
            raise ValidationError("direction must be a unit vector")
        if not self.wavenumber > 0:
            raise ValidationError("wavenumber must be positive")
        object.__setattr__(self, "direction", d / n)


def plane_wave(wave, points):
    """Values and gradients of the incident wave at (N, 3) points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    phase = np.exp(-1j * wave.wavenumber * (pts @ wave.direction))
    vals = wave.amplitude * phase
    grads = (-1j * wave.wavenumber) * vals[:, None] * wave.direction
    return vals, grads


def direction_from_angles(theta, phi):
    """Unit vector from polar angle theta (from +z) and azimuth phi."""
    st = np.sin(theta)
    return np.array([st * np.cos(phi), st * np.sin(phi), np.cos(theta)])


def lebedev26():
    """Classic 26-point octahedral direction set; weights sum to 4 pi."""
    dirs = []
    wts = []
    for s in (1, -1):
        for axis in range(3):
            d = np.zeros(3)
            d[axis] = s
            dirs.append(d)
            wts.append(1.0 / 21.0)
    r = 1.0 / np.sqrt(2.0)
    for i in range(3):
        j = (i + 1) % 3
        for si in (1, -1):
            for sj in (1, -1):
                d = np.zeros(3)
                d[i], d[j] = si * r, sj * r
                dirs.append(d)
                wts.append(4.0 / 105.0)
    r = 1.0 / np.sqrt(3.0)
    for sx in (1, -1):
        for sy in (1, -1):
            for sz in (1, -1):
                dirs.append(np.array([sx * r, sy * r, sz * r]))
                wts.append(9.0 / 280.0)
    return np.array(dirs), 4.0 * np.pi * np.array(wts)


def fibonacci_directions(count):
    """Near-uniform spiral points on the sphere with equal weights."""
    i = np.arange(count)
    z = 1.0 - (2.0 * i + 1.0) / count
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    dirs = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    return dirs, np.full(count, 4.0 * np.pi / count)


def gauss_sphere_directions(n_polar):
    """Product Gauss-Legendre x uniform-azimuth rule; exact for smooth fields."""
    x, w = np.polynomial.legendre.leggauss(n_polar)
    n_az = 2 * n_polar
    phi = 2.0 * np.pi * np.arange(n_az) / n_az
    ct = x[:, None]
    st = np.sqrt(1.0 - ct * ct)
    dirs = np.stack(
        [st * np.cos(phi)[None, :], st * np.sin(phi)[None, :],
         np.broadcast_to(ct, (n_polar, n_az))], axis=-1
    ).reshape(-1, 3)
    wts = np.repeat(w, n_az) * (2.0 * np.pi / n_az)
    return dirs, wts


# ---------------------------------------------------------------------------
# Surface quadrature context.
# ---------------------------------------------------------------------------

class _SurfaceQuadrature:
    """Flattened quadrature data of one mesh at the base rule."""

    def __init__(self, mesh, base_degree=4):
        self.mesh = mesh
        self.rule = quadrature_rule(base_degree)
        ev = LimitEvaluator(mesh)
        self.evaluator = ev
        plan = ev.plan(self.rule.points, key=f"quad{base_degree}")
        try:
            fr = ev.frames(plan)
        except SingularFrame as exc:
            raise QuadratureBreakdown(str(exc)) from exc
        self.plan = plan
        F, P = fr["jacobians"].shape
        self.num_faces = F
        self.points_per_face = P
        self.positions = fr["positions"].reshape(-1, 3)
        self.normals = fr["normals"].reshape(-1, 3)
        self.wjac = (fr["jacobians"] * self.rule.weights).reshape(-1)
        nmax = plan.indices.shape[1]
        rows = np.repeat(np.arange(F * P), nmax)
        cols = np.broadcast_to(
            plan.indices[:, None, :], (F, P, nmax)
        ).reshape(-1)
        vals = plan.values.reshape(-1)
        nv = mesh.num_vertices
        psi = sparse.coo_matrix(
            (vals, (rows, cols)), shape=(F * P, nv)
        ).tocsr()
        self.basis = psi
        self.basis_weighted = sparse.diags(self.wjac) @ psi
        v = mesh.vertices
        fidx = mesh.faces
        self.face_centroids = v[fidx].mean(axis=1)
        e = np.stack(
            [
                v[fidx[:, 1]] - v[fidx[:, 0]],
                v[fidx[:, 2]] - v[fidx[:, 1]],
                v[fidx[:, 0]] - v[fidx[:, 2]],
            ],
            axis=1,
        )
        self.face_sizes = np.linalg.norm(e, axis=2).max(axis=1)

    def density_at_points(self, coefficients):
        return self.basis @ coefficients

    def integrate_against_basis(self, samples):
        """Vector of Int psi_m f dS for sampled f at the quadrature points."""
        return self.basis_weighted.T @ samples


def _kernels(r_test, n_test, r_src, k, want_dlp):
    """Single-layer and adjoint-double-layer kernels between point sets.

    r_test (T, 3), n_test (T, 3) or None, r_src (S, 3); returns (T, S) arrays.
    Entries with R == 0 are set to zero (they are replaced by corrections).
    """
    diff = r_test[:, None, :] - r_src[None, :, :]
    R = np.linalg.norm(diff, axis=-1)
    zero = R == 0.0
    Rsafe = np.where(zero, 1.0, R)
    g = np.exp(-1j * k * Rsafe) / (4.0 * np.pi * Rsafe)
    g[zero] = 0.0
    if not want_dlp:
        return g, None
    # dG/dn at the test point: (n.(r - r')) * (-(1 + ikR) e^{-ikR}/(4 pi R^3))
    ndot = np.einsum("tsk,tk->ts", diff, n_test)
    dg = ndot * (-(1.0 + 1j * k * Rsafe)) * np.exp(-1j * k * Rsafe) / (
        4.0 * np.pi * Rsafe ** 3
    )
    dg[zero] = 0.0
    return g, dg


def _duffy_reference(outer_points, order):
    """Polar-split inner nodes for every outer point of the base rule.

    Returns reference points (P_out, Q_in, 2) and weights (P_out, Q_in)
    integrating over the full reference triangle with the 1/R-cancelling
    radial Jacobian built in.
    """
    gx, gw = np.polynomial.legendre.leggauss(order)
    gx = 0.5 * (gx + 1.0)
    gw = 0.5 * gw
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    pts_all = []
    wts_all = []
    for u0, v0 in outer_points:
        p0 = np.array([u0, v0])
        pts = []
        wts = []
        for i in range(3):
            a = corners[i]
            b = corners[(i + 1) % 3]
            det = abs((a[0] - p0[0]) * (b[1] - p0[1])
                      - (a[1] - p0[1]) * (b[0] - p0[0]))
            for xi, wx in zip(gx, gw):
                for yj, wy in zip(gx, gw):
                    q = p0 + xi * ((1.0 - yj) * (a - p0) + yj * (b - p0))
                    pts.append(q)
                    wts.append(wx * wy * xi * det)
        pts_all.append(pts)
        wts_all.append(wts)
    return np.array(pts_all), np.array(wts_all)


@dataclass
class BemSystem:
    """Dense Galerkin system for one mesh, wavenumber and coupling factor."""

    matrix: np.ndarray
    wavenumber: float
    alpha: float
    coupling: complex          # i/k, the second-equation weight
    quadrature: _SurfaceQuadrature
    _lu: tuple = None

    @property
    def size(self):
        return self.matrix.shape[0]


@dataclass(frozen=True)
class BemSolution:
    """Boundary density coefficients in the subdivision basis."""

    coefficients: np.ndarray
    residual: float
    wavenumber: float


def assemble_system(
    mesh,
    wavenumber,
    alpha=0.5,
    base_degree=4,
    near_degree=10,
    duffy_order=4,
    near_ratio=2.0,
    kernel_chunk=6_000_000,
):
    """Assemble the combined-operator Galerkin matrix.

    alpha = 0 gives the pure single-layer equation; 0 < alpha <= 1 blends in
    the adjoint-double-layer equation with weight i/k, which removes the
    interior-resonance null space. Warns when the mesh is coarser than a
    seventh of the wavelength.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError("alpha must lie in [0, 1]")
    k = float(wavenumber)
    if not k > 0:
        raise ValidationError("wavenumber must be positive")
    quad = _SurfaceQuadrature(mesh, base_degree)
    lam = 2.0 * np.pi / k
    hmax = quad.face_sizes.max()
    if hmax > lam / 7.0:
        warnings.warn(
            f"mesh size {hmax:.3g} exceeds a seventh of the wavelength "
            f"{lam / 7.0:.3g}; accuracy may suffer",
            stacklevel=2,
        )
    beta = 1j / k
    nv = mesh.num_vertices
    Gw = quad.basis_weighted
    pos, nrm = quad.positions, quad.normals
    nq = pos.shape[0]

    # bulk sandwich, chunked over test rows
    S = np.zeros((nv, nv), dtype=complex)
    D = np.zeros((nv, nv), dtype=complex) if alpha > 0 else None
    rows_per_chunk = max(1, kernel_chunk // nq)
    for start in range(0, nq, rows_per_chunk):
        stop = min(nq, start + rows_per_chunk)
        g, dg = _kernels(pos[start:stop], nrm[start:stop], pos, k, alpha > 0)
        Gw_rows = Gw[start:stop]
        S += Gw_rows.T @ (g @ Gw)
        if alpha > 0:
            D += Gw_rows.T @ (dg @ Gw)

    P = quad.points_per_face
    F = quad.num_faces
    plan = quad.plan
    nmax = plan.indices.shape[1]
    pos_f = pos.reshape(F, P, 3)
    nrm_f = nrm.reshape(F, P, 3)
    wjac_f = quad.wjac.reshape(F, P)
    psi_f = plan.values  # (F, P, nmax)

    def scatter(local, rows_idx, cols_idx, target):
        t = sparse.coo_matrix(
            (
                local.ravel(),
                (
                    np.broadcast_to(rows_idx[:, :, None], local.shape).ravel(),
                    np.broadcast_to(cols_idx[:, None, :], local.shape).ravel(),
                ),
            ),
            shape=(nv, nv),
        )
        target += t.toarray()

    # ---- remove the bulk estimate of coincident pairs, add the polar rule
    gII, dgII = _batched_self_kernels(pos_f, nrm_f, k, alpha > 0)
    wpair = wjac_f[:, :, None] * wjac_f[:, None, :]
    locS = -np.einsum("fim,fij,fjn->fmn", psi_f, gII * wpair, psi_f)
    if alpha > 0:
        locD = -np.einsum("fim,fij,fjn->fmn", psi_f, dgII * wpair, psi_f)

    duffy_pts, duffy_wts = _duffy_reference(quad.rule.points, duffy_order)
    dpts = duffy_pts.reshape(-1, 2)
    dplan = quad.evaluator.plan(
        dpts, key=f"duffy{base_degree}_{duffy_order}"
    )
    try:
        dfr = quad.evaluator.frames(dplan)
    except SingularFrame as exc:
        raise QuadratureBreakdown(str(exc)) from exc
    Qin = duffy_wts.shape[1]
    dpos = dfr["positions"].reshape(F, P, Qin, 3)
    djac = dfr["jacobians"].reshape(F, P, Qin)
    dpsi = dplan.values.reshape(F, P, Qin, nmax)
    diff = pos_f[:, :, None, :] - dpos
    R = np.linalg.norm(diff, axis=-1)
    R = np.where(R == 0.0, np.finfo(float).tiny ** 0.5, R)
    gD = np.exp(-1j * k * R) / (4.0 * np.pi * R)
    wD = duffy_wts[None, :, :] * djac  # (F, P, Qin)
    locS += np.einsum(
        "fim,fij,fijn->fmn", psi_f * wjac_f[..., None], gD * wD, dpsi,
        optimize=True,
    )
    if alpha > 0:
        ndot = np.einsum("fijk,fik->fij", diff, nrm_f)
        dgD = ndot * (-(1.0 + 1j * k * R)) * np.exp(-1j * k * R) / (
            4.0 * np.pi * R ** 3
        )
        locD += np.einsum(
            "fim,fij,fijn->fmn", psi_f * wjac_f[..., None], dgD * wD, dpsi,
            optimize=True,
        )
    scatter(locS, plan.indices, plan.indices, S)
    if alpha > 0:
        scatter(locD, plan.indices, plan.indices, D)

    # ---- adjacent and near pairs: replace base rule by an elevated rule
    pairs = _near_pairs(quad, near_ratio)
    if pairs.size:
        nrule = quadrature_rule(near_degree)
        nplan = quad.evaluator.plan(nrule.points, key=f"quad{near_degree}")
        try:
            nfr = quad.evaluator.frames(nplan)
        except SingularFrame as exc:
            raise QuadratureBreakdown(str(exc)) from exc
        npos = nfr["positions"]
        nnrm = nfr["normals"]
        nwj = nfr["jacobians"] * nrule.weights
        npsi = nplan.values
        t, s = pairs[:, 0], pairs[:, 1]
        for sel in np.array_split(np.arange(len(pairs)), max(1, len(pairs) // 4096)):
            ts, ss = t[sel], s[sel]
            # subtract the bulk (base x base) estimate
            g, dg = _batched_pair_kernels(
                pos_f[ts], nrm_f[ts], pos_f[ss], k, alpha > 0
            )
            w2 = wjac_f[ts][:, :, None] * wjac_f[ss][:, None, :]
            lS = -np.einsum("pim,pij,pjn->pmn", psi_f[ts], g * w2, psi_f[ss])
            if alpha > 0:
                lD = -np.einsum("pim,pij,pjn->pmn", psi_f[ts], dg * w2, psi_f[ss])
            # add the elevated (near x near) estimate
            g, dg = _batched_pair_kernels(
                npos[ts], nnrm[ts], npos[ss], k, alpha > 0
            )
            w2 = nwj[ts][:, :, None] * nwj[ss][:, None, :]
            lS += np.einsum(
                "pim,pij,pjn->pmn", npsi[ts], g * w2, npsi[ss], optimize=True
            )
            if alpha > 0:
                lD += np.einsum(
                    "pim,pij,pjn->pmn", npsi[ts], dg * w2, npsi[ss],
                    optimize=True,
                )
            scatter(lS, plan.indices[ts], plan.indices[ss], S)
            if alpha > 0:
                scatter(lD, plan.indices[ts], plan.indices[ss], D)

    S = 0.5 * (S + S.T)  # the single-layer Galerkin block is symmetric
    Z = (1.0 - alpha) * S
    if alpha > 0:
        mass = (quad.basis_weighted.T @ quad.basis).toarray()
        Z = Z + alpha * beta * (D + 0.5 * mass)
    if not np.isfinite(Z).all():
        raise QuadratureBreakdown("non-finite entry in the assembled matrix")
    return BemSystem(
        matrix=Z, wavenumber=k, alpha=alpha, coupling=beta, quadrature=quad
    )


def _batched_self_kernels(pos_f, nrm_f, k, want_dlp):
    diff = pos_f[:, :, None, :] - pos_f[:, None, :, :]
    R = np.linalg.norm(diff, axis=-1)
    zero = R == 0.0
    Rs = np.where(zero, 1.0, R)
    g = np.exp(-1j * k * Rs) / (4.0 * np.pi * Rs)
    g[zero] = 0.0
    if not want_dlp:
        return g, None
    ndot = np.einsum("fijk,fik->fij", diff, nrm_f)
    dg = ndot * (-(1.0 + 1j * k * Rs)) * np.exp(-1j * k * Rs) / (
        4.0 * np.pi * Rs ** 3
    )
    dg[zero] = 0.0
    return g, dg


def _batched_pair_kernels(pos_t, nrm_t, pos_s, k, want_dlp):
    diff = pos_t[:, :, None, :] - pos_s[:, None, :, :]
    R = np.linalg.norm(diff, axis=-1)
    R = np.where(R == 0.0, np.finfo(float).tiny ** 0.5, R)
    g = np.exp(-1j * k * R) / (4.0 * np.pi * R)
    if not want_dlp:
        return g, None
    ndot = np.einsum("pijk,pik->pij", diff, nrm_t)
    dg = ndot * (-(1.0 + 1j * k * R)) * np.exp(-1j * k * R) / (
        4.0 * np.pi * R ** 3
    )
    return g, dg


def _near_pairs(quad, ratio):
    """Ordered face pairs (t != s) sharing a vertex or closer than ratio*size."""
    mesh = quad.mesh
    F = quad.num_faces
    shared = set()
    faces = mesh.faces
    vert_faces = [[] for _ in range(mesh.num_vertices)]
    for f, (a, b, c) in enumerate(faces):
        vert_faces[a].append(f)
        vert_faces[b].append(f)
        vert_faces[c].append(f)
    for flist in vert_faces:
        for i in flist:
            for j in flist:
                if i != j:
                    shared.add((i, j))
    from scipy.spatial import cKDTree

    tree = cKDTree(quad.face_centroids)
    size = quad.face_sizes
    rmax = ratio * size.max()
    near = tree.query_pairs(rmax, output_type="ndarray")
    for a, b in near:
        d = np.linalg.norm(quad.face_centroids[a] - quad.face_centroids[b])
        if d < ratio * max(size[a], size[b]):
            shared.add((int(a), int(b)))
            shared.add((int(b), int(a)))
    if not shared:
        return np.empty((0, 2), dtype=np.int64)
    return np.array(sorted(shared), dtype=np.int64)


def assemble_rhs(system, wave):
    """Galerkin right-hand side of the combined equation for one wave."""
    quad = system.quadrature
    vals, grads = plane_wave(wave, quad.positions)
    alpha, beta = system.alpha, system.coupling
    vi = (1.0 - alpha) * vals
    if alpha > 0:
        vi = vi + alpha * beta * np.einsum("qk,qk->q", quad.normals, grads)
    return quad.integrate_against_basis(vi)


def solve_density(system, rhs):
    """Direct dense solve with residual check (refined once if needed)."""
    if system._lu is None:
        try:
            system._lu = sla.lu_factor(system.matrix)
        except (sla.LinAlgError, ValueError) as exc:
            cond = None
            try:
                cond = np.linalg.cond(system.matrix)
            except Exception:
                pass
            raise SingularMatrix(str(exc), condition=cond) from exc
    x = sla.lu_solve(system._lu, rhs)
    r = rhs - system.matrix @ x
    denom = max(np.linalg.norm(rhs), np.finfo(float).tiny)
    rel = np.linalg.norm(r) / denom
    if rel > 1e-10:
        x = x + sla.lu_solve(system._lu, r)
        rel = np.linalg.norm(rhs - system.matrix @ x) / denom
    if rel > 1e-10 or not np.isfinite(x).all():
        raise SingularMatrix(
            f"solve residual {rel:.3e} exceeds tolerance",
            condition=float(np.linalg.cond(system.matrix)),
        )
    return BemSolution(
        coefficients=x, residual=float(rel), wavenumber=system.wavenumber
    )


# ---------------------------------------------------------------------------
# Far field.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FarFieldPattern:
    """Far-field samples over a weighted direction set (weights sum 4 pi)."""

    directions: np.ndarray
    weights: np.ndarray
    values: np.ndarray

    def magnitudes(self):
        return np.abs(self.values)

    def norm(self):
        return float(np.sqrt(np.sum(self.weights * np.abs(self.values) ** 2)))


def far_field(system_or_quad, solution, directions, weights=None):
    """Evaluate (1/4pi) Int Lambda(r') exp(+ik rhat.r') over the surface."""
    quad = (
        system_or_quad.quadrature
        if isinstance(system_or_quad, BemSystem)
        else system_or_quad
    )
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    if weights is None:
        weights = np.full(len(dirs), 4.0 * np.pi / len(dirs))
    lam = quad.density_at_points(solution.coefficients)
    phase = np.exp(
        1j * solution.wavenumber * (dirs @ quad.positions.T)
    )
    vals = phase @ (quad.wjac * lam) / (4.0 * np.pi)
    return FarFieldPattern(directions=dirs, weights=np.asarray(weights), values=vals)


def sphere_farfield_oracle(radius, wavenumber, direction, directions,
                           weights=None, tol=1e-14):
    """Partial-wave far field of a sound-soft sphere, matching far_field.

    The classical scattering amplitude f (field ~ f e^{-ikr}/r) relates to
    the returned values by  value = -f. Series truncates adaptively.
    """
    a = float(radius)
    k = float(wavenumber)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    if weights is None:
        weights = np.full(len(dirs), 4.0 * np.pi / len(dirs))
    x = k * a
    cosg = np.clip(dirs @ d, -1.0, 1.0)
    total = np.zeros(len(dirs), dtype=complex)
    lmax = int(np.ceil(x + 12 + 8 * x ** (1.0 / 3.0))) + 8
    scale = 0.0
    for l in range(lmax + 1):
        jl = spherical_jn(l, x)
        h2 = jl - 1j * spherical_yn(l, x)
        term = (1j / k) * (2 * l + 1) * (jl / h2)
        total += term * eval_legendre(l, cosg)
        scale = max(scale, np.abs(term))
        if l > x + 4 and np.abs(term) < tol * scale:
            break
    return FarFieldPattern(
        directions=dirs, weights=np.asarray(weights), values=total
    )


def epsilon_l2(candidate, reference):
    """Weighted relative L2 distance between two patterns."""
    if candidate.directions.shape != reference.directions.shape or not np.allclose(
        candidate.directions, reference.directions, atol=1e-12
    ):
        raise DirectionMismatch("patterns sampled on different direction sets")
    w = reference.weights
    num = np.sqrt(np.sum(w * np.abs(candidate.values - reference.values) ** 2))
    den = np.sqrt(np.sum(w * np.abs(reference.values) ** 2))
    return float(num / den) if den > 0 else float(np.inf if num > 0 else 0.0)


# ---------------------------------------------------------------------------
# Far-field dataset (multiple incidences and wavenumbers) and its file form.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FarFieldDataset:
    """Far-field values indexed by (incidence, wavenumber, direction)."""

    incident_directions: np.ndarray   # (M, 3)
    wavenumbers: np.ndarray           # (N,)
    directions: np.ndarray            # (Q, 3)
    weights: np.ndarray               # (Q,)
    values: np.ndarray                # (M, N, Q) complex (or real if phaseless)
    phaseless: bool = False

    @property
    def shape(self):
        return self.values.shape

    def pattern(self, m, n):
        return FarFieldPattern(
            directions=self.directions,
            weights=self.weights,
            values=self.values[m, n],
        )

    def magnitudes(self):
        return np.abs(self.values)

    def as_phaseless(self):
        if self.phaseless:
            return self
        return FarFieldDataset(
            incident_directions=self.incident_directions,
            wavenumbers=self.wavenumbers,
            directions=self.directions,
            weights=self.weights,
            values=np.abs(self.values),
            phaseless=True,
        )


def _angles_of(dirs):
    theta = np.arccos(np.clip(dirs[:, 2], -1.0, 1.0))
    phi = np.arctan2(dirs[:, 1], dirs[:, 0])
    return theta, phi


def save_farfield(dataset, path):
    """Structured text: header, weighted direction table, then value rows."""
    m, n, q = dataset.shape
    ti, pi = _angles_of(np.atleast_2d(dataset.incident_directions))
    with open(path, "w") as fh:
        fh.write("# mhshape farfield v1\n")
        fh.write(f"phaseless = {'true' if dataset.phaseless else 'false'}\n")
        fh.write("wavenumbers = " + " ".join(f"{k:.17g}" for k in dataset.wavenumbers) + "\n")
        fh.write(
            "incident_theta_phi = "
            + " ".join(f"{t:.17g} {p:.17g}" for t, p in zip(ti, pi))
            + "\n"
        )
        fh.write(f"observation_count = {q}\n")
        to, po = _angles_of(dataset.directions)
        for t, p, w in zip(to, po, dataset.weights):
            fh.write(f"obs {t:.17g} {p:.17g} {w:.17g}\n")
        for im in range(m):
            for iw in range(n):
                for iq in range(q):
                    val = dataset.values[im, iw, iq]
                    if dataset.phaseless:
                        fh.write(f"{im} {iw} {iq} {float(np.real(val)):.17g}\n")
                    else:
                        fh.write(
                            f"{im} {iw} {iq} {val.real:.17g} {val.imag:.17g}\n"
                        )


def load_farfield(path):
    header = {}
    obs = []
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("obs "):
                parts = line.split()
                if len(parts) != 4:
                    raise ParseError("obs row needs theta phi weight", lineno)
                obs.append([float(p) for p in parts[1:]])
                continue
            if "=" in line:
                key, _, val = line.partition("=")
                header[key.strip()] = val.strip()
                continue
            parts = line.split()
            if len(parts) not in (4, 5):
                raise ParseError("value row malformed", lineno)
            rows.append([float(p) for p in parts])
    for need in ("phaseless", "wavenumbers", "incident_theta_phi",
                 "observation_count"):
        if need not in header:
            raise ParseError(f"missing header field {need}", None)
    phaseless = header["phaseless"].lower() == "true"
    ks = np.array([float(t) for t in header["wavenumbers"].split()])
    ang = [float(t) for t in header["incident_theta_phi"].split()]
    if len(ang) % 2:
        raise ParseError("incident_theta_phi must hold (theta, phi) pairs", None)
    inc = np.array(
        [direction_from_angles(ang[2 * i], ang[2 * i + 1])
         for i in range(len(ang) // 2)]
    )
    obs = np.array(obs)
    if obs.shape[0] != int(header["observation_count"]):
        raise ParseError("observation table length mismatch", None)
    odirs = np.array(
        [direction_from_angles(t, p) for t, p, _ in obs]
    )
    owts = obs[:, 2]
    m, n, q = len(inc), len(ks), len(odirs)
    values = np.zeros((m, n, q), dtype=float if phaseless else complex)
    seen = np.zeros((m, n, q), dtype=bool)
    for row in rows:
        im, iw, iq = (int(row[0]), int(row[1]), int(row[2]))
        if phaseless:
            values[im, iw, iq] = row[3]
        else:
            values[im, iw, iq] = row[3] + 1j * row[4]
        seen[im, iw, iq] = True
    if not seen.all():
        raise ParseError("dataset rows incomplete", None)
    return FarFieldDataset(
        incident_directions=inc,
        wavenumbers=ks,
        directions=odirs,
        weights=owts,
        values=values,
        phaseless=phaseless,
    )
