"""Surface-Laplacian eigenbasis on the limit surface and its transforms.

The stiffness and mass matrices are assembled with the same subdivision
basis that carries the geometry, by quadrature over the limit surface.
Eigenpairs of the symmetric definite pencil give a mass-orthonormal basis
("manifold harmonics"); projecting the control-vertex coordinate channels
onto it compresses the shape into a short coefficient vector per axis.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg as sla
from scipy import sparse
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh

from .errors import (
    BasisMeshMismatch,
    EigensolverFailure,
    NotPositiveDefinite,
    ParseError,
    ValidationError,
)
from .mesh import ControlMesh
from .subdivision import LimitEvaluator, quadrature_rule

__all__ = [
    "LboMatrices",
    "ManifoldHarmonicBasis",
    "ShapeSpectrum",
    "assemble_lbo",
    "solve_mhb",
    "mht_forward",
    "mht_inverse",
    "mht_project_function",
    "lowpass",
    "band_partition",
    "is_degenerate",
    "save_spectrum",
    "load_spectrum",
]

DENSE_EIG_LIMIT = 3000


@dataclass(frozen=True)
class LboMatrices:
    """Stiffness (gradient-gradient) and mass (value-value) Galerkin matrices."""

    stiffness: sparse.csr_matrix
    mass: sparse.csr_matrix
    mesh_hash: str

    @property
    def size(self):
        return self.stiffness.shape[0]


def assemble_lbo(mesh, degree=4):
    """Assemble the surface stiffness and mass matrices by patch quadrature.

    The mesh must be analysis ready (at most one extraordinary corner per
    face; see subdivision.ensure_analysis_ready).
    """
    rule = quadrature_rule(degree)
    ev = LimitEvaluator(mesh)
    plan = ev.plan(rule.points, key=f"quad{degree}")
    fr = ev.frames(plan)
    wjac = fr["jacobians"] * rule.weights  # (F, P)
    vals = plan.values
    grads = fr["surface_gradients"]
    a_loc = np.einsum("fpmk,fpnk,fp->fmn", grads, grads, wjac, optimize=True)
    b_loc = np.einsum("fpm,fpn,fp->fmn", vals, vals, wjac, optimize=True)
    nv = mesh.num_vertices
    nmax = plan.indices.shape[1]
    rows = np.broadcast_to(plan.indices[:, :, None], a_loc.shape).ravel()
    cols = np.broadcast_to(plan.indices[:, None, :], a_loc.shape).ravel()
    A = sparse.coo_matrix((a_loc.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()
    B = sparse.coo_matrix((b_loc.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()
    A = (A + A.T) * 0.5
    B = (B + B.T) * 0.5
    return LboMatrices(stiffness=A, mass=B, mesh_hash=mesh.content_hash())


@dataclass(frozen=True)
class ManifoldHarmonicBasis:
    """Mass-orthonormal eigenbasis of the surface Laplacian.

    eigenvalues are ascending (first ~0, the constant mode); vectors holds
    the coefficient columns in the subdivision basis.
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    mesh: ControlMesh
    mesh_hash: str

    @property
    def count(self):
        return len(self.eigenvalues)


def _fix_signs(vectors):
    v = vectors.copy()
    for j in range(v.shape[1]):
        col = v[:, j]
        big = np.flatnonzero(np.abs(col) > 1e-8 * np.abs(col).max())
        if big.size and col[big[0]] < 0:
            v[:, j] = -col
    return v


def solve_mhb(mats, count, mesh=None):
    """Smallest `count` eigenpairs of the (stiffness, mass) pencil.

    Dense solver below DENSE_EIG_LIMIT unknowns, shift-invert Lanczos above.
    Signs are fixed deterministically (first significant coefficient > 0).
    """
    n = mats.size
    if not 1 <= count <= n:
        raise ValidationError(f"count must be in [1, {n}], got {count}")
    if mesh is not None and mesh.content_hash() != mats.mesh_hash:
        raise BasisMeshMismatch("matrices were assembled on a different mesh")
    A, B = mats.stiffness, mats.mass
    if n <= DENSE_EIG_LIMIT:
        try:
            w, h = sla.eigh(
                A.toarray(), B.toarray(), subset_by_index=(0, count - 1)
            )
        except sla.LinAlgError as exc:
            if "positive definite" in str(exc).lower():
                raise NotPositiveDefinite(str(exc)) from exc
            raise EigensolverFailure(str(exc)) from exc
    else:
        scale = abs(A).sum() / n
        try:
            w, h = eigsh(A, k=count, M=B, sigma=-1e-8 * scale, which="LM")
        except ArpackNoConvergence as exc:
            raise EigensolverFailure(f"Lanczos did not converge: {exc}") from exc
        except ArpackError as exc:
            raise EigensolverFailure(str(exc)) from exc
        order = np.argsort(w)
        w, h = w[order], h[:, order]
    w = np.maximum(w, 0.0)
    return ManifoldHarmonicBasis(
        eigenvalues=w, vectors=_fix_signs(h), mesh=mesh, mesh_hash=mats.mesh_hash
    )


@dataclass(frozen=True)
class ShapeSpectrum:
    """Per-axis harmonic coefficients of the control geometry.

    coefficients has shape (k, 3) for the x, y, z channels; bands is a
    contiguous disjoint cover of range(k) as (start, stop) pairs.
    """

    coefficients: np.ndarray
    eigenvalues: np.ndarray
    mesh_hash: str
    bands: tuple

    @property
    def count(self):
        return self.coefficients.shape[0]

    def band_slice(self, i):
        start, stop = self.bands[i]
        return slice(start, stop)


def _check_bands(bands, k):
    pos = 0
    for start, stop in bands:
        if start != pos or stop <= start:
            raise ValidationError(f"bands are not a contiguous cover of 0..{k}")
        pos = stop
    if pos != k:
        raise ValidationError(f"bands are not a contiguous cover of 0..{k}")


def band_partition(count, band_size):
    """Contiguous bands of `band_size` coefficients covering range(count)."""
    if band_size < 1:
        raise ValidationError("band size must be >= 1")
    edges = list(range(0, count, band_size)) + [count]
    return tuple((edges[i], edges[i + 1]) for i in range(len(edges) - 1))


def mht_forward(mesh, basis, mats, band_size=None):
    """Project control coordinates onto the harmonic basis.

    Exact for the geometry itself because geometry and basis share the
    subdivision space: coefficients = H^T B c per coordinate channel.
    """
    if mesh.content_hash() != basis.mesh_hash or basis.mesh_hash != mats.mesh_hash:
        raise BasisMeshMismatch("mesh, basis and matrices must match")
    coeffs = basis.vectors.T @ (mats.mass @ mesh.vertices)
    bands = band_partition(basis.count, band_size or basis.count)
    return ShapeSpectrum(
        coefficients=coeffs,
        eigenvalues=basis.eigenvalues.copy(),
        mesh_hash=basis.mesh_hash,
        bands=bands,
    )


def mht_project_function(values, basis, mats):
    """Harmonic coefficients of nodal subdivision coefficients `values`."""
    if basis.mesh_hash != mats.mesh_hash:
        raise BasisMeshMismatch("basis and matrices must match")
    return basis.vectors.T @ (mats.mass @ np.asarray(values))


def is_degenerate(mesh, tol=1e-12):
    """True if any face is (near) zero area relative to the bounding box."""
    areas = mesh.face_areas()
    scale = mesh.bounding_box_diagonal()
    if scale == 0.0:
        return True
    return bool((areas <= tol * scale * scale).any())


def mht_inverse(spectrum, basis):
    """Reconstruct control vertices c = H beta on the basis mesh connectivity.

    Degenerate reconstructions are returned (for diagnostics) with a warning;
    callers that need to fail should check is_degenerate.
    """
    if spectrum.mesh_hash != basis.mesh_hash:
        raise BasisMeshMismatch("spectrum and basis were built on different meshes")
    if spectrum.count > basis.count:
        raise ValidationError("spectrum longer than basis")
    verts = basis.vectors[:, : spectrum.count] @ spectrum.coefficients
    mesh = basis.mesh.with_vertices(verts)
    if is_degenerate(mesh):
        warnings.warn("reconstructed geometry has degenerate faces", stacklevel=2)
    return mesh


def lowpass(spectrum, cutoff):
    """Zero all coefficients above the cutoff (1-based count kept)."""
    if not 1 <= cutoff <= spectrum.count:
        raise ValidationError(f"cutoff must be in [1, {spectrum.count}]")
    coeffs = spectrum.coefficients.copy()
    coeffs[cutoff:] = 0.0
    if cutoff < spectrum.count:
        bands = ((0, cutoff), (cutoff, spectrum.count))
    else:
        bands = ((0, cutoff),)
    return replace(spectrum, coefficients=coeffs, bands=bands)


# -- spectrum file ------------------------------------------------------------

def save_spectrum(spectrum, path):
    """Structured text: header plus one row (lambda, bx, by, bz) per mode."""
    with open(path, "w") as fh:
        fh.write("# mhshape spectrum v1\n")
        fh.write(f"mesh_hash = {spectrum.mesh_hash}\n")
        fh.write(f"count = {spectrum.count}\n")
        band_size = spectrum.bands[0][1] - spectrum.bands[0][0]
        fh.write(f"band_size = {band_size}\n")
        for lam, (bx, by, bz) in zip(spectrum.eigenvalues, spectrum.coefficients):
            fh.write(f"{lam:.17g} {bx:.17g} {by:.17g} {bz:.17g}\n")


def load_spectrum(path):
    header = {}
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" in line:
                key, _, val = line.partition("=")
                header[key.strip()] = val.strip()
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParseError("expected 4 columns", lineno)
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
    for need in ("mesh_hash", "count", "band_size"):
        if need not in header:
            raise ParseError(f"missing header field {need}", None)
    data = np.array(rows)
    k = int(header["count"])
    if data.shape[0] != k:
        raise ParseError(f"expected {k} rows, found {data.shape[0]}", None)
    return ShapeSpectrum(
        coefficients=data[:, 1:4],
        eigenvalues=data[:, 0],
        mesh_hash=header["mesh_hash"],
        bands=band_partition(k, int(header["band_size"])),
    )
