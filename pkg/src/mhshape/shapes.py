"""Reference control meshes: platonic solids, icospheres, simple scatterers.

The icosphere helpers support fitting the control net so that the *limit*
surface (not the control polygon) matches the requested radius; analysis and
scattering tests need the smooth surface, which otherwise shrinks inside the
control sphere.
"""

from __future__ import annotations

import numpy as np

from .mesh import build_mesh, limit_positions, loop_subdivide

__all__ = [
    "tetrahedron",
    "icosahedron",
    "icosphere",
    "ellipsoid",
    "bumpy_sphere",
    "bumpy_cube",
]


def tetrahedron(scale=1.0):
    """Regular tetrahedron, the minimal closed triangle mesh."""
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    v *= scale / np.sqrt(3.0)
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return build_mesh(v, f)


def icosahedron(radius=1.0):
    """Regular icosahedron with circumradius `radius`."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    v *= radius / np.linalg.norm(v[0])
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return build_mesh(v, f)


def icosphere(level, radius=1.0, limit_fit=False):
    """Icosahedron Loop-subdivided `level` times, projected to a sphere.

    With limit_fit=True the control net is adjusted (fixed-point on the
    vertex limit stencil) so the limit surface itself has radius `radius`;
    otherwise the control vertices sit exactly on the sphere and the limit
    surface lies slightly inside it.
    """
    mesh = icosahedron(radius)
    for _ in range(level):
        mesh = loop_subdivide(mesh)
        v = mesh.vertices.copy()
        v *= radius / np.linalg.norm(v, axis=1)[:, None]
        mesh = mesh.with_vertices(v)
    if limit_fit:
        v = mesh.vertices.copy()
        for _ in range(30):
            r = np.linalg.norm(limit_positions(mesh.with_vertices(v)), axis=1)
            err = np.max(np.abs(r - radius))
            v *= (radius / r)[:, None]
            if err < 1e-13 * radius:
                break
        mesh = mesh.with_vertices(v)
    return mesh


def ellipsoid(level, semi_axes, limit_fit=True):
    """Ellipsoid by anisotropic scaling of an icosphere."""
    base = icosphere(level, radius=1.0, limit_fit=limit_fit)
    return base.with_vertices(base.vertices * np.asarray(semi_axes, dtype=float))


def bumpy_sphere(level=2, amplitude=0.15, lobes=3.0):
    """Sphere with smooth angular bumps; a generic non-symmetric scatterer."""
    base = icosphere(level, radius=1.0, limit_fit=True)
    v = base.vertices
    x, y, z = v.T
    r = np.linalg.norm(v, axis=1)
    bump = 1.0 + amplitude * (
        np.sin(lobes * x / r) * np.sin(lobes * y / r)
        + 0.6 * np.cos(lobes * z / r)
    )
    return base.with_vertices(v * bump[:, None])


def bumpy_cube(level=3, box=1.0, rounding=4.0, amplitude=0.18, lobes=2.5):
    """Rounded cube with protruding lobes, spanning many spatial frequencies.

    Built by mapping an icosphere radially onto a superellipsoid-like body of
    half-width `box` and modulating the radius with smooth angular lobes.
    """
    base = icosphere(level, radius=1.0, limit_fit=True)
    d = base.vertices / np.linalg.norm(base.vertices, axis=1)[:, None]
    # radius of the superellipsoid |x|^p + |y|^p + |z|^p = box^p along d
    p = rounding
    rad = box / (np.abs(d) ** p).sum(axis=1) ** (1.0 / p)
    x, y, z = d.T
    bump = 1.0 + amplitude * np.cos(lobes * np.pi * x) * np.cos(
        lobes * np.pi * y
    ) * np.cos(lobes * np.pi * z)
    return base.with_vertices(d * (rad * bump)[:, None])
