"""Conforming triangulations of the unit square and of the disk.

Meshes are plain numpy containers. Triangles are stored counterclockwise and
boundary edges are oriented so that the domain lies to their left, which makes
the outward normal ``(dy, -dx) / length``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class MeshError(ValueError):
    """Invalid mesh parameter or inconsistent mesh data."""


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray = field(default=None)
    boundary_triangles: np.ndarray = field(default=None)
    boundary_normals: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise MeshError("vertices must have shape (N, 2)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError("triangles must have shape (T, 3)")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.boundary_edges is None:
            edges, tris, normals = _boundary_from_topology(v, t)
            object.__setattr__(self, "boundary_edges", edges)
            object.__setattr__(self, "boundary_triangles", tris)
            object.__setattr__(self, "boundary_normals", normals)
        else:
            object.__setattr__(self, "boundary_edges",
                               np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2))
            object.__setattr__(self, "boundary_triangles",
                               np.asarray(self.boundary_triangles, dtype=np.int64).ravel())
            object.__setattr__(self, "boundary_normals",
                               np.asarray(self.boundary_normals, dtype=float).reshape(-1, 2))
        for arr in (self.vertices, self.triangles, self.boundary_edges,
                    self.boundary_triangles, self.boundary_normals):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique edges ``(a, b)`` with ``a < b``, sorted lexicographically."""
        return _edge_topology(self.triangles)[0]

    @cached_property
    def triangle_edges(self) -> np.ndarray:
        """Edge index of local edges (v0,v1), (v1,v2), (v2,v0) of every triangle."""
        return _edge_topology(self.triangles)[1]

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def validate(self) -> None:
        """Raise :class:`MeshError` if any structural invariant fails."""
        if np.any(self.signed_areas <= 0.0):
            raise MeshError("triangle with non-positive signed area")
        counts = np.bincount(self.triangle_edges.ravel(), minlength=len(self.edges))
        if np.any(counts > 2) or np.any(counts < 1):
            raise MeshError("edge shared by more than two triangles")
        if int(np.sum(counts == 1)) != len(self.boundary_edges):
            raise MeshError("boundary edge count does not match topology")
        lengths = np.linalg.norm(self.boundary_normals, axis=1)
        if not np.allclose(lengths, 1.0, atol=1e-13):
            raise MeshError("boundary normals are not unit length")
        mid = self.vertices[self.boundary_edges].mean(axis=1)
        inward = self.centroids[self.boundary_triangles] - mid
        if np.any(np.einsum("ij,ij->i", inward, self.boundary_normals) >= 0.0):
            raise MeshError("boundary normal points into the domain")


def _edge_topology(triangles):
    local = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 3, 2)
    flat = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse = np.unique(flat, axis=0, return_inverse=True)
    return edges, inverse.reshape(-1, 3)


def _boundary_from_topology(vertices, triangles):
    _, tri_edges = _edge_topology(triangles)
    counts = np.bincount(tri_edges.ravel())
    tri_idx, local = np.nonzero(counts[tri_edges] == 1)
    a = triangles[tri_idx, local]
    b = triangles[tri_idx, (local + 1) % 3]
    edges = np.stack([a, b], axis=1)
    order = np.lexsort((b, a))
    edges, tri_idx = edges[order], tri_idx[order]
    d = vertices[edges[:, 1]] - vertices[edges[:, 0]]
    normals = np.stack([d[:, 1], -d[:, 0]], axis=1)
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    return edges, tri_idx, normals


def generate_square_mesh(M: int) -> Mesh:
    """Uniform right-triangle mesh of the unit square with ``M`` cells per side.

    Every cell is split along its lower-left to upper-right diagonal, so the
    mesh for ``2*M`` contains the mesh for ``M``.
    """
    if int(M) != M or M < 1:
        raise MeshError(f"square mesh needs M >= 1, got {M!r}")
    M = int(M)
    idx = np.arange(M + 1)
    xs = idx / M
    X, Y = np.meshgrid(xs, xs)
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)
    i, j = np.meshgrid(np.arange(M), np.arange(M))
    v00 = (j * (M + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + M + 1
    v11 = v01 + 1
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return Mesh(vertices, triangles)


DISK_CENTER = (0.5, 0.5)
DISK_RADIUS = 0.5


def generate_disk_mesh(M: int) -> Mesh:
    """Ring-based triangulation of the disk centred at (0.5, 0.5), radius 0.5.

    ``L = round(M / 2pi)`` concentric rings are used; ring ``j`` lies at radius
    ``0.5 j / L`` and carries ``round(M j / L)`` equally spaced vertices, so the
    outer ring holds exactly ``M`` boundary vertices. Neighbouring rings are
    stitched by merging their vertices in angular order.
    """
    if int(M) != M or M < 8:
        raise MeshError(f"disk mesh needs M >= 8, got {M!r}")
    M = int(M)
    L = max(1, int(round(M / (2.0 * np.pi))))
    cx, cy = DISK_CENTER

    vertices = [(cx, cy)]
    rings = [np.array([0])]
    ring_angles = [np.array([0.0])]
    for j in range(1, L + 1):
        n = M if j == L else int(round(M * j / L))
        # stagger odd rings by half a step to avoid radially aligned spokes
        offset = np.pi / n if (L - j) % 2 else 0.0
        theta = offset + 2.0 * np.pi * np.arange(n) / n
        r = DISK_RADIUS * j / L
        start = len(vertices)
        vertices.extend(zip(cx + r * np.cos(theta), cy + r * np.sin(theta)))
        rings.append(np.arange(start, start + n))
        ring_angles.append(theta)

    triangles = []
    outer = rings[1]
    for k in range(len(outer)):
        triangles.append((0, outer[k], outer[(k + 1) % len(outer)]))
    for j in range(2, L + 1):
        triangles.extend(_stitch(rings[j - 1], ring_angles[j - 1], rings[j], ring_angles[j]))

    return Mesh(np.array(vertices), np.array(triangles, dtype=np.int64))


def _stitch(inner, inner_theta, outer, outer_theta):
    """Triangulate the annulus between two rings by an angular merge."""
    na, nb = len(inner), len(outer)
    # unwrap so both sequences start just below the first inner angle
    a = np.concatenate([inner_theta, inner_theta[:1] + 2.0 * np.pi])
    b = np.concatenate([outer_theta, outer_theta[:1] + 2.0 * np.pi])
    tris = []
    i = k = 0
    while i < na or k < nb:
        advance_inner = k >= nb or (i < na and a[i + 1] < b[k + 1])
        if advance_inner:
            tris.append((inner[i % na], outer[k % nb], inner[(i + 1) % na]))
            i += 1
        else:
            tris.append((inner[i % na], outer[k % nb], outer[(k + 1) % nb]))
            k += 1
    return tris


@dataclass(frozen=True)
class MeshStats:
    h_max: float
    h_min: float
    total_area: float
    quality: float


def mesh_stats(mesh: Mesh) -> MeshStats:
    p = mesh.vertices
    e = mesh.edges
    lengths = np.linalg.norm(p[e[:, 1]] - p[e[:, 0]], axis=1)
    area = mesh.signed_areas
    tri = p[mesh.triangles]
    la = np.linalg.norm(tri[:, 1] - tri[:, 2], axis=1)
    lb = np.linalg.norm(tri[:, 2] - tri[:, 0], axis=1)
    lc = np.linalg.norm(tri[:, 0] - tri[:, 1], axis=1)
    inradius = 2.0 * area / (la + lb + lc)
    circumradius = la * lb * lc / (4.0 * area)
    return MeshStats(
        h_max=float(lengths.max()),
        h_min=float(lengths.min()),
        total_area=float(area.sum()),
        quality=float(np.min(inradius / circumradius)),
    )


def euler_characteristic(mesh: Mesh) -> int:
    return mesh.n_vertices - len(mesh.edges) + mesh.n_triangles


def write_mesh(mesh: Mesh, path) -> None:
    """Write the plain-text mesh format (round-trips bit-exactly)."""
    lines = [f"vertices {mesh.n_vertices} triangles {mesh.n_triangles} "
             f"boundary {len(mesh.boundary_edges)}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    for (a, b), t, (nx, ny) in zip(mesh.boundary_edges, mesh.boundary_triangles,
                                   mesh.boundary_normals):
        lines.append(f"{a} {b} {t} {nx:.17g} {ny:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 6 or header[0::2] != ["vertices", "triangles", "boundary"]:
            raise MeshError(f"bad mesh header in {path}")
        nv, nt, nb = (int(s) for s in header[1::2])
        rows = [fh.readline().split() for _ in range(nv + nt + nb)]
    vertices = np.array([[float(s) for s in r] for r in rows[:nv]]).reshape(-1, 2)
    triangles = np.array([[int(s) for s in r] for r in rows[nv:nv + nt]],
                         dtype=np.int64).reshape(-1, 3)
    brows = rows[nv + nt:]
    edges = np.array([[int(r[0]), int(r[1])] for r in brows], dtype=np.int64)
    btri = np.array([int(r[2]) for r in brows], dtype=np.int64)
    normals = np.array([[float(r[3]), float(r[4])] for r in brows])
    return Mesh(vertices, triangles, edges, btri, normals)
