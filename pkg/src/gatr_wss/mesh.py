"""Surface meshes, point clouds and discrete differential geometry."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .ga.transforms import EuclideanTransform

_DEGENERATE_AREA = 1e-14


class MeshError(ValueError):
    pass


@dataclass
class SurfaceMesh:
    """Triangle mesh in mm with labelled inlet/outlet caps.

    ``inlet`` and each entry of ``outlets`` are vertex-index arrays (a boundary
    loop in order for open caps). ``inlet_normal`` points into the vessel.
    """

    vertices: np.ndarray
    faces: np.ndarray
    inlet: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    outlets: list[np.ndarray] = field(default_factory=list)
    inlet_area: float | None = None
    inlet_normal: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        self.inlet = np.asarray(self.inlet, dtype=np.int64)
        self.outlets = [np.asarray(o, dtype=np.int64) for o in self.outlets]
        if self.inlet_normal is not None:
            self.inlet_normal = np.asarray(self.inlet_normal, dtype=np.float64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must have shape (n, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise MeshError("faces must have shape (m, 3)")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise MeshError("face index out of range")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def caps(self) -> dict[str, np.ndarray]:
        out = {"inlet": self.inlet}
        out.update({f"outlet_{i + 1}": o for i, o in enumerate(self.outlets)})
        return out

    def cap_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        for idx in self.caps.values():
            mask[idx] = True
        return mask

    def edges(self) -> np.ndarray:
        """Unique undirected edges, shape (e, 2), sorted per row."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def mean_edge_length(self) -> float:
        e = self.edges()
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())

    def face_normals(self, normalize: bool = True) -> np.ndarray:
        v = self.vertices
        f = self.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        if normalize:
            n = n / np.linalg.norm(n, axis=1, keepdims=True)
        return n

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(normalize=False), axis=1)

    def surface_area(self) -> float:
        return float(self.face_areas().sum())

    def boundary_vertices(self) -> np.ndarray:
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        key, counts = np.unique(np.sort(e, axis=1), axis=0, return_counts=True)
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[key[counts == 1].ravel()] = True
        return mask

    def boundary_loops(self) -> list[np.ndarray]:
        """Boundary loops as ordered vertex arrays, following face winding."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        directed = {(int(a), int(b)) for a, b in e}
        nxt = {a: b for a, b in directed if (b, a) not in directed}
        loops = []
        seen = set()
        for start in sorted(nxt):
            if start in seen:
                continue
            loop = [start]
            seen.add(start)
            cur = nxt[start]
            while cur != start:
                loop.append(cur)
                seen.add(cur)
                cur = nxt[cur]
            loops.append(np.array(loop, dtype=np.int64))
        return loops

    def transformed(self, g: EuclideanTransform) -> "SurfaceMesh":
        """Mesh under a rigid motion; improper motions flip face winding to keep normals outward."""
        faces = self.faces if g.parity > 0 else self.faces[:, ::-1].copy()
        normal = None if self.inlet_normal is None else g.apply_vectors(self.inlet_normal)
        return replace(self, vertices=g.apply_points(self.vertices), faces=faces,
                       inlet_normal=normal)

    def scaled(self, factor: float) -> "SurfaceMesh":
        area = None if self.inlet_area is None else self.inlet_area * factor ** 2
        return replace(self, vertices=self.vertices * factor, inlet_area=area)

    def permuted(self, perm: np.ndarray) -> "SurfaceMesh":
        """Reorder vertices so that new vertex ``i`` is old vertex ``perm[i]``."""
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return replace(self, vertices=self.vertices[perm], faces=inv[self.faces],
                       inlet=inv[self.inlet], outlets=[inv[o] for o in self.outlets])

    def connected_components(self) -> np.ndarray:
        e = self.edges()
        n = self.n_vertices
        adj = sparse.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
        _, labels = sparse.csgraph.connected_components(adj, directed=False)
        return labels

    # --- IO -------------------------------------------------------------
    def save(self, path: str | Path) -> None:
        """Write ``path`` (ASCII OBJ) and ``path.json`` (cap sidecar)."""
        path = Path(path)
        lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in self.vertices]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in self.faces]
        path.write_text("\n".join(lines) + "\n")
        sidecar = {
            "inlet": self.inlet.tolist(),
            "outlets": [o.tolist() for o in self.outlets],
            "inlet_area": self.inlet_area,
            "inlet_normal": None if self.inlet_normal is None else self.inlet_normal.tolist(),
            "units": "mm",
        }
        sidecar_path(path).write_text(json.dumps(sidecar))

    @classmethod
    def load(cls, path: str | Path) -> "SurfaceMesh":
        path = Path(path)
        verts, faces = [], []
        for line in path.read_text().splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
        meta = {}
        if sidecar_path(path).exists():
            meta = json.loads(sidecar_path(path).read_text())
        return cls(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3),
                   inlet=meta.get("inlet", []), outlets=meta.get("outlets", []),
                   inlet_area=meta.get("inlet_area"), inlet_normal=meta.get("inlet_normal"))


def sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


@dataclass
class PointCloud:
    points: np.ndarray
    mesh: SurfaceMesh | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if not np.all(np.isfinite(self.points)):
            raise MeshError("point cloud has non-finite coordinates")

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def from_mesh(cls, mesh: SurfaceMesh) -> "PointCloud":
        return cls(mesh.vertices, mesh)


@dataclass
class CurvaturePair:
    kappa1: np.ndarray
    kappa2: np.ndarray
    kappa_gauss: np.ndarray
    kappa_mean: np.ndarray
    boundary: np.ndarray  # vertices whose values were filled from interior neighbours


# --- normals and curvature -------------------------------------------------

def vertex_normals(mesh: SurfaceMesh) -> np.ndarray:
    """Unweighted mean of incident unit face normals, renormalised."""
    fn = mesh.face_normals()
    acc = np.zeros_like(mesh.vertices)
    count = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], fn)
        np.add.at(count, mesh.faces[:, k], 1)
    isolated = np.flatnonzero(count == 0)
    if len(isolated):
        raise MeshError(f"vertex {isolated[0]} has no incident face")
    return acc / np.linalg.norm(acc, axis=1, keepdims=True)


def _check_faces(mesh: SurfaceMesh) -> np.ndarray:
    areas = mesh.face_areas()
    bad = np.flatnonzero(~(areas > _DEGENERATE_AREA))
    if len(bad):
        raise MeshError(f"degenerate face {bad[0]} (area {areas[bad[0]]:.3g})")
    return areas


def _corner_geometry(mesh: SurfaceMesh):
    """Per-face corner angles and cotangents, shape (m, 3); corner k opposite edge (k+1, k+2)."""
    v = mesh.vertices[mesh.faces]
    angles = np.empty((len(mesh.faces), 3))
    cots = np.empty((len(mesh.faces), 3))
    for k in range(3):
        a = v[:, (k + 1) % 3] - v[:, k]
        b = v[:, (k + 2) % 3] - v[:, k]
        cross = np.linalg.norm(np.cross(a, b), axis=1)
        dot = (a * b).sum(1)
        angles[:, k] = np.arctan2(cross, dot)
        cots[:, k] = dot / cross
    return angles, cots


def cotan_laplacian(mesh: SurfaceMesh) -> sparse.csr_matrix:
    """Positive semi-definite cotangent Laplacian ``L`` (``L @ 1 = 0``)."""
    _, cots = _corner_geometry(mesh)
    f = mesh.faces
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    for k in range(3):
        i, j = f[:, (k + 1) % 3], f[:, (k + 2) % 3]
        w = 0.5 * cots[:, k]
        rows += [i, j]
        cols += [j, i]
        vals += [-w, -w]
    off = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(n, n)).tocsr()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sparse.diags(diag)).tocsr()


def mixed_voronoi_areas(mesh: SurfaceMesh) -> np.ndarray:
    """Per-vertex mixed area (Voronoi for non-obtuse triangles, barycentric-style fallback)."""
    areas = _check_faces(mesh)
    angles, cots = _corner_geometry(mesh)
    v = mesh.vertices[mesh.faces]
    out = np.zeros(mesh.n_vertices)
    obtuse = angles > np.pi / 2
    any_obtuse = obtuse.any(axis=1)
    for k in range(3):
        kp, kn = (k + 1) % 3, (k + 2) % 3
        # Voronoi part of corner k: edges k-kp (opposite corner kn) and k-kn (opposite kp)
        e1 = ((v[:, kp] - v[:, k]) ** 2).sum(1)
        e2 = ((v[:, kn] - v[:, k]) ** 2).sum(1)
        vor = (e1 * cots[:, kn] + e2 * cots[:, kp]) / 8.0
        a = np.where(any_obtuse, np.where(obtuse[:, k], areas / 2.0, areas / 4.0), vor)
        np.add.at(out, mesh.faces[:, k], a)
    return out


def lumped_mass(mesh: SurfaceMesh) -> np.ndarray:
    """Barycentric lumped mass (one third of incident face areas)."""
    areas = mesh.face_areas()
    out = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(out, mesh.faces[:, k], areas / 3.0)
    return out


def _fill_from_interior(values: np.ndarray, mesh: SurfaceMesh, bad: np.ndarray) -> np.ndarray:
    """Replace values at ``bad`` vertices by the mean over good neighbours, growing inward."""
    values = values.copy()
    e = mesh.edges()
    good = ~bad
    pending = bad.copy()
    while pending.any():
        acc = np.zeros_like(values)
        cnt = np.zeros(len(values))
        for a, b in ((0, 1), (1, 0)):
            src, dst = e[:, a], e[:, b]
            ok = good[src] & pending[dst]
            np.add.at(acc, dst[ok], values[src[ok]])
            np.add.at(cnt, dst[ok], 1)
        newly = cnt > 0
        if not newly.any():
            break
        values[newly] = acc[newly] / cnt[newly]
        good = good | newly
        pending = pending & ~newly
    return values


def principal_curvatures(mesh: SurfaceMesh) -> CurvaturePair:
    """Principal curvatures from discrete Gaussian and mean curvature.

    Gaussian curvature is the angle defect over the mixed area; mean curvature is
    half the cotangent mean-curvature normal, signed so a sphere with outward
    normals is positive. ``kappa1,2 = H +/- sqrt(max(0, H^2 - K))``.
    Boundary vertices get the mean of their interior neighbours.
    """
    area = mixed_voronoi_areas(mesh)
    angles, _ = _corner_geometry(mesh)
    angle_sum = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(angle_sum, mesh.faces[:, k], angles[:, k])
    kg = (2.0 * np.pi - angle_sum) / area
    lap = cotan_laplacian(mesh)
    hn = (lap @ mesh.vertices) / area[:, None]  # = 2 H n
    normals = vertex_normals(mesh)
    kh = 0.5 * np.sign((hn * normals).sum(1)) * np.linalg.norm(hn, axis=1)
    boundary = mesh.boundary_vertices()
    if boundary.any():
        kg = _fill_from_interior(kg, mesh, boundary)
        kh = _fill_from_interior(kh, mesh, boundary)
    delta = np.sqrt(np.maximum(0.0, kh ** 2 - kg))
    return CurvaturePair(kh + delta, kh - delta, kg, kh, boundary)


# --- sampling and neighbours -------------------------------------------------

def _as_points(p) -> np.ndarray:
    if isinstance(p, PointCloud):
        return p.points
    if isinstance(p, SurfaceMesh):
        return p.vertices
    return np.asarray(p, dtype=np.float64)


def sample_count(n: int, rate: float) -> int:
    return max(1, math.ceil(rate * n - 1e-9))


def farthest_point_sample(points, rate: float, seed: int | None = None,
                          return_radii: bool = False):
    """Greedy farthest-point sampling of ``ceil(rate * n)`` indices.

    The first index is drawn from ``seed`` when given; otherwise it is the
    lowest-index point among those farthest from the centroid. Ties in later
    steps go to the lowest index. With ``return_radii`` the covering radius
    after each selection is returned too.
    """
    p = _as_points(points)
    n = len(p)
    if n == 0:
        raise MeshError("cannot sample an empty point cloud")
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    count = sample_count(n, rate)
    if seed is None:
        d0 = ((p - p.mean(axis=0)) ** 2).sum(1)
        first = int(np.argmax(d0))
    else:
        first = int(np.random.default_rng(seed).integers(n))
    selected = np.empty(count, dtype=np.int64)
    selected[0] = first
    dist = ((p - p[first]) ** 2).sum(1)
    radii = np.empty(count)
    for i in range(1, count):
        radii[i - 1] = dist.max()
        nxt = int(np.argmax(dist))
        selected[i] = nxt
        dist = np.minimum(dist, ((p - p[nxt]) ** 2).sum(1))
    radii[count - 1] = dist.max()
    if return_radii:
        return selected, np.sqrt(radii)
    return selected


def knn(query, reference, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices and distances of the ``k`` nearest reference points per query point.

    Rows are sorted by distance, ties by reference index.
    """
    q = _as_points(query)
    r = _as_points(reference)
    if k > len(r):
        raise ValueError(f"k={k} exceeds reference size {len(r)}")
    if k < 1:
        raise ValueError("k must be positive")
    kk = min(len(r), k + 8)
    _, idx = cKDTree(r).query(q, k=kk)
    idx = np.asarray(idx).reshape(len(q), kk)
    d2 = ((q[:, None, :] - r[idx]) ** 2).sum(-1)
    order = np.lexsort((idx, d2), axis=-1)
    idx = np.take_along_axis(idx, order, 1)[:, :k]
    d2 = np.take_along_axis(d2, order, 1)[:, :k]
    return idx, np.sqrt(d2)


# --- primitives used by tests and the synthetic lab -------------------------

def icosphere(subdivisions: int = 3, radius: float = 1.0) -> SurfaceMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9),
             (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2),
             (3, 2, 6), (3, 6, 8), (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10),
             (8, 6, 7), (9, 8, 1)]
    v = [np.array(p, dtype=float) / np.linalg.norm(p) for p in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = v[a] + v[b]
                v.append(m / np.linalg.norm(m))
                cache[key] = len(v) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return SurfaceMesh(radius * np.array(v), np.array(faces))


def grid_mesh(nx: int, ny: int, width: float = 1.0, height: float = 1.0) -> SurfaceMesh:
    """Flat z=0 rectangle ``[0, width] x [0, height]``, counter-clockwise (normals +z)."""
    xs = np.linspace(0.0, width, nx)
    ys = np.linspace(0.0, height, ny)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([xx.ravel(), yy.ravel(), np.zeros(nx * ny)], axis=1)
    idx = np.arange(nx * ny).reshape(nx, ny)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    faces = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return SurfaceMesh(verts, faces)


def cylinder_mesh(radius: float, length: float, n_around: int, n_along: int) -> SurfaceMesh:
    """Open cylinder along +z with staggered rings; inlet at z=0, outlet at z=length."""
    rings = []
    for k in range(n_along):
        phi = 2 * np.pi * (np.arange(n_around) + 0.5 * k) / n_around
        z = np.full(n_around, length * k / (n_along - 1))
        rings.append(np.stack([radius * np.cos(phi), radius * np.sin(phi), z], 1))
    verts = np.concatenate(rings)
    faces = _ring_strip_faces(n_around, n_along)
    m = n_around
    inlet = np.arange(m)
    outlet = np.arange((n_along - 1) * m, n_along * m)
    area = 0.5 * m * radius ** 2 * np.sin(2 * np.pi / m)
    return SurfaceMesh(verts, faces, inlet=inlet, outlets=[outlet], inlet_area=area,
                       inlet_normal=np.array([0.0, 0.0, 1.0]))


def _ring_strip_faces(m: int, rings: int, offset: int = 0) -> np.ndarray:
    """Triangles between consecutive staggered rings, wound for outward normals."""
    faces = []
    j = np.arange(m)
    for k in range(rings - 1):
        a = offset + k * m + j
        b = offset + k * m + (j + 1) % m
        c = offset + (k + 1) * m + j
        d = offset + (k + 1) * m + (j + 1) % m
        faces.append(np.stack([a, b, c], 1))
        faces.append(np.stack([b, d, c], 1))
    return np.concatenate(faces)
