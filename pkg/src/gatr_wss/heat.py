"""Heat-method geodesic distance and vector-heat parallel transport on surface meshes."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .mesh import MeshError, SurfaceMesh, _corner_geometry, cotan_laplacian, lumped_mass, vertex_normals

log = logging.getLogger(__name__)

CG_TOL = 1e-10


class SPDSolver:
    """Direct sparse factorisation of an SPD (or Hermitian PD) matrix, CG on failure."""

    def __init__(self, matrix: sparse.spmatrix):
        self.matrix = sparse.csc_matrix(matrix)
        try:
            self._solve = spla.factorized(self.matrix)
        except (RuntimeError, MemoryError) as exc:  # pragma: no cover - large meshes only
            log.warning("sparse factorisation failed (%s); using conjugate gradients", exc)
            self._solve = None

    def __call__(self, rhs: np.ndarray) -> np.ndarray:
        if self._solve is not None:
            return self._solve(rhs)
        n = self.matrix.shape[0]
        x, info = spla.cg(self.matrix, rhs, rtol=CG_TOL, maxiter=10 * n)
        if info != 0:
            raise RuntimeError(f"conjugate gradients did not converge (info={info})")
        return x


@dataclass
class GeodesicMap:
    values: np.ndarray
    source_label: str


@dataclass
class TangentVectorField:
    vectors: np.ndarray


def heat_time(mesh: SurfaceMesh) -> float:
    return mesh.mean_edge_length() ** 2


def _check_reachable(mesh: SurfaceMesh, source: np.ndarray) -> None:
    labels = mesh.connected_components()
    reached = np.unique(labels[source])
    missing = np.setdiff1d(np.unique(labels), reached)
    if len(missing):
        size = int((labels == missing[0]).sum())
        raise MeshError(f"component of {size} vertices is unreachable from the source")


def _face_gradients(mesh: SurfaceMesh, u: np.ndarray) -> np.ndarray:
    v = mesh.vertices[mesh.faces]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    area2 = np.linalg.norm(n, axis=1, keepdims=True)
    n = n / area2
    grad = np.zeros((len(mesh.faces), 3))
    for k in range(3):
        e = v[:, (k + 2) % 3] - v[:, (k + 1) % 3]  # edge opposite corner k, counter-clockwise
        grad += u[mesh.faces[:, k]][:, None] * np.cross(n, e)
    return grad / area2


def _vertex_divergence(mesh: SurfaceMesh, field: np.ndarray) -> np.ndarray:
    _, cots = _corner_geometry(mesh)
    v = mesh.vertices[mesh.faces]
    div = np.zeros(mesh.n_vertices)
    for k in range(3):
        kp, kn = (k + 1) % 3, (k + 2) % 3
        e1 = v[:, kp] - v[:, k]
        e2 = v[:, kn] - v[:, k]
        contrib = 0.5 * (cots[:, kn] * (e1 * field).sum(1) + cots[:, kp] * (e2 * field).sum(1))
        np.add.at(div, mesh.faces[:, k], contrib)
    return div


class HeatSolver:
    """Factorisations for repeated heat-method queries on one mesh."""

    def __init__(self, mesh: SurfaceMesh, t: float | None = None):
        self.mesh = mesh
        self.t = heat_time(mesh) if t is None else t
        self.laplacian = cotan_laplacian(mesh)
        self.mass = lumped_mass(mesh)
        self._heat = SPDSolver(sparse.diags(self.mass) + self.t * self.laplacian)
        # pin vertex 0 for the Poisson solve
        self._poisson = SPDSolver(self.laplacian[1:, 1:])

    def diffuse(self, rhs: np.ndarray) -> np.ndarray:
        return self._heat(rhs)

    def distance(self, source) -> np.ndarray:
        source = np.atleast_1d(np.asarray(source, dtype=np.int64))
        if source.size == 0:
            raise ValueError("source set is empty")
        _check_reachable(self.mesh, source)
        # initial condition: indicator of the source set, integrated against the mass
        delta = np.zeros(self.mesh.n_vertices)
        delta[source] = self.mass[source]
        u = self.diffuse(delta)
        grad = _face_gradients(self.mesh, u)
        norm = np.linalg.norm(grad, axis=1, keepdims=True)
        x = -grad / np.where(norm > 0, norm, 1.0)
        div = _vertex_divergence(self.mesh, x)
        phi = np.zeros(self.mesh.n_vertices)
        # L phi = -div  (L is positive semi-definite)
        phi[1:] = self._poisson(-div[1:])
        phi -= phi[source].min()
        # a distance map is zero on the whole source set and nonnegative elsewhere
        phi = np.maximum(phi, 0.0)
        phi[source] = 0.0
        return phi


def geodesic_distance(mesh: SurfaceMesh, source, solver: HeatSolver | None = None,
                      label: str = "inlet") -> GeodesicMap:
    solver = solver or HeatSolver(mesh)
    return GeodesicMap(solver.distance(source), label)


def outlet_min_geodesic(mesh: SurfaceMesh, solver: HeatSolver | None = None) -> GeodesicMap:
    if not mesh.outlets:
        raise MeshError("mesh has no outlet caps")
    solver = solver or HeatSolver(mesh)
    maps = [solver.distance(o) for o in mesh.outlets]
    return GeodesicMap(np.min(maps, axis=0), "outlets-min")


def tangent_frames(mesh: SurfaceMesh, normals: np.ndarray | None = None):
    """Orthonormal per-vertex tangent bases ``(b1, b2)`` with ``b1 x b2 = n``."""
    n = vertex_normals(mesh) if normals is None else normals
    # reference direction: first neighbour edge per vertex
    ref = np.zeros_like(mesh.vertices)
    seen = np.zeros(mesh.n_vertices, dtype=bool)
    for k in range(3):
        i = mesh.faces[:, k]
        j = mesh.faces[:, (k + 1) % 3]
        order = np.flatnonzero(~seen[i])
        first = {}
        for f in order:
            first.setdefault(int(i[f]), int(j[f]))
        for a, b in first.items():
            ref[a] = mesh.vertices[b] - mesh.vertices[a]
            seen[a] = True
    b1 = ref - (ref * n).sum(1, keepdims=True) * n
    b1 /= np.linalg.norm(b1, axis=1, keepdims=True)
    b2 = np.cross(n, b1)
    return b1, b2, n


def connection_laplacian(mesh: SurfaceMesh, frames=None) -> sparse.csr_matrix:
    """Hermitian PSD connection Laplacian on per-vertex complex tangent coordinates."""
    b1, b2, _ = frames if frames is not None else tangent_frames(mesh)
    _, cots = _corner_geometry(mesh)
    f = mesh.faces
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    for k in range(3):
        i, j = f[:, (k + 1) % 3], f[:, (k + 2) % 3]
        w = 0.5 * cots[:, k]
        e = mesh.vertices[j] - mesh.vertices[i]
        theta_i = np.arctan2((e * b2[i]).sum(1), (e * b1[i]).sum(1))
        theta_j = np.arctan2((e * b2[j]).sum(1), (e * b1[j]).sum(1))
        r_ij = np.exp(1j * (theta_j - theta_i))  # maps i-coordinates to j-coordinates
        # (L Y)_i = sum_j w (Y_i - conj(r_ij) Y_j)
        rows += [i, j]
        cols += [j, i]
        vals += [-w * np.conj(r_ij), -w * r_ij]
    off = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(n, n)).tocsr()
    diag = np.zeros(n)
    for k in range(3):
        i, j = f[:, (k + 1) % 3], f[:, (k + 2) % 3]
        np.add.at(diag, i, 0.5 * cots[:, k])
        np.add.at(diag, j, 0.5 * cots[:, k])
    return (off + sparse.diags(diag.astype(complex))).tocsr()


def flow_prior(mesh: SurfaceMesh, solver: HeatSolver | None = None) -> TangentVectorField:
    """Transport the inward inlet direction over the surface (vector heat method)."""
    if mesh.inlet_normal is None or len(mesh.inlet) == 0:
        raise MeshError("inlet normal is not defined")
    solver = solver or HeatSolver(mesh)
    normals = vertex_normals(mesh)
    b1, b2, n = tangent_frames(mesh, normals)
    src = mesh.inlet
    d = np.asarray(mesh.inlet_normal, dtype=np.float64)
    d = d / np.linalg.norm(d)
    y0 = np.zeros(mesh.n_vertices, dtype=complex)
    y0[src] = (b1[src] @ d) + 1j * (b2[src] @ d)
    y0[src] /= np.maximum(np.abs(y0[src]), 1e-300)

    lconn = connection_laplacian(mesh, (b1, b2, n))
    m = solver.mass
    vec = SPDSolver(sparse.diags(m.astype(complex)) + solver.t * lconn)(m * y0)
    # magnitude correction from two scalar diffusions
    u = solver.diffuse(m * np.abs(y0))
    phi = solver.diffuse(m * (np.abs(y0) > 0))
    mag = np.where(phi > 0, u / np.where(phi > 0, phi, 1.0), 0.0)
    absv = np.abs(vec)
    z = np.where(absv > 0, vec / np.where(absv > 0, absv, 1.0), 0.0) * mag
    out = z.real[:, None] * b1 + z.imag[:, None] * b2
    out -= (out * n).sum(1, keepdims=True) * n
    norm = np.linalg.norm(out, axis=1, keepdims=True)
    out = np.where(norm > 0, out / np.where(norm > 0, norm, 1.0), 0.0)
    return TangentVectorField(out)
