"""Quasi-steady Poiseuille wall shear stress on generated vessels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .. import units
from ..descriptors import InflowWaveform
from ..hemo import TransientWssField
from ..mesh import SurfaceMesh, vertex_normals
from .vessel import Centerline, VesselSpec, _branch_start

TIMEPOINTS = 21
MIN_RADIUS = 1e-3  # mm


@dataclass
class OracleConfig:
    viscosity: float = units.VISCOSITY  # g/(cm s)
    density: float = units.DENSITY  # g/cm^3, unused by the Poiseuille formula
    timepoints: int = TIMEPOINTS
    # non-physical in-plane rotation of the shear direction (radians) for OSI code paths
    jitter: float = 0.0


@dataclass
class Segment:
    spec: VesselSpec
    centerline: Centerline
    s_start: float
    attach_s: list[float]  # arclength of each branch take-off on this segment
    children: list["Segment"]

    def outlet_area(self) -> float:
        return float(np.pi * self.spec.radius_at(1.0) ** 2)

    def subtree_area(self) -> float:
        return self.outlet_area() + sum(c.subtree_area() for c in self.children)

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()


def segment_tree(spec: VesselSpec, s_start: float = 0.0) -> Segment:
    cl = Centerline(spec.centerline)
    children, attach = [], []
    for b in spec.branches:
        bcl = Centerline(b.spec.centerline)
        s0 = _branch_start(b.spec, bcl, spec, cl, gap=1.5 * spec.edge_length)
        children.append(segment_tree(b.spec, s0))
        attach.append(b.attach * cl.length)
    return Segment(spec, cl, s_start, attach, children)


def outlet_fractions(spec: VesselSpec) -> list[float]:
    """Flow fraction per outlet (root outlet first, then branches depth-first)."""
    root = segment_tree(spec)
    areas = [seg.outlet_area() for seg in root.walk()]
    total = sum(areas)
    return [a / total for a in areas]


def sample_times(timepoints: int = TIMEPOINTS) -> np.ndarray:
    return np.linspace(0.0, 1.0, timepoints, endpoint=False)


def poiseuille_wss(q_ml_s, radius_mm, viscosity: float = units.VISCOSITY) -> np.ndarray:
    """Wall shear 4 mu Q / (pi r^3) in Pa for flow in ml/s and radius in mm."""
    r_cm = np.asarray(radius_mm, dtype=np.float64) / units.MM_PER_CM
    dyn = 4.0 * viscosity * np.asarray(q_ml_s, dtype=np.float64) / (np.pi * r_cm ** 3)
    return dyn * units.PA_PER_DYN_CM2


def _assign(mesh: SurfaceMesh, root: Segment):
    """Nearest wall segment per vertex: arclength, radius, tangent and flow fraction."""
    total = root.subtree_area()
    best = np.full(mesh.n_vertices, np.inf)
    radius = np.zeros(mesh.n_vertices)
    tangent = np.zeros((mesh.n_vertices, 3))
    fraction = np.zeros(mesh.n_vertices)
    for seg in root.walk():
        cl = seg.centerline
        keep = cl.s_dense >= seg.s_start
        s_pts = cl.s_dense[keep]
        dist, idx = cKDTree(cl.dense[keep]).query(mesh.vertices)
        s = s_pts[idx]
        r = seg.spec.radius_at(s / cl.length)
        resid = np.abs(dist - r)
        take = resid < best
        best[take] = resid[take]
        radius[take] = r[take]
        tangent[take] = cl.tangent(s[take])
        # flow through this segment: its own outlet plus branches further downstream
        frac = np.full(len(s), seg.outlet_area())
        for a, child in zip(seg.attach_s, seg.children):
            frac += np.where(s < a, child.subtree_area(), 0.0)
        fraction[take] = frac[take] / total
    return radius, tangent, fraction


def oracle_wss(mesh: SurfaceMesh, spec: VesselSpec, waveform: InflowWaveform,
               config: OracleConfig | None = None) -> TransientWssField:
    config = config or OracleConfig()
    root = segment_tree(spec)
    radius, tangent, fraction = _assign(mesh, root)
    if np.any(radius < MIN_RADIUS):
        raise ValueError(f"local radius below {MIN_RADIUS} mm")
    n = vertex_normals(mesh)
    direction = tangent - (tangent * n).sum(1, keepdims=True) * n
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    t = sample_times(config.timepoints)
    q = waveform.sample(t)
    mag = poiseuille_wss(q[:, None] * fraction[None, :], radius[None, :], config.viscosity)
    if config.jitter:
        side = np.cross(n, direction)
        phase = 2 * np.pi * (mesh.vertices @ np.array([0.013, 0.017, 0.011]))
        theta = config.jitter * np.sin(2 * np.pi * t[:, None] * 3 + phase[None, :])
        dirs = (np.cos(theta)[..., None] * direction[None] + np.sin(theta)[..., None] * side[None])
    else:
        dirs = np.broadcast_to(direction, (len(t),) + direction.shape)
    return TransientWssField(mag[..., None] * dirs)


def template_waveform(n: int = 201) -> InflowWaveform:
    """Synthetic one-second inflow with a systolic peak of 80 ml/s and a brief reverse flow."""
    t = np.linspace(0.0, 1.0, n)
    systole = np.exp(-0.5 * ((t - 0.15) / 0.06) ** 2)
    reverse = np.exp(-0.5 * ((t - 0.35) / 0.04) ** 2)
    diastole = np.exp(-0.5 * ((t - 0.55) / 0.12) ** 2)
    q = 8.0 + 72.0 * systole - 14.0 * reverse + 6.0 * diastole
    q *= 80.0 / q.max()
    return InflowWaveform(t, q)
