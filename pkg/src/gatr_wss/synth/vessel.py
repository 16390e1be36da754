"""Parametric vessel surfaces: swept tubes with an optional bulge and stitched side branches."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from ..mesh import MeshError, SurfaceMesh, _ring_strip_faces

DENSE = 2000  # centerline samples used for arclength, curvature and projection
SQRT3_2 = np.sqrt(3.0) / 2.0


@dataclass
class VesselSpec:
    """Centerline (control points, mm), radius profile and branches of one vessel segment.

    The radius at arclength fraction ``u`` is
    ``radius + (radius_end - radius) * u + bulge_amplitude * exp(-((u - bulge_location) / bulge_width)^2 / 2)``.
    """

    centerline: np.ndarray
    radius: float = 10.0
    radius_end: float | None = None
    bulge_location: float = 0.5
    bulge_amplitude: float = 0.0
    bulge_width: float = 0.1
    branches: list["Branch"] = field(default_factory=list)
    edge_length: float = 2.5
    seed: int = 0

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=np.float64)
        if self.centerline.ndim != 2 or self.centerline.shape[1] != 3 or len(self.centerline) < 2:
            raise ValueError("centerline needs at least two 3-D control points")
        if self.radius_end is None:
            self.radius_end = self.radius
        if not (self.radius > 0 and self.radius_end > 0):
            raise ValueError("radius must be positive")
        if self.bulge_amplitude < 0 or not self.bulge_width > 0:
            raise ValueError("bulge amplitude must be >= 0 and width > 0")
        if not self.edge_length > 0:
            raise ValueError("edge length must be positive")

    def radius_at(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        bump = np.exp(-0.5 * ((u - self.bulge_location) / self.bulge_width) ** 2)
        return self.radius + (self.radius_end - self.radius) * u + self.bulge_amplitude * bump

    def to_dict(self) -> dict:
        return {
            "centerline": self.centerline.tolist(), "radius": self.radius,
            "radius_end": self.radius_end, "bulge_location": self.bulge_location,
            "bulge_amplitude": self.bulge_amplitude, "bulge_width": self.bulge_width,
            "branches": [{"attach": b.attach, "spec": b.spec.to_dict()} for b in self.branches],
            "edge_length": self.edge_length, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VesselSpec":
        d = dict(d)
        d["branches"] = [Branch(b["attach"], cls.from_dict(b["spec"])) for b in d.get("branches", [])]
        return cls(**d)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "VesselSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Branch:
    """Side branch leaving its parent at arclength fraction ``attach``.

    ``spec.centerline[0]`` must lie on the parent centerline at that position.
    """

    attach: float
    spec: VesselSpec


class Centerline:
    """Arclength-parametrised cubic spline through the control points."""

    def __init__(self, points: np.ndarray):
        points = np.asarray(points, dtype=np.float64)
        chord = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))]
        if np.any(np.diff(chord) <= 0):
            raise ValueError("centerline control points must be distinct")
        if len(points) == 2:
            self._spline = CubicSpline(chord, points, bc_type=((1, (points[1] - points[0]) / chord[-1]),
                                                               (1, (points[1] - points[0]) / chord[-1])))
        else:
            self._spline = CubicSpline(chord, points, bc_type="natural")
        t = np.linspace(0.0, chord[-1], DENSE)
        dense = self._spline(t)
        s = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))]
        self._t, self.s_dense, self.dense = t, s, dense
        self.length = float(s[-1])

    def _param(self, s) -> np.ndarray:
        return np.interp(s, self.s_dense, self._t)

    def point(self, s) -> np.ndarray:
        return self._spline(self._param(s))

    def tangent(self, s) -> np.ndarray:
        d = self._spline(self._param(s), 1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def curvature(self) -> np.ndarray:
        d1 = self._spline(self._t, 1)
        d2 = self._spline(self._t, 2)
        return np.linalg.norm(np.cross(d1, d2), axis=1) / np.linalg.norm(d1, axis=1) ** 3

    def frames(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Rotation-minimising frames ``(t, n1, n2)`` with ``n1 x n2 = t`` (double reflection)."""
        t = self.tangent(s)
        x = self.point(s)
        n1 = np.zeros_like(t)
        a = np.zeros(3)
        a[np.argmin(np.abs(t[0]))] = 1.0
        n1[0] = np.cross(t[0], a)
        n1[0] /= np.linalg.norm(n1[0])
        for i in range(len(s) - 1):
            v1 = x[i + 1] - x[i]
            c1 = v1 @ v1
            if c1 == 0:
                n1[i + 1] = n1[i]
                continue
            r_l = n1[i] - (2.0 / c1) * (v1 @ n1[i]) * v1
            t_l = t[i] - (2.0 / c1) * (v1 @ t[i]) * v1
            v2 = t[i + 1] - t_l
            c2 = v2 @ v2
            n1[i + 1] = r_l - (2.0 / c2) * (v2 @ r_l) * v2 if c2 > 0 else r_l
            n1[i + 1] -= (n1[i + 1] @ t[i + 1]) * t[i + 1]
            n1[i + 1] /= np.linalg.norm(n1[i + 1])
        return t, n1, np.cross(t, n1)


def make_branch(parent: VesselSpec, attach: float, direction, length: float, radius: float,
                radius_end: float | None = None, bend=None) -> Branch:
    """Straight (or gently bent) branch leaving ``parent`` at arclength fraction ``attach``."""
    cl = Centerline(parent.centerline)
    start = cl.point(attach * cl.length)
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    pts = [start, start + 0.5 * length * d, start + length * d]
    if bend is not None:
        pts[2] = pts[2] + np.asarray(bend, dtype=np.float64)
    spec = VesselSpec(np.array(pts), radius=radius, radius_end=radius_end,
                      edge_length=parent.edge_length, seed=parent.seed)
    return Branch(attach, spec)


@dataclass
class _Tube:
    """One swept segment before stitching."""

    vertices: np.ndarray
    faces: np.ndarray
    first_ring: np.ndarray
    last_ring: np.ndarray


def ring_count(spec: VesselSpec, radius_ref: float) -> int:
    return max(8, int(round(2 * np.pi * radius_ref / spec.edge_length)))


def _check_bounds(spec: VesselSpec, cl: Centerline) -> None:
    u = cl.s_dense / cl.length
    r = spec.radius_at(u)
    kappa = cl.curvature()
    bad = r * kappa >= 0.9
    if np.any(bad):
        raise MeshError(f"vessel radius exceeds the centerline radius of curvature near "
                        f"s = {cl.s_dense[np.argmax(bad)]:.1f} mm (self-intersecting sweep)")
    # distant parts of the centerline must not come closer than the summed radii
    pairs = cKDTree(cl.dense[::10]).query_pairs(2.0 * r.max(), output_type="ndarray") * 10
    if len(pairs):
        i, j = pairs[:, 0], pairs[:, 1]
        far = np.abs(cl.s_dense[i] - cl.s_dense[j]) > np.pi * r.max()
        close = np.linalg.norm(cl.dense[i] - cl.dense[j], axis=1) < r[i] + r[j]
        if np.any(far & close):
            raise MeshError("vessel folds back onto itself (self-intersecting sweep)")


def _sweep(spec: VesselSpec, cl: Centerline, s_start: float = 0.0) -> _Tube:
    length = cl.length - s_start
    if length <= 2 * spec.edge_length:
        raise MeshError("vessel segment is too short for its edge length")
    u_dense = cl.s_dense / cl.length
    m = ring_count(spec, float(spec.radius_at(u_dense).mean()))
    k = max(2, int(round(length / (spec.edge_length * SQRT3_2))))
    s = s_start + length * np.arange(k + 1) / k
    t, n1, n2 = cl.frames(s)
    centers = cl.point(s)
    radii = spec.radius_at(s / cl.length)
    phase = 0.0
    if spec.seed:
        phase = np.random.default_rng(spec.seed).uniform(0.0, 2 * np.pi / m)
    j = np.arange(m)
    rings = []
    for i in range(k + 1):
        phi = 2 * np.pi * (j + 0.5 * i) / m + phase
        rings.append(centers[i] + radii[i] * (np.cos(phi)[:, None] * n1[i] + np.sin(phi)[:, None] * n2[i]))
    verts = np.concatenate(rings)
    faces = _ring_strip_faces(m, k + 1)
    return _Tube(verts, faces, np.arange(m), np.arange(k * m, (k + 1) * m))


def _branch_start(branch: VesselSpec, bcl: Centerline, parent: VesselSpec, pcl: Centerline,
                  gap: float) -> float:
    """First branch arclength whose ring clears the parent wall by ``gap``."""
    tree = cKDTree(pcl.dense)
    pr = parent.radius_at(pcl.s_dense / pcl.length)
    phi = np.linspace(0, 2 * np.pi, 32, endpoint=False)
    step = 0.25 * branch.edge_length
    s = 0.0
    while s < bcl.length - 3 * branch.edge_length:
        _, n1, n2 = bcl.frames(np.array([s]))
        ring = bcl.point(s) + branch.radius_at(s / bcl.length) * (
            np.cos(phi)[:, None] * n1[0] + np.sin(phi)[:, None] * n2[0])
        dist, idx = tree.query(ring)
        if np.all(dist - pr[idx] >= gap):
            return s
        s += step
    raise MeshError("branch never leaves its parent vessel")


def _angles(points: np.ndarray, origin: np.ndarray, axis: np.ndarray, e1: np.ndarray) -> np.ndarray:
    e2 = np.cross(axis, e1)
    rel = points - origin
    return np.mod(np.arctan2(rel @ e2, rel @ e1), 2 * np.pi)


def _stitch(vertices: np.ndarray, loop_a: np.ndarray, loop_b: np.ndarray, origin: np.ndarray,
            axis: np.ndarray) -> np.ndarray:
    """Zipper-triangulate the annulus between two boundary loops given in boundary order."""
    a0 = np.zeros(3)
    a0[np.argmin(np.abs(axis))] = 1.0
    e1 = np.cross(axis, a0)
    e1 /= np.linalg.norm(e1)
    ang_a = _angles(vertices[loop_a], origin, axis, e1)
    ang_b = _angles(vertices[loop_b], origin, axis, e1)

    def increasing(ang):
        d = np.angle(np.exp(1j * np.diff(np.r_[ang, ang[0]])))
        return d.sum() > 0

    a_pos = increasing(ang_a)
    if a_pos == increasing(ang_b):
        raise MeshError("branch collar loops have inconsistent orientation")
    # walk both loops with increasing angle, starting at the smallest angle
    if not a_pos:
        loop_a, ang_a = loop_a[::-1], ang_a[::-1]
    else:
        loop_b, ang_b = loop_b[::-1], ang_b[::-1]
    ra, rb = np.argmin(ang_a), np.argmin(ang_b)
    loop_a, ang_a = np.roll(loop_a, -ra), np.unwrap(np.roll(ang_a, -ra))
    loop_b, ang_b = np.roll(loop_b, -rb), np.unwrap(np.roll(ang_b, -rb))
    na, nb = len(loop_a), len(loop_b)
    ang_a = np.r_[ang_a, ang_a[0] + 2 * np.pi]
    ang_b = np.r_[ang_b, ang_b[0] + 2 * np.pi]
    faces = []
    i = j = 0
    while i < na or j < nb:
        x, y = loop_a[i % na], loop_b[j % nb]
        if j >= nb or (i < na and ang_a[i + 1] <= ang_b[j + 1]):
            nx = loop_a[(i + 1) % na]
            # loop A must traverse its existing boundary edge in reverse
            faces.append((nx, x, y) if a_pos else (x, nx, y))
            i += 1
        else:
            ny = loop_b[(j + 1) % nb]
            faces.append((x, y, ny) if a_pos else (x, ny, y))
            j += 1
    return np.array(faces, dtype=np.int64)


def _clean_hole(faces: np.ndarray, removed: np.ndarray, near: np.ndarray) -> np.ndarray:
    """Grow the removed face set until the hole boundary is a simple loop."""
    for _ in range(20):
        keep = faces[~removed]
        e = np.concatenate([keep[:, [0, 1]], keep[:, [1, 2]], keep[:, [2, 0]]])
        key = np.sort(e, axis=1)
        _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        bnd = e[counts[inv.ravel()] == 1]
        out_deg = np.bincount(bnd[:, 0], minlength=faces.max() + 1)
        bad_v = np.flatnonzero(out_deg > 1)
        # faces with two or more boundary edges are spikes into the hole
        n_bnd = (counts[inv.ravel()] == 1).reshape(3, -1).sum(0)
        spikes = np.flatnonzero(~removed)[n_bnd >= 2]
        bad_faces = np.isin(faces, bad_v).any(1) & near & ~removed
        bad_faces[spikes[near[spikes]]] = True
        if not bad_faces.any():
            return removed
        removed = removed | bad_faces
    raise MeshError("could not open a clean branch hole")


def _attach(vertices, faces, caps, parent: VesselSpec, branch: Branch,
            sub_vertices, sub_faces, sub_caps, sub_first_ring, s0: float):
    bspec = branch.spec
    bcl = Centerline(bspec.centerline)
    origin = bcl.point(0.0)
    axis = bcl.tangent(0.0)
    r_b = float(bspec.radius_at(0.0))
    r_p = float(parent.radius_at(branch.attach))
    margin = 0.75 * parent.edge_length
    rel = vertices - origin
    along = rel @ axis
    radial = np.linalg.norm(rel - along[:, None] * axis, axis=1)
    hole_v = (along > 0.3 * r_p) & (along < s0 + r_b) & (radial < r_b + margin)
    near_v = (along > 0.0) & (radial < r_b + margin + 2.5 * parent.edge_length)
    removed = np.isin(faces, np.flatnonzero(hole_v)).any(1)
    near = near_v[faces].all(1)
    removed = _clean_hole(faces, removed, near)
    keep_faces = faces[~removed]
    used = np.zeros(len(vertices), dtype=bool)
    used[keep_faces.ravel()] = True
    for idx in caps.values():
        for c in idx:
            if not used[c].all():
                raise MeshError("branch hole reaches a cap")
    remap = -np.ones(len(vertices), dtype=np.int64)
    remap[used] = np.arange(used.sum())
    verts = vertices[used]
    kept = remap[keep_faces]
    caps = {k: [remap[c] for c in v] for k, v in caps.items()}
    # hole loop: boundary loop of the trunk that is not a cap
    cap_sets = [set(c.tolist()) for v in caps.values() for c in v]
    tmp = SurfaceMesh(verts, kept)
    loops = [lp for lp in tmp.boundary_loops() if set(lp.tolist()) not in cap_sets]
    if len(loops) != 1:
        raise MeshError(f"expected one branch hole, found {len(loops)} extra boundary loops")
    offset = len(verts)
    all_verts = np.concatenate([verts, sub_vertices])
    sub_tmp = SurfaceMesh(sub_vertices, sub_faces)
    ring_set = set(sub_first_ring.tolist())
    ring_loops = [lp for lp in sub_tmp.boundary_loops() if set(lp.tolist()) == ring_set]
    collar = _stitch(all_verts, loops[0], ring_loops[0] + offset, origin, axis)
    all_faces = np.concatenate([kept, sub_faces + offset, collar])
    for k, v in sub_caps.items():
        caps.setdefault(k, []).extend(c + offset for c in v)
    return all_verts, all_faces, caps


def _build(spec: VesselSpec, s_start: float = 0.0):
    cl = Centerline(spec.centerline)
    _check_bounds(spec, cl)
    tube = _sweep(spec, cl, s_start)
    vertices, faces = tube.vertices, tube.faces
    caps = {"inlet": [tube.first_ring], "outlets": [tube.last_ring]}
    for branch in spec.branches:
        bspec = branch.spec
        if not 0.0 < branch.attach < 1.0:
            raise ValueError("branch attachment must lie strictly inside the parent")
        bcl = Centerline(bspec.centerline)
        if np.linalg.norm(bcl.point(0.0) - cl.point(branch.attach * cl.length)) > 1e-6 * cl.length:
            raise ValueError("branch centerline must start on the parent centerline")
        s0 = _branch_start(bspec, bcl, spec, cl, gap=1.5 * spec.edge_length)
        sv, sf, scaps = _build(bspec, s0)
        vertices, faces, caps = _attach(vertices, faces, caps, spec, branch, sv, sf,
                                        {"outlets": scaps["outlets"]}, scaps["inlet"][0], s0)
    return vertices, faces, caps


def check_branch_overlap(spec: VesselSpec) -> None:
    """Reject branches whose take-offs overlap along the parent."""
    cl = Centerline(spec.centerline)
    spans = []
    for b in spec.branches:
        r = b.spec.radius + 1.5 * spec.edge_length
        center = b.attach * cl.length
        spans.append((center - r, center + r, b))
    spans.sort(key=lambda t: t[0])
    for (lo1, hi1, b1), (lo2, hi2, b2) in zip(spans, spans[1:]):
        if lo2 < hi1:
            d1 = Centerline(b1.spec.centerline).tangent(0.0)
            d2 = Centerline(b2.spec.centerline).tangent(0.0)
            if d1 @ d2 > -0.5:
                raise ValueError(f"overlapping branches at attach {b1.attach} and {b2.attach}")
    for b in spec.branches:
        check_branch_overlap(b.spec)


def generate_vessel(spec: VesselSpec) -> SurfaceMesh:
    check_branch_overlap(spec)
    vertices, faces, caps = _build(spec)
    inlet = caps["inlet"][0]
    cl = Centerline(spec.centerline)
    m = len(inlet)
    r0 = float(spec.radius_at(0.0))
    area = 0.5 * m * r0 ** 2 * np.sin(2 * np.pi / m)
    mesh = SurfaceMesh(vertices, faces, inlet=inlet, outlets=caps["outlets"], inlet_area=area,
                       inlet_normal=cl.tangent(0.0))
    # caps in boundary-loop order
    loops = {frozenset(lp.tolist()): lp for lp in mesh.boundary_loops()}
    mesh.inlet = loops[frozenset(inlet.tolist())]
    mesh.outlets = [loops[frozenset(o.tolist())] for o in mesh.outlets]
    if len(loops) != 1 + len(mesh.outlets):
        raise MeshError("generated surface has unlabelled boundary loops")
    return mesh


def extend_topology(base: VesselSpec, extra: list[Branch]) -> VesselSpec:
    """Same trunk with additional side branches; the trunk mesh is unchanged outside the collars."""
    if not extra:
        return base
    spec = replace(base, branches=list(base.branches) + list(extra))
    check_branch_overlap(spec)
    return spec


def straight_spec(length: float = 100.0, radius: float = 10.0, edge_length: float = 2.5,
                  **kwargs) -> VesselSpec:
    return VesselSpec(np.array([[0.0, 0.0, 0.0], [0.0, 0.0, length]]), radius=radius,
                      edge_length=edge_length, **kwargs)
