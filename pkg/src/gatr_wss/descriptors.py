"""Per-vertex geometric descriptors, inflow encoding and the multivector input embedding."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from . import units
from .ga.algebra import embed_plane, embed_point, embed_scalar
from .heat import HeatSolver, flow_prior, geodesic_distance, outlet_min_geodesic
from .io import precision_dtype, read_container, write_container
from .mesh import SurfaceMesh, principal_curvatures, vertex_normals

# frozen channel order of the embedding
CHANNELS = ("coords", "normals", "flow_prior", "geo_inlet", "geo_outlet", "kappa1", "kappa2",
            "v_max")
SCALAR_CHANNELS = CHANNELS[3:]
N_CHANNELS = len(CHANNELS)


@dataclass
class InflowWaveform:
    """Inflow over one cardiac cycle: ``times`` in s covering [0, 1], ``flow`` in ml/s."""

    times: np.ndarray
    flow: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.flow = np.asarray(self.flow, dtype=np.float64)
        if self.times.shape != self.flow.shape or self.times.ndim != 1 or len(self.times) < 2:
            raise ValueError("times and flow must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("waveform times must be strictly increasing")
        if self.times[0] > 1e-9 or self.times[-1] < 1.0 - 1e-9:
            raise ValueError("waveform must cover [0, 1] s")
        if not np.all(np.isfinite(self.flow)):
            raise ValueError("waveform flow must be finite")

    @property
    def q_max(self) -> float:
        return float(self.flow.max())

    def sample(self, t) -> np.ndarray:
        return np.interp(np.asarray(t, dtype=np.float64), self.times, self.flow)

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "flow_ml_s"])
            for t, q in zip(self.times, self.flow):
                w.writerow([repr(float(t)), repr(float(q))])

    @classmethod
    def load_csv(cls, path: str | Path) -> "InflowWaveform":
        rows = list(csv.reader(open(path)))
        if rows and not _is_number(rows[0][0]):
            rows = rows[1:]
        data = np.array([[float(a), float(b)] for a, b in rows])
        return cls(data[:, 0], data[:, 1])


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def v_max(waveform: InflowWaveform, inlet_area: float, profile: str = "parabolic") -> float:
    """Peak inlet velocity (cm/s) from peak flow and inlet area (mm^2).

    A unit-peak paraboloid over the inlet integrates to half the area.
    """
    if profile != "parabolic":
        raise ValueError(f"unsupported inflow profile {profile!r}")
    if not inlet_area > 0:
        raise ValueError(f"inlet area must be positive, got {inlet_area}")
    area_cm2 = inlet_area / units.MM2_PER_CM2
    return waveform.q_max / (0.5 * area_cm2)


def scale_waveform(template: InflowWaveform, q_max_target: float) -> InflowWaveform:
    if not q_max_target > 0:
        raise ValueError(f"target peak flow must be positive, got {q_max_target}")
    peak = template.q_max
    if not peak > 0:
        raise ValueError("template waveform has no positive peak")
    return InflowWaveform(template.times.copy(), template.flow * (q_max_target / peak))


@dataclass
class DescriptorSet:
    coords: np.ndarray
    normals: np.ndarray
    flow_prior: np.ndarray
    geo_inlet: np.ndarray
    geo_outlet: np.ndarray
    kappa1: np.ndarray
    kappa2: np.ndarray
    v_max: float

    def __post_init__(self):
        n = len(self.coords)
        for f in fields(self):
            val = getattr(self, f.name)
            if val is None:
                raise ValueError(f"missing descriptor {f.name!r}")
            if f.name != "v_max" and len(val) != n:
                raise ValueError(f"descriptor {f.name!r} has length {len(val)}, expected {n}")

    @property
    def n(self) -> int:
        return len(self.coords)

    def columns(self) -> dict[str, np.ndarray]:
        out = {}
        for name in ("coords", "normals", "flow_prior"):
            arr = getattr(self, name)
            for k, ax in enumerate("xyz"):
                out[f"{name}_{ax}"] = arr[:, k]
        for name in ("geo_inlet", "geo_outlet", "kappa1", "kappa2"):
            out[name] = getattr(self, name)
        out["v_max"] = np.full(self.n, self.v_max)
        return out

    def save(self, path: str | Path, precision: str = "f32") -> None:
        cols = self.columns()
        data = np.stack(list(cols.values()), axis=1)
        header = {"n": self.n, "T": 1, "components": list(cols), "kind": "descriptors",
                  "units": {"coords": "mm", "geo": "mm", "kappa": "1/mm", "v_max": "cm/s"},
                  "precision": precision}
        write_container(path, header, {"data": data.astype(precision_dtype(precision))})

    @classmethod
    def load(cls, path: str | Path) -> "DescriptorSet":
        header, arrays = read_container(path)
        if header.get("kind") != "descriptors":
            raise ValueError(f"{path} does not hold descriptors")
        cols = dict(zip(header["components"], arrays["data"].astype(np.float64).T))
        vec = {name: np.stack([cols[f"{name}_{ax}"] for ax in "xyz"], 1)
               for name in ("coords", "normals", "flow_prior")}
        return cls(**vec, geo_inlet=cols["geo_inlet"], geo_outlet=cols["geo_outlet"],
                   kappa1=cols["kappa1"], kappa2=cols["kappa2"], v_max=float(cols["v_max"][0]))


def compute_descriptors(mesh: SurfaceMesh, waveform: InflowWaveform) -> DescriptorSet:
    solver = HeatSolver(mesh)
    curv = principal_curvatures(mesh)
    if mesh.inlet_area is None:
        raise ValueError("mesh has no inlet area")
    return DescriptorSet(
        coords=mesh.vertices.copy(),
        normals=vertex_normals(mesh),
        flow_prior=flow_prior(mesh, solver).vectors,
        geo_inlet=geodesic_distance(mesh, mesh.inlet, solver).values,
        geo_outlet=outlet_min_geodesic(mesh, solver).values,
        kappa1=curv.kappa1,
        kappa2=curv.kappa2,
        v_max=v_max(waveform, mesh.inlet_area),
    )


@dataclass
class FeatureStats:
    """Dataset-level normalisation stored with checkpoints.

    Geodesics and curvatures are z-scored, ``v_max`` is divided by its mean and
    centred coordinates are divided by ``coord_scale``.
    """

    mean: dict[str, float] = field(default_factory=lambda: {k: 0.0 for k in SCALAR_CHANNELS})
    std: dict[str, float] = field(default_factory=lambda: {k: 1.0 for k in SCALAR_CHANNELS})
    coord_scale: float = 1.0

    @classmethod
    def fit(cls, sets: list[DescriptorSet]) -> "FeatureStats":
        mean, std = {}, {}
        for name in ("geo_inlet", "geo_outlet", "kappa1", "kappa2"):
            vals = np.concatenate([getattr(d, name) for d in sets])
            mean[name] = float(vals.mean())
            std[name] = float(vals.std()) or 1.0
        vm = np.array([d.v_max for d in sets])
        mean["v_max"] = 0.0
        std["v_max"] = float(vm.mean()) or 1.0
        radii = np.concatenate([np.linalg.norm(d.coords - d.coords.mean(0), axis=1) for d in sets])
        return cls(mean, std, float(np.sqrt((radii ** 2).mean())) or 1.0)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "coord_scale": self.coord_scale}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStats":
        return cls(dict(d["mean"]), dict(d["std"]), float(d["coord_scale"]))


def build_embedding(d: DescriptorSet, stats: FeatureStats | None = None,
                    dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """Multivector input ``(n, 8, 16)``: point, two planes, five scalars (see ``CHANNELS``)."""
    stats = stats or FeatureStats()
    coords = (d.coords - d.coords.mean(axis=0)) / stats.coord_scale
    chans = [embed_point(torch.as_tensor(coords)),
             embed_plane(torch.as_tensor(d.normals), normalize=False),
             _embed_direction(d.flow_prior)]
    for name in SCALAR_CHANNELS:
        val = np.broadcast_to(np.asarray(getattr(d, name), dtype=np.float64), (d.n,))
        val = (val - stats.mean[name]) / stats.std[name]
        chans.append(embed_scalar(torch.as_tensor(val)))
    return torch.stack(chans, dim=1).to(dtype)


def _embed_direction(v: np.ndarray) -> torch.Tensor:
    # zero rows (no transported signal) stay zero
    out = torch.zeros(len(v), 16, dtype=torch.float64)
    out[:, 2:5] = torch.as_tensor(v)
    return out
