"""Random vessel cohorts with oracle WSS, and their on-disk manifest."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..descriptors import InflowWaveform, scale_waveform
from ..hemo import TransientWssField
from ..mesh import MeshError, SurfaceMesh
from .oracle import OracleConfig, oracle_wss, template_waveform
from .vessel import VesselSpec, generate_vessel, make_branch

Q_RANGE = (60.0, 140.0)
REFERENCE_Q = 80.0


@dataclass
class CohortConfig:
    n_geometries: int = 32
    sims_per_geometry: int = 4
    include_reference: bool = True  # one extra simulation at 80 ml/s per geometry
    edge_length: float = 2.5
    length: tuple[float, float] = (80.0, 120.0)
    radius: tuple[float, float] = (9.0, 11.0)
    taper: tuple[float, float] = (0.85, 1.0)
    bulge_amplitude: tuple[float, float] = (0.0, 8.0)
    bulge_location: tuple[float, float] = (0.35, 0.65)
    bulge_width: tuple[float, float] = (0.08, 0.15)
    lateral: float = 6.0  # std of control-point offsets (mm)
    branch_probability: float = 0.0
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CohortConfig":
        d = dict(d)
        for k, v in d.items():
            if isinstance(v, list):
                d[k] = tuple(v)
        return cls(**d)


@dataclass
class Simulation:
    geometry_id: str
    spec: VesselSpec
    mesh: SurfaceMesh
    waveform: InflowWaveform
    tau: TransientWssField


def random_spec(rng: np.random.Generator, cfg: CohortConfig, seed: int) -> VesselSpec:
    length = rng.uniform(*cfg.length)
    z = np.linspace(0.0, length, 4)
    xy = rng.normal(0.0, cfg.lateral, size=(4, 2))
    xy[0] = 0.0
    pts = np.column_stack([xy, z])
    r0 = rng.uniform(*cfg.radius)
    spec = VesselSpec(pts, radius=r0, radius_end=r0 * rng.uniform(*cfg.taper),
                      bulge_amplitude=rng.uniform(*cfg.bulge_amplitude),
                      bulge_location=rng.uniform(*cfg.bulge_location),
                      bulge_width=rng.uniform(*cfg.bulge_width),
                      edge_length=cfg.edge_length, seed=seed)
    if rng.uniform() < cfg.branch_probability:
        attach = rng.uniform(0.2, 0.35) if rng.uniform() < 0.5 else rng.uniform(0.65, 0.8)
        phi = rng.uniform(0, 2 * np.pi)
        direction = np.array([np.cos(phi), np.sin(phi), rng.uniform(0.0, 0.6)])
        spec.branches.append(make_branch(spec, attach, direction, rng.uniform(30, 45),
                                         r0 * rng.uniform(0.4, 0.55)))
    return spec


def generate_cohort(cfg: CohortConfig, oracle: OracleConfig | None = None) -> list[Simulation]:
    rng = np.random.default_rng(cfg.seed)
    template = template_waveform()
    sims = []
    for g in range(cfg.n_geometries):
        for _ in range(100):
            spec = random_spec(rng, cfg, seed=cfg.seed * 100003 + g + 1)
            try:
                mesh = generate_vessel(spec)
                break
            except MeshError:
                continue
        else:
            raise MeshError("could not draw a valid vessel in 100 attempts")
        q = list(rng.uniform(*Q_RANGE, size=cfg.sims_per_geometry))
        if cfg.include_reference:
            q.append(REFERENCE_Q)
        gid = f"g{g:03d}"
        for qmax in q:
            wf = scale_waveform(template, float(qmax))
            sims.append(Simulation(gid, spec, mesh, wf, oracle_wss(mesh, spec, wf, oracle)))
    return sims


def write_cohort(sims: list[Simulation], out: str | Path, splits: dict[str, str] | None = None,
                 precision: str = "f32") -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    written = set()
    for k, s in enumerate(sims):
        mesh_path = out / f"{s.geometry_id}.obj"
        spec_path = out / f"{s.geometry_id}.spec.json"
        if s.geometry_id not in written:
            s.mesh.save(mesh_path)
            s.spec.save(spec_path)
            written.add(s.geometry_id)
        wf_path = out / f"sim{k:04d}_inflow.csv"
        field_path = out / f"sim{k:04d}_wss.gwss"
        s.waveform.save_csv(wf_path)
        s.tau.save(field_path, precision)
        entries.append({"geometry": s.geometry_id, "mesh": mesh_path.name, "spec": spec_path.name,
                        "waveform": wf_path.name, "field": field_path.name,
                        "split": (splits or {}).get(s.geometry_id, "train")})
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"simulations": entries}, indent=1))
    return manifest


def read_manifest(path: str | Path) -> list[dict]:
    path = Path(path)
    entries = json.loads(path.read_text())["simulations"]
    for e in entries:
        for key in ("mesh", "spec", "waveform", "field"):
            e[key] = str(path.parent / e[key])
    return entries


def load_simulation(entry: dict) -> Simulation:
    return Simulation(entry["geometry"], VesselSpec.load(entry["spec"]), SurfaceMesh.load(entry["mesh"]),
                      InflowWaveform.load_csv(entry["waveform"]), TransientWssField.load(entry["field"]))
