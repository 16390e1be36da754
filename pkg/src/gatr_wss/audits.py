"""Generalisation and symmetry audits of a trained surrogate on the synthetic lab."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import torch

from .descriptors import DescriptorSet, InflowWaveform, compute_descriptors, scale_waveform
from .ga.transforms import EuclideanTransform, apply_transform
from .hemo import TransientWssField, metrics, osi, quartile_trajectory, region_metrics, tawss, trajectory_mae
from .mesh import SurfaceMesh
from .model.api import ModelCheckpoint, Sample, collate, predict, prepare_sample
from .synth.dataset import REFERENCE_Q, Simulation
from .synth.oracle import oracle_wss, template_waveform
from .synth.remesh import resample_mesh
from .synth.vessel import Branch, Centerline, VesselSpec, extend_topology, generate_vessel, make_branch

INFLOW_BINS = (60.0, 80.0, 100.0, 120.0, 140.0)


def predict_mesh(checkpoint: ModelCheckpoint, mesh: SurfaceMesh, waveform: InflowWaveform,
                 model=None) -> TransientWssField:
    model = model or checkpoint.build()
    d = compute_descriptors(mesh, waveform)
    dtype = next(model.parameters()).dtype
    return predict(model, [prepare_sample(d, checkpoint.stats, checkpoint.config, dtype)])[0]


# --- symmetry ---------------------------------------------------------------

def _relative(a: torch.Tensor, b: torch.Tensor) -> float:
    return float(torch.linalg.norm(a - b) / torch.linalg.norm(b).clamp_min(1e-30))


@torch.no_grad()
def equivariance_audit(checkpoint: ModelCheckpoint, sample: Sample, n_transforms: int = 50,
                       seed: int = 0, translation_scale: float = 100.0) -> dict:
    """Largest relative violation of f(g.x) = g.f(x) over random E(3) elements.

    GATr checkpoints are tested on the multivector action (reflections included);
    scalar-baseline checkpoints on rotated and translated raw features.
    """
    model = checkpoint.build()
    dtype = next(model.parameters()).dtype
    rng = np.random.default_rng(seed)
    batch = collate([sample]).to(dtype)
    worst = 0.0
    if checkpoint.kind == "gatr":
        ref = model.forward_multivectors(batch)
        for k in range(n_transforms):
            g = EuclideanTransform.random(rng, translation_scale, reflection=bool(k % 2))
            moved = replace(batch, x=apply_transform(g, batch.x))
            out = model.forward_multivectors(moved)
            worst = max(worst, _relative(out, apply_transform(g, ref)))
    else:
        ref, _ = model(batch)
        for k in range(n_transforms):
            g = EuclideanTransform.random(rng, translation_scale, reflection=bool(k % 2))
            rot = torch.as_tensor(g.rotation, dtype=dtype)
            f = batch.features.clone()
            f[..., 0:3] = f[..., 0:3] @ rot.T + torch.as_tensor(g.translation, dtype=dtype)
            f[..., 3:6] = f[..., 3:6] @ rot.T
            f[..., 6:9] = f[..., 6:9] @ rot.T
            out, _ = model(replace(batch, features=f))
            worst = max(worst, _relative(out, ref @ rot.T))
    return {"kind": checkpoint.kind, "transforms": n_transforms, "max_relative_violation": worst}


# --- inflow sweep -------------------------------------------------------------

def inflow_sweep(checkpoint: ModelCheckpoint, sims: list[Simulation],
                 bins=INFLOW_BINS) -> list[dict]:
    """Test error grouped by peak inflow."""
    model = checkpoint.build()
    rows = []
    per_bin: dict[int, list[dict]] = {}
    for s in sims:
        q = s.waveform.q_max
        b = int(np.clip(np.searchsorted(bins, q, side="right") - 1, 0, len(bins) - 2))
        per_bin.setdefault(b, []).append(metrics(predict_mesh(checkpoint, s.mesh, s.waveform, model), s.tau))
    for b in range(len(bins) - 1):
        ms = per_bin.get(b, [])
        row = {"q_low": bins[b], "q_high": bins[b + 1], "count": len(ms)}
        for key in ("mae", "nmae", "cos_similarity", "approx_disp"):
            row[key] = float(np.mean([m[key] for m in ms])) if ms else float("nan")
        rows.append(row)
    return rows


# --- longitudinal remodelling -------------------------------------------------

def bulge_sequence(base: VesselSpec, amplitudes) -> list[VesselSpec]:
    return [replace(base, bulge_amplitude=float(a), branches=list(base.branches)) for a in amplitudes]


def remodel_audit(checkpoint: ModelCheckpoint, base: VesselSpec, amplitudes=(0.0, 2.0, 4.0, 6.0, 8.0),
                  q_max: float = REFERENCE_Q) -> dict:
    """Q1-TAWSS and Q3-OSI trajectories of model and oracle over a growing bulge."""
    model = checkpoint.build()
    wf = scale_waveform(template_waveform(), q_max)
    tawss_pred, tawss_true, osi_pred, osi_true = [], [], [], []
    for spec in bulge_sequence(base, amplitudes):
        mesh = generate_vessel(spec)
        truth = oracle_wss(mesh, spec, wf)
        pred = predict_mesh(checkpoint, mesh, wf, model)
        tawss_pred.append(tawss(pred))
        tawss_true.append(tawss(truth))
        osi_pred.append(osi(pred))
        osi_true.append(osi(truth))
    q1_pred = quartile_trajectory(tawss_pred, "Q1")
    q1_true = quartile_trajectory(tawss_true, "Q1")
    q3_pred = quartile_trajectory(osi_pred, "Q3")
    q3_true = quartile_trajectory(osi_true, "Q3")
    span = float(q1_true.max() - q1_true.min())
    return {
        "amplitudes": list(map(float, amplitudes)),
        "q1_tawss_pred": q1_pred.tolist(), "q1_tawss_true": q1_true.tolist(),
        "q3_osi_pred": q3_pred.tolist(), "q3_osi_true": q3_true.tolist(),
        "q1_tawss_mae": trajectory_mae(q1_pred, q1_true), "q1_tawss_range": span,
        "q3_osi_mae": trajectory_mae(q3_pred, q3_true),
    }


# --- topology extension -------------------------------------------------------

def original_region(base: SurfaceMesh, extended: SurfaceMesh, tol: float = 1e-9) -> np.ndarray:
    """Vertices of ``extended`` that coincide with a vertex of ``base``."""
    from scipy.spatial import cKDTree

    dist, _ = cKDTree(base.vertices).query(extended.vertices)
    return dist <= tol


def side_branch(base: VesselSpec, attach: float = 0.25, length: float = 60.0,
                radius: float | None = None) -> Branch:
    """Branch leaving roughly perpendicular to the local centerline, tilted downstream."""
    cl = Centerline(base.centerline)
    t = cl.tangent(np.array([attach * cl.length]))[0]
    side = np.cross(t, [0.0, 1.0, 0.0] if abs(t[1]) < 0.9 else [1.0, 0.0, 0.0])
    side /= np.linalg.norm(side)
    return make_branch(base, attach, side + 0.3 * t, length,
                       radius if radius is not None else 0.45 * base.radius_at(attach))


def topology_audit(checkpoint: ModelCheckpoint, base: VesselSpec, extra: list[Branch],
                   q_max: float = REFERENCE_Q) -> dict:
    model = checkpoint.build()
    wf = scale_waveform(template_waveform(), q_max)
    ext_spec = extend_topology(base, extra)
    base_mesh, ext_mesh = generate_vessel(base), generate_vessel(ext_spec)
    base_m = metrics(predict_mesh(checkpoint, base_mesh, wf, model), oracle_wss(base_mesh, base, wf))
    mask = original_region(base_mesh, ext_mesh)
    ext_pred = predict_mesh(checkpoint, ext_mesh, wf, model)
    ext_true = oracle_wss(ext_mesh, ext_spec, wf)
    orig_m = region_metrics(ext_pred, ext_true, mask)
    added_m = region_metrics(ext_pred, ext_true, ~mask)
    return {
        "base": base_m, "extended_original": orig_m, "extended_added": added_m,
        "extended_full": metrics(ext_pred, ext_true),
        "cos_degradation": base_m["cos_similarity"] - orig_m["cos_similarity"],
        "original_vertices": int(mask.sum()), "added_vertices": int((~mask).sum()),
    }


# --- mesh sensitivity ---------------------------------------------------------

def nearest_map(src: SurfaceMesh, dst: SurfaceMesh) -> np.ndarray:
    """Index of the nearest ``src`` vertex for every ``dst`` vertex."""
    from scipy.spatial import cKDTree

    return cKDTree(src.vertices).query(dst.vertices)[1]


def mesh_sensitivity(checkpoint: ModelCheckpoint, mesh: SurfaceMesh, waveform: InflowWaveform,
                     factors=(0.8, 1.0, 1.2)) -> dict:
    """Pairwise NMAE between predictions on resampled meshes, compared on the 1.0x vertices."""
    model = checkpoint.build()
    edge = mesh.mean_edge_length()
    meshes = {f: (mesh if f == 1.0 else resample_mesh(mesh, f * edge)) for f in factors}
    reference = meshes[1.0] if 1.0 in meshes else mesh
    preds = {}
    for f, m in meshes.items():
        tau = predict_mesh(checkpoint, m, waveform, model).tau
        preds[f] = tau[:, nearest_map(m, reference)]
    pairs = []
    for i, a in enumerate(factors):
        for b in factors[i + 1:]:
            pairs.append({"a": a, "b": b, "nmae": metrics(preds[a], preds[b])["nmae"]})
    return {"vertices": {str(f): m.n_vertices for f, m in meshes.items()},
            "mean_edge": {str(f): m.mean_edge_length() for f, m in meshes.items()},
            "pairs": pairs, "max_nmae": max(p["nmae"] for p in pairs)}


def descriptors_for(sim: Simulation) -> DescriptorSet:
    return compute_descriptors(sim.mesh, sim.waveform)
