"""Acceptance criteria 1 to 8, one reported line each.

Criterion 6 trains the 500-epoch reference model (about an hour on one core). Its result is
cached under ``GATR_WSS_ACCEPTANCE_CACHE`` (default ``~/.cache/gatr_wss/acceptance``), keyed by
a hash of the package sources and the run settings, so unchanged code is not retrained.
Criterion 7 reuses that model.
"""

import hashlib
import json
import os
import re
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from conftest import record
from gatr_wss.audits import (equivariance_audit, inflow_sweep, mesh_sensitivity, remodel_audit,
                             side_branch, topology_audit)
from gatr_wss.descriptors import FeatureStats, compute_descriptors, scale_waveform
from gatr_wss.ga.layers import (EquiLinear, GeometricAttention, GeometricMLP, equivariant_layernorm,
                                geometric_nonlinearity, geometric_product)
from gatr_wss.ga.transforms import EuclideanTransform, apply_transform
from gatr_wss.heat import flow_prior, geodesic_distance
from gatr_wss.hemo import osi
from gatr_wss.mesh import cylinder_mesh, grid_mesh, icosphere, principal_curvatures
from gatr_wss.model import GatrConfig, ModelCheckpoint, VatrConfig, build_model, prepare_sample
from gatr_wss.model.gatr import GatrBlock
from gatr_wss.pipeline import featurize, make_items, split_by_geometry
from gatr_wss.synth.dataset import CohortConfig, Simulation, generate_cohort
from gatr_wss.synth.oracle import oracle_wss, template_waveform
from gatr_wss.synth.vessel import generate_vessel, straight_spec
from gatr_wss.synth.windkessel import split_windkessel
from gatr_wss.trainer import TrainConfig, evaluate, mean_metrics, train

ROOT = Path(__file__).resolve().parents[1]
TESTS = ROOT / "tests"

COHORT = CohortConfig(n_geometries=32, sims_per_geometry=4, include_reference=False,
                      edge_length=5.5, seed=0)
HELD_OUT = {f"g{g:03d}" for g in range(26, 32)}
MODEL = GatrConfig(blocks=4, channels=8, rate=0.25)
TRAIN = TrainConfig(epochs=500, batch_size=16, seed=0)
RERUN_EPOCHS = 10


def run_suite(*args: str) -> tuple[bool, float, str]:
    """Run a pytest selection in a fresh interpreter; returns (passed, seconds, summary)."""
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *args],
                          cwd=ROOT, capture_output=True, text=True)
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    summary = re.sub(r" in [0-9.]+s.*$", "", summary)
    return proc.returncode == 0, time.perf_counter() - t0, summary


# --- 1: algebra -----------------------------------------------------------------

def test_criterion_1_algebra():
    ok, secs, summary = run_suite(str(TESTS / "test_ga_core.py"), "-k",
                                  "signature or product or closure or round_trip or embed")
    passed = ok and secs < 10.0
    record(1, passed, f"algebra suite {summary} in {secs:.1f} s (limit 10 s)")
    assert passed


# --- 2: equivariance ------------------------------------------------------------

def _violation(fn, inputs, g) -> float:
    moved = fn(*[apply_transform(g, x) for x in inputs])
    ref = apply_transform(g, fn(*inputs))
    return float(torch.linalg.norm(moved - ref) / torch.linalg.norm(ref))


@torch.no_grad()
def test_criterion_2_equivariance():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    gen = torch.Generator().manual_seed(2)
    x = torch.as_tensor(rng.standard_normal((24, 4, 16)), dtype=torch.float32)
    y = torch.as_tensor(rng.standard_normal((24, 4, 16)), dtype=torch.float32)
    attention = GeometricAttention(4, 2, generator=gen)
    layers = {
        "linear": (EquiLinear(4, 6, generator=gen), (x,)),
        "product": (geometric_product, (x, y)),
        "layernorm": (equivariant_layernorm, (x,)),
        "gate": (geometric_nonlinearity, (x,)),
        "mlp": (GeometricMLP(4, generator=gen).eval(), (x,)),
        "attention": (lambda a, b: attention(a, b), (x, y)),
        "block": (GatrBlock(4, 2, 0.0, gen).eval(), (x,)),
    }
    worst = {}
    for name, (fn, inputs) in layers.items():
        worst[name] = max(_violation(fn, inputs, EuclideanTransform.random(rng, 1.0, reflection=bool(k % 2)))
                          for k in range(50))
    spec = straight_spec(80.0, 9.0, 5.5, bulge_amplitude=4.0)
    mesh = generate_vessel(spec)
    d = compute_descriptors(mesh, scale_waveform(template_waveform(), 100.0))
    stats = FeatureStats.fit([d])
    gatr = ModelCheckpoint.from_model("gatr", build_model("gatr", MODEL, seed=1), stats)
    worst["model"] = equivariance_audit(gatr, prepare_sample(d, stats, MODEL), 50)["max_relative_violation"]
    vcfg = VatrConfig(blocks=2, hidden=32, heads=4, rate=0.25)
    vatr = ModelCheckpoint.from_model("vatr", build_model("vatr", vcfg, seed=1), stats)
    control = equivariance_audit(vatr, prepare_sample(d, stats, vcfg), 50)["max_relative_violation"]
    secs = time.perf_counter() - t0
    tol = 1e-4
    passed = max(worst.values()) <= tol and control >= 10 * tol and secs < 120.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record(2, passed, f"max violation {detail}; VaTr control {control:.2e} (needs >= 1e-3); "
                      f"{secs:.1f} s (limit 120 s)")
    assert passed


# --- 3: gradients ---------------------------------------------------------------

def test_criterion_3_gradients():
    ok, secs, summary = run_suite(str(TESTS / "test_surrogate_net.py"), "-k", "gradient")
    passed = ok and secs < 300.0
    record(3, passed, f"finite-difference suite {summary} in {secs:.1f} s (limit 300 s)")
    assert passed


# --- 4: geometry oracles -------------------------------------------------------

def test_criterion_4_geometry():
    t0 = time.perf_counter()
    sphere = icosphere(4)
    d = geodesic_distance(sphere, [0]).values
    p = sphere.vertices / np.linalg.norm(sphere.vertices, axis=1, keepdims=True)
    arc = np.arccos(np.clip(p @ p[0], -1, 1))
    far = arc > 0.2
    sphere_err = float(np.mean(np.abs(d[far] - arc[far]) / arc[far]))
    strip = grid_mesh(81, 11, width=8.0, height=1.0)
    x = strip.vertices[:, 0]
    ds = geodesic_distance(strip, np.flatnonzero(x == 0.0)).values
    far = x > 0.5
    strip_err = float(np.mean(np.abs(ds[far] - x[far]) / x[far]))
    c = principal_curvatures(icosphere(3, 2.0))
    curv_err = float((np.abs(c.kappa1 - 0.5) + np.abs(c.kappa2 - 0.5)).mean() / 2 / 0.5)
    tube = cylinder_mesh(5.0, 40.0, 32, 40)
    cos = float((flow_prior(tube).vectors @ np.array([0.0, 0.0, 1.0])).mean())
    secs = time.perf_counter() - t0
    passed = sphere_err < 0.02 and strip_err < 0.01 and curv_err < 0.05 and cos > 0.99 and secs < 120
    record(4, passed, f"sphere geodesic {sphere_err:.2%}, strip {strip_err:.2%}, "
                      f"curvature {curv_err:.2%}, flow-prior cosine {cos:.4f}; {secs:.1f} s")
    assert passed


# --- 5: markers and metrics -----------------------------------------------------

def test_criterion_5_markers():
    ok, secs, summary = run_suite(str(TESTS / "test_hemo_eval.py"))
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    lo, hi = np.inf, -np.inf
    for _ in range(10_000):
        tau = rng.standard_normal((int(rng.integers(1, 22)), 8, 3))
        if rng.random() < 0.3:
            tau *= rng.random((1, 8, 1)) < 0.5  # include all-zero points
        o = osi(tau).values
        lo, hi = min(lo, o.min()), max(hi, o.max())
    secs += time.perf_counter() - t0
    passed = ok and lo >= 0.0 and hi <= 0.5 and secs < 30.0
    record(5, passed, f"marker suite {summary}; OSI over 1e4 random fields in [{lo:.3g}, {hi:.3g}]; "
                      f"{secs:.1f} s (limit 30 s)")
    assert passed


# --- 6: synthetic end to end ----------------------------------------------------

def _source_hash() -> str:
    h = hashlib.sha256()
    for path in sorted((ROOT / "src" / "gatr_wss").rglob("*.py")):
        h.update(path.relative_to(ROOT).as_posix().encode())
        h.update(path.read_bytes())
    h.update(json.dumps([COHORT.to_dict(), MODEL.to_dict(), TRAIN.to_dict()], sort_keys=True).encode())
    return h.hexdigest()[:16]


@pytest.fixture(scope="module")
def cohort():
    sims = generate_cohort(COHORT)
    descs = featurize(sims)
    tr, te = split_by_geometry(sims, HELD_OUT)
    stats = FeatureStats.fit([descs[i] for i in tr])
    items = make_items(sims, descs, stats, MODEL)
    return sims, items, stats, tr, te


@pytest.fixture(scope="module")
def reference_run(cohort):
    """Trained checkpoint, loss history, wall time and whether it came from the cache."""
    _, items, stats, tr, _ = cohort
    cache = Path(os.environ.get("GATR_WSS_ACCEPTANCE_CACHE",
                                Path.home() / ".cache" / "gatr_wss" / "acceptance")) / _source_hash()
    if (cache / "run.json").exists():
        run = json.loads((cache / "run.json").read_text())
        return ModelCheckpoint.load(cache / "checkpoint.gwss"), run["history"], run["seconds"], True
    t0 = time.perf_counter()
    result = train([items[i] for i in tr], "gatr", MODEL, TRAIN, stats)
    secs = time.perf_counter() - t0
    history = [{k: float(v) for k, v in row.items()} for row in result.history]
    cache.mkdir(parents=True, exist_ok=True)
    result.checkpoint.save(cache / "checkpoint.gwss")
    (cache / "run.json").write_text(json.dumps({"history": history, "seconds": secs}))
    return result.checkpoint, history, secs, False


def test_criterion_6_end_to_end(cohort, reference_run):
    _, items, stats, tr, te = cohort
    ckpt, history, secs, cached = reference_run
    held = mean_metrics(evaluate(ckpt, [items[i] for i in te]))
    # deterministic rerun of the opening epochs must reproduce the reference losses
    prefix = TrainConfig(**{**TRAIN.to_dict(), "epochs": RERUN_EPOCHS})
    rerun = train([items[i] for i in tr], "gatr", MODEL, prefix, stats).history
    drift = max(abs(float(a["l_total"]) - b["l_total"]) for a, b in zip(rerun, history))
    threads = torch.get_num_threads()
    passed = held["nmae"] < 0.15 and held["cos_similarity"] > 0.90 and drift <= 1e-6
    record(6, passed,
           f"held-out NMAE {held['nmae']:.4f} (< 0.15), cosine {held['cos_similarity']:.4f} (> 0.90), "
           f"rerun drift over {RERUN_EPOCHS} epochs {drift:.1e} (<= 1e-6), final loss "
           f"{history[-1]['l_total']:.5f}; training {secs / 60:.1f} min on {threads} thread(s)"
           f"{' (cached)' if cached else ''}; 8-core budget of 30 min not measurable here")
    assert passed


# --- 7: generalisation harnesses ------------------------------------------------

def test_criterion_7_generalisation(cohort, reference_run):
    sims, _, _, _, _ = cohort
    ckpt = reference_run[0]
    t0 = time.perf_counter()
    held = [s for s in sims if s.geometry_id in HELD_OUT]
    geometries = {s.geometry_id: s for s in held}
    sweep_sims = []
    for s in geometries.values():
        for q in (65.0, 90.0, 110.0, 135.0):
            wf = scale_waveform(template_waveform(), q)
            sweep_sims.append(Simulation(s.geometry_id, s.spec, s.mesh, wf, oracle_wss(s.mesh, s.spec, wf)))
    bins = inflow_sweep(ckpt, held + sweep_sims)
    a_ok = all(b["count"] > 0 and np.isfinite(b["nmae"]) for b in bins)
    base = held[0].spec
    remodel = remodel_audit(ckpt, base)
    b_ok = remodel["q1_tawss_mae"] < 0.1 * remodel["q1_tawss_range"]
    topo = topology_audit(ckpt, base, [side_branch(base)])
    c_ok = topo["cos_degradation"] < 0.1
    sens = mesh_sensitivity(ckpt, held[0].mesh, held[0].waveform)
    d_ok = sens["max_nmae"] < 0.1
    secs = time.perf_counter() - t0
    passed = a_ok and b_ok and c_ok and d_ok and secs < 1200
    per_bin = " ".join(f"[{b['q_low']:.0f},{b['q_high']:.0f}) n={b['count']} {b['nmae']:.3f}" for b in bins)
    record(7, passed,
           f"(a) NMAE per inflow bin {per_bin}; (b) Q1-TAWSS MAE {remodel['q1_tawss_mae']:.4f} "
           f"< {0.1 * remodel['q1_tawss_range']:.4f}; (c) cosine degradation {topo['cos_degradation']:.4f} "
           f"< 0.1; (d) max pairwise NMAE {sens['max_nmae']:.4f} < 0.1; {secs / 60:.1f} min (limit 20)")
    assert passed


# --- 8: Windkessel splitting ----------------------------------------------------

def test_criterion_8_windkessel():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(1000):
        areas = rng.uniform(0.01, 10.0, size=int(rng.integers(1, 9)))
        p_mean, q, c = rng.uniform(5e4, 2e5), rng.uniform(20.0, 200.0), rng.uniform(1e-4, 1e-2)
        wk = split_windkessel(p_mean, q, c, areas)
        cond = (1.0 / wk.outlet_resistance()).sum() * (p_mean / q)
        worst = max(worst, abs(cond - 1.0), abs(wk.capacitance.sum() / c - 1.0))
    wk = split_windkessel(125000.0, 80.0, 1e-3, [1.0])
    exact = (wk.r_total, float(wk.distal[0]), float(wk.proximal[0])) == (1562.5, 1421.875, 140.625)
    passed = worst <= 1e-9 and exact
    record(8, passed, f"max relative identity error {worst:.1e} (<= 1e-9); constant case "
                      f"R_total {wk.r_total}, R_d {wk.distal[0]}, R_p {wk.proximal[0]}")
    assert passed
