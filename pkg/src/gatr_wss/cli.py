"""Command-line front end: generate, featurize, train, predict, evaluate, audit.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
Errors are also written to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .descriptors import FeatureStats, InflowWaveform, compute_descriptors
from .hemo import TransientWssField, metrics, osi, scalar_metrics, tawss
from .mesh import MeshError, SurfaceMesh
from .model.api import KINDS, ModelCheckpoint, predict, prepare_sample
from .synth.dataset import CohortConfig, generate_cohort, load_simulation, read_manifest, write_cohort
from .synth.oracle import OracleConfig
from .trainer import NumericError, TrainConfig, evaluate, mean_metrics, train

log = logging.getLogger("gatr_wss")

THREADS_ENV = "GATR_WSS_THREADS"
SUITES = ("equivariance", "inflow-sweep", "remodel", "topology", "mesh-sensitivity")
CONFIG_KEYS = {
    "generate": {"cohort", "test_geometries", "oracle"},
    "train": {"manifest", "model_kind", "model", "train"},
    "audit": {"manifest", "amplitudes", "factors", "branch", "transforms"},
}


class ConfigError(Exception):
    exit_code = 2


class DataError(Exception):
    exit_code = 3


# --- helpers -------------------------------------------------------------------

def _load_config(path: str | None, command: str) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - CONFIG_KEYS.get(command, set())
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
    base = p.parent
    if "manifest" in cfg:
        m = Path(cfg["manifest"])
        cfg["manifest"] = str(m if m.is_absolute() else base / m)
        if not Path(cfg["manifest"]).exists():
            raise ConfigError(f"manifest {cfg['manifest']} does not exist")
    return cfg


def _build(cls, values: dict | None, what: str):
    try:
        return cls(**(values or {}))
    except TypeError as exc:
        raise ConfigError(f"invalid {what} settings: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"invalid {what} settings: {exc}") from exc


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _meta(args, cfg: dict) -> dict:
    snapshot = {"command": args.command, "config": cfg, "seed": args.seed,
                "precision": args.precision, "deterministic": args.deterministic}
    return {"code_version": __version__, "config_hash": config_hash(snapshot)}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=float) + "\n")


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_mesh(path: str) -> SurfaceMesh:
    if not Path(path).exists():
        raise DataError(f"mesh {path} does not exist")
    return SurfaceMesh.load(path)


def _load_waveform(path: str | None) -> InflowWaveform:
    if path is None:
        from .synth.oracle import template_waveform

        return template_waveform()
    if not Path(path).exists():
        raise DataError(f"waveform {path} does not exist")
    return InflowWaveform.load_csv(path)


def _load_checkpoint(path: str) -> ModelCheckpoint:
    if not Path(path).exists():
        raise DataError(f"checkpoint {path} does not exist")
    return ModelCheckpoint.load(path)


def _load_sims(manifest: str, split: str | None = None):
    entries = read_manifest(manifest)
    if split is not None:
        entries = [e for e in entries if e["split"] == split]
    return [load_simulation(e) for e in entries]


# --- commands --------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = _load_config(args.config, "generate")
    cohort = dict(cfg.get("cohort", {}))
    if args.seed is not None:
        cohort["seed"] = args.seed
    cc = _build(CohortConfig, cohort, "cohort")
    oracle = _build(OracleConfig, cfg.get("oracle"), "oracle")
    n_test = int(cfg.get("test_geometries", 0))
    if not 0 <= n_test < cc.n_geometries:
        raise ConfigError("test_geometries must lie in [0, n_geometries)")
    sims = generate_cohort(cc, oracle)
    splits = {f"g{g:03d}": ("test" if g >= cc.n_geometries - n_test else "train")
              for g in range(cc.n_geometries)}
    out = _out_dir(args)
    write_cohort(sims, out, splits, args.precision)
    _write_json(out / "generate_report.json", {**_meta(args, cfg), "simulations": len(sims),
                                               "geometries": cc.n_geometries})
    return 0


def cmd_featurize(args) -> int:
    out = _out_dir(args)
    wf = _load_waveform(args.waveform)
    for path in args.meshes:
        d = compute_descriptors(_load_mesh(path), wf)
        d.save(out / (Path(path).stem + ".desc.gwss"), args.precision)
    return 0


def _items_from_manifest(manifest: str, split: str, stats: FeatureStats | None, kind: str, config,
                         dtype):
    from .pipeline import featurize, make_items

    sims = _load_sims(manifest, split)
    if not sims:
        return [], stats
    descs = featurize(sims)
    stats = stats or FeatureStats.fit(descs)
    return make_items(sims, descs, stats, config, dtype), stats


def cmd_train(args) -> int:
    cfg = _load_config(args.config, "train")
    if "manifest" not in cfg:
        raise ConfigError("train config needs a manifest")
    kind = cfg.get("model_kind", "gatr")
    if kind not in KINDS:
        raise ConfigError(f"unknown model kind {kind!r}")
    model_cfg = _build(KINDS[kind][0], cfg.get("model"), "model")
    tvals = dict(cfg.get("train", {}))
    if args.seed is not None:
        tvals["seed"] = args.seed
    if args.precision_given:
        tvals["precision"] = args.precision
    tc = _build(TrainConfig, tvals, "train")
    items, stats = _items_from_manifest(cfg["manifest"], "train", None, kind, model_cfg, tc.dtype)
    if not items:
        raise DataError("manifest has no training simulations")
    out = _out_dir(args)
    result = train(items, kind, model_cfg, tc, stats, out_dir=out)
    from .plotting import plot_loss

    plot_loss(result.history, out / "loss.png")
    report = {**_meta(args, cfg), "epochs": tc.epochs, "train_samples": len(items),
              "final_loss": result.history[-1] if result.history else None}
    test_items, _ = _items_from_manifest(cfg["manifest"], "test", stats, kind, model_cfg, tc.dtype)
    if test_items:
        rows = evaluate(result.checkpoint, test_items)
        report["test"] = mean_metrics(rows)
        _write_csv(out / "test_metrics.csv", rows)
    _write_json(out / "train_report.json", report)
    _write_json(out / "config_snapshot.json", {"model_kind": kind, "model": model_cfg.to_dict(),
                                               "train": tc.to_dict(), "manifest": cfg["manifest"]})
    return 0


def cmd_predict(args) -> int:
    ckpt = _load_checkpoint(args.checkpoint)
    mesh = _load_mesh(args.mesh)
    d = compute_descriptors(mesh, _load_waveform(args.waveform))
    model = ckpt.build()
    dtype = next(model.parameters()).dtype
    field = predict(model, [prepare_sample(d, ckpt.stats, ckpt.config, dtype)])[0]
    out = Path(args.out or "prediction.gwss")
    out.parent.mkdir(parents=True, exist_ok=True)
    field.save(out, args.precision)
    return 0


def cmd_evaluate(args) -> int:
    for p in (args.pred, args.truth):
        if not Path(p).exists():
            raise DataError(f"field file {p} does not exist")
    pred, truth = TransientWssField.load(args.pred), TransientWssField.load(args.truth)
    if pred.tau.shape != truth.tau.shape:
        raise DataError(f"field shapes differ: {pred.tau.shape} vs {truth.tau.shape}")
    out = _out_dir(args)
    report = {**_meta(args, {"pred": args.pred, "truth": args.truth}),
              "wss": metrics(pred, truth),
              "tawss": scalar_metrics(tawss(pred), tawss(truth))}
    try:
        report["osi"] = scalar_metrics(osi(pred), osi(truth))
    except ValueError:
        report["osi"] = {"mae": float(np.abs(osi(pred).values - osi(truth).values).mean()),
                         "approx_disp": None}
    _write_json(out / "evaluation.json", report)
    _write_csv(out / "evaluation.csv", [{"marker": k, **v} for k, v in report.items()
                                        if isinstance(v, dict) and k in ("wss", "tawss", "osi")])
    from .plotting import plot_magnitude_scatter

    plot_magnitude_scatter(pred.tau, truth.tau, out / "magnitude_scatter.png")
    print(json.dumps(report["wss"], sort_keys=True))
    return 0


def _default_spec():
    from .synth.vessel import straight_spec

    return straight_spec(100.0, 10.0, 4.5, bulge_amplitude=0.0)


def cmd_audit(args) -> int:
    from . import audits, plotting
    from .synth.vessel import make_branch

    cfg = _load_config(args.config, "audit")
    if args.suite not in SUITES:
        raise ConfigError(f"unknown audit suite {args.suite!r}")
    ckpt = _load_checkpoint(args.checkpoint)
    out = _out_dir(args)
    manifest = cfg.get("manifest")
    sims = _load_sims(manifest, "test") or _load_sims(manifest) if manifest else []
    spec = sims[0].spec if sims else _default_spec()
    meta = _meta(args, cfg)
    if args.suite == "equivariance":
        if sims:
            mesh, wf = sims[0].mesh, sims[0].waveform
        else:
            from .synth.vessel import generate_vessel

            mesh, wf = generate_vessel(spec), _load_waveform(None)
        d = compute_descriptors(mesh, wf)
        dtype = next(iter(ckpt.state.values())).dtype
        sample = prepare_sample(d, ckpt.stats, ckpt.config, dtype)
        rep = audits.equivariance_audit(ckpt, sample, int(cfg.get("transforms", 50)),
                                        seed=args.seed or 0)
        _write_csv(out / "equivariance.csv", [rep])
    elif args.suite == "inflow-sweep":
        if not sims:
            raise ConfigError("inflow-sweep needs a manifest with simulations")
        rows = audits.inflow_sweep(ckpt, sims)
        rep = {"bins": rows}
        _write_csv(out / "inflow_sweep.csv", rows)
        plotting.plot_inflow_bins(rows, out / "inflow_sweep.png")
    elif args.suite == "remodel":
        rep = audits.remodel_audit(ckpt, spec, cfg.get("amplitudes", (0.0, 2.0, 4.0, 6.0, 8.0)))
        _write_csv(out / "remodel.csv", [
            {"amplitude": a, "q1_tawss_true": t, "q1_tawss_pred": p}
            for a, t, p in zip(rep["amplitudes"], rep["q1_tawss_true"], rep["q1_tawss_pred"])])
        plotting.plot_trajectory(rep, out / "remodel.png")
    elif args.suite == "topology":
        b = cfg.get("branch")
        try:
            branch = make_branch(spec, **b) if b else audits.side_branch(spec)
        except TypeError as exc:
            raise ConfigError(f"invalid branch settings: {exc}") from exc
        rep = audits.topology_audit(ckpt, spec, [branch])
        _write_csv(out / "topology.csv", [{"region": k, **rep[k]} for k in
                                          ("base", "extended_original", "extended_added", "extended_full")])
        plotting.plot_region_cosine(rep, out / "topology.png")
    else:
        if sims:
            mesh, wf = sims[0].mesh, sims[0].waveform
        else:
            from .synth.vessel import generate_vessel

            mesh, wf = generate_vessel(spec), _load_waveform(None)
        rep = audits.mesh_sensitivity(ckpt, mesh, wf, tuple(cfg.get("factors", (0.8, 1.0, 1.2))))
        _write_csv(out / "mesh_sensitivity.csv", rep["pairs"])
        plotting.plot_sensitivity(rep, out / "mesh_sensitivity.png")
    _write_json(out / f"audit_{args.suite}.json", {**meta, "suite": args.suite, "result": rep})
    print(json.dumps({"suite": args.suite, "ok": True}))
    return 0


COMMANDS = {"generate": cmd_generate, "featurize": cmd_featurize, "train": cmd_train,
            "predict": cmd_predict, "evaluate": cmd_evaluate, "audit": cmd_audit}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--deterministic", action="store_true",
                        help="single thread, deterministic kernels")
    common.add_argument("--out", help="output directory (or file for predict)")
    common.add_argument("--precision", choices=("f32", "f64"), default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="gatr-wss", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="synthetic cohort with oracle WSS")
    p = sub.add_parser("featurize", parents=[common], help="descriptor files for meshes")
    p.add_argument("meshes", nargs="+")
    p.add_argument("--waveform", help="inflow CSV (time_s, flow_ml_s)")
    sub.add_parser("train", parents=[common], help="train on a cohort manifest")
    p = sub.add_parser("predict", parents=[common], help="predict transient WSS for a mesh")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--waveform")
    p = sub.add_parser("evaluate", parents=[common], help="compare two WSS field files")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p = sub.add_parser("audit", parents=[common], help="symmetry and generalisation audits")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--suite", required=True, choices=SUITES)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.precision_given = args.precision is not None
    args.precision = args.precision or "f32"
    threads = os.environ.get(THREADS_ENV)
    if threads:
        torch.set_num_threads(int(threads))
    if args.deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DataError, NumericError, MeshError, FileNotFoundError, ValueError) as exc:
        if isinstance(exc, (ConfigError, DataError)):
            code = exc.exit_code
        elif isinstance(exc, NumericError):
            code = 4
        else:
            code = 3
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                     "exit_code": code}) + "\n")
        return code


if __name__ == "__main__":
    sys.exit(main())
