"""Decomposed magnitude/angle loss, the training loop, cross-validation and ensembling."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .descriptors import DescriptorSet, FeatureStats
from .hemo import TransientWssField, metrics
from .model.api import ModelCheckpoint, Sample, build_model, collate, predict, prepare_sample

log = logging.getLogger(__name__)

ZERO_EPS = 1e-12


class NumericError(RuntimeError):
    """Training diverged; ``checkpoint`` holds the last finite parameters."""

    def __init__(self, msg: str, checkpoint: ModelCheckpoint | None = None):
        super().__init__(msg)
        self.checkpoint = checkpoint


@dataclass
class TrainConfig:
    epochs: int = 5000
    batch_size: int = 16
    lr0: float = 3e-4
    gamma: float = 0.9989
    clip_norm: float = 1.0
    lam: float = 0.1
    seed: int = 0
    precision: str = "f32"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not self.lr0 > 0 or not 0 < self.gamma <= 1 or not self.clip_norm > 0 or self.lam < 0:
            raise ValueError("need lr0 > 0, 0 < gamma <= 1, clip_norm > 0, lam >= 0")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be f32 or f64, got {self.precision!r}")

    @property
    def dtype(self) -> torch.dtype:
        return torch.float32 if self.precision == "f32" else torch.float64

    def to_dict(self) -> dict:
        return asdict(self)


def learning_rate(config: TrainConfig, epoch: int) -> float:
    return config.lr0 * config.gamma ** epoch


@dataclass
class LossReport:
    l_angle: torch.Tensor
    l_magnitude: torch.Tensor
    l_total: torch.Tensor

    def floats(self) -> dict[str, float]:
        return {k: float(v) for k, v in asdict(self).items()}


def wss_loss(pred: torch.Tensor, truth: torch.Tensor, lam: float = 0.1,
             mask: torch.Tensor | None = None) -> LossReport:
    """L1 on magnitudes plus one minus the mean cosine.

    ``pred`` and ``truth`` have shape (..., 3); ``mask`` (same leading shape) marks
    entries that count. Pairs where either vector vanishes are left out of the cosine.
    """
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(truth.shape)}")
    if mask is None:
        mask = torch.ones(pred.shape[:-1], dtype=torch.bool)
    pn = torch.linalg.norm(pred, dim=-1)
    tn = torch.linalg.norm(truth, dim=-1)
    w = mask.to(pred.dtype)
    l_mag = ((tn - pn).abs() * w).sum() / w.sum().clamp_min(1.0)
    ok = mask & (pn >= ZERO_EPS) & (tn >= ZERO_EPS)
    wc = ok.to(pred.dtype)
    denom = torch.where(ok, pn * tn, torch.ones_like(pn))
    cos = (pred * truth).sum(-1) / denom
    l_angle = 1.0 - (cos * wc).sum() / wc.sum().clamp_min(1.0)
    return LossReport(l_angle, l_mag, l_angle + lam * l_mag)


def clip_gradients(params, max_norm: float) -> float:
    """Rescale gradients in place to a global norm of at most ``max_norm``; returns the old norm."""
    return float(torch.nn.utils.clip_grad_norm_(list(params), max_norm))


@dataclass
class TrainItem:
    sample: Sample
    truth: torch.Tensor  # (T, n, 3)
    geometry_id: str = ""


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    history: list[dict] = field(default_factory=list)

    def write_history(self, path: str | Path) -> None:
        write_history(path, self.history)


HISTORY_COLUMNS = ("epoch", "l_angle", "l_magnitude", "l_total", "lr")


def write_history(path: str | Path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow({k: row[k] for k in HISTORY_COLUMNS})


def _pad_truth(items: list[TrainItem], dtype) -> torch.Tensor:
    t = items[0].truth.shape[0]
    n = max(it.truth.shape[1] for it in items)
    out = torch.zeros(len(items), t, n, 3, dtype=dtype)
    for i, it in enumerate(items):
        out[i, :, : it.truth.shape[1]] = it.truth
    return out


def batch_loss(model, items: list[TrainItem], lam: float, dtype) -> LossReport:
    batch = collate([it.sample for it in items]).to(dtype)
    pred, valid = model(batch)
    truth = _pad_truth(items, dtype)
    mask = valid & batch.mask[:, None, :]
    return wss_loss(pred, truth, lam, mask)


def set_deterministic(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def train(items: list[TrainItem], kind: str, model_config, config: TrainConfig,
          stats: FeatureStats, out_dir: str | Path | None = None,
          callback=None) -> TrainResult:
    if not items:
        raise ValueError("training set is empty")
    set_deterministic(config.seed)
    dtype = config.dtype
    model = build_model(kind, model_config, seed=config.seed, dtype=dtype)
    items = [TrainItem(Sample(it.sample.x.to(dtype), it.sample.features.to(dtype), it.sample.tokens),
                       it.truth.to(dtype), it.geometry_id) for it in items]
    opt = torch.optim.Adam(model.parameters(), lr=config.lr0, betas=(0.9, 0.999), eps=1e-8)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=config.gamma)
    order_gen = torch.Generator().manual_seed(config.seed)
    out_dir = Path(out_dir) if out_dir is not None else None
    history: list[dict] = []
    last_good = ModelCheckpoint.from_model(kind, model, stats, {"epoch": 0})
    for epoch in range(config.epochs):
        model.train()
        lr = opt.param_groups[0]["lr"]
        perm = torch.randperm(len(items), generator=order_gen).tolist()
        sums = np.zeros(3)
        for start in range(0, len(perm), config.batch_size):
            chunk = [items[i] for i in perm[start:start + config.batch_size]]
            opt.zero_grad(set_to_none=True)
            rep = batch_loss(model, chunk, config.lam, dtype)
            if not torch.isfinite(rep.l_total):
                raise NumericError(f"non-finite loss at epoch {epoch}", last_good)
            rep.l_total.backward()
            clip_gradients(model.parameters(), config.clip_norm)
            opt.step()
            sums += len(chunk) * np.array([float(rep.l_angle.detach()),
                                           float(rep.l_magnitude.detach()),
                                           float(rep.l_total.detach())])
        sched.step()
        sums /= len(items)
        row = {"epoch": epoch, "l_angle": sums[0], "l_magnitude": sums[1], "l_total": sums[2],
               "lr": lr}
        history.append(row)
        last_good = ModelCheckpoint.from_model(kind, model, stats, {"epoch": epoch + 1})
        if callback is not None:
            callback(row)
        if out_dir is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            last_good.save(out_dir / f"checkpoint_{epoch + 1:05d}.gwss")
    ckpt = ModelCheckpoint.from_model(kind, model, stats,
                                      {"epoch": config.epochs, "train": config.to_dict()})
    result = TrainResult(ckpt, history)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt.save(out_dir / "checkpoint.gwss")
        result.write_history(out_dir / "loss.csv")
    return result


def evaluate(checkpoint: ModelCheckpoint, items: list[TrainItem]) -> list[dict]:
    model = checkpoint.build()
    preds = predict(model, [it.sample for it in items])
    return [metrics(p, TransientWssField(it.truth.double().numpy())) for p, it in zip(preds, items)]


def mean_metrics(rows: list[dict]) -> dict[str, float]:
    return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}


def geometry_folds(geometry_ids: list[str], folds: int, seed: int) -> list[list[str]]:
    unique = sorted(set(geometry_ids))
    if folds < 2 or folds > len(unique):
        raise ValueError(f"{folds} folds requested for {len(unique)} geometries")
    perm = np.random.default_rng(seed).permutation(len(unique))
    return [[unique[i] for i in part] for part in np.array_split(perm, folds)]


@dataclass
class FoldResult:
    test_geometries: list[str]
    checkpoint: ModelCheckpoint
    metrics: dict[str, float]


def cross_validate(items: list[TrainItem], folds: int, kind: str, model_config,
                   config: TrainConfig, stats: FeatureStats) -> list[FoldResult]:
    parts = geometry_folds([it.geometry_id for it in items], folds, config.seed)
    results = []
    for k, held in enumerate(parts):
        held_set = set(held)
        train_items = [it for it in items if it.geometry_id not in held_set]
        test_items = [it for it in items if it.geometry_id in held_set]
        log.info("fold %d/%d: %d train, %d test samples", k + 1, folds, len(train_items),
                 len(test_items))
        res = train(train_items, kind, model_config, config, stats)
        results.append(FoldResult(held, res.checkpoint, mean_metrics(evaluate(res.checkpoint, test_items))))
    return results


def ensemble_predict(checkpoints: list[ModelCheckpoint], descriptors: DescriptorSet) -> TransientWssField:
    if not checkpoints:
        raise ValueError("ensemble is empty")
    fields = []
    for ckpt in checkpoints:
        model = ckpt.build()
        dtype = next(model.parameters()).dtype
        sample = prepare_sample(descriptors, ckpt.stats, ckpt.config, dtype)
        fields.append(predict(model, [sample])[0].tau)
    shapes = {f.shape for f in fields}
    if len(shapes) != 1:
        raise ValueError(f"ensemble members disagree on output shape: {sorted(shapes)}")
    return TransientWssField(np.mean(fields, axis=0))


def ensemble_mean(fields: list[TransientWssField]) -> TransientWssField:
    if not fields:
        raise ValueError("ensemble is empty")
    if len({f.tau.shape for f in fields}) != 1:
        raise ValueError("ensemble members disagree on output shape")
    return TransientWssField(np.mean([f.tau for f in fields], axis=0))

