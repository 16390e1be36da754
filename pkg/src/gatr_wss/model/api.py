"""Sample preparation, inference, gradients and checkpoint IO for both network kinds."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .. import __version__
from ..descriptors import DescriptorSet, FeatureStats, SCALAR_CHANNELS, build_embedding
from ..hemo import TransientWssField
from ..io import read_container, write_container
from .gatr import Batch, GatrConfig, LabGatr, Tokenisation, tokenise_points
from .vatr import LabVatr, VatrConfig

FORMAT_VERSION = 1
KINDS = {"gatr": (GatrConfig, LabGatr), "vatr": (VatrConfig, LabVatr)}


@dataclass
class Sample:
    """Network-ready inputs for one point cloud."""

    x: torch.Tensor  # (n, 8, 16)
    features: torch.Tensor  # (n, 14)
    tokens: Tokenisation


def scalar_features(d: DescriptorSet, stats: FeatureStats) -> np.ndarray:
    """The 14 concatenated scalars fed to the non-equivariant baseline."""
    coords = (d.coords - d.coords.mean(axis=0)) / stats.coord_scale
    cols = [coords, d.normals, d.flow_prior]
    for name in SCALAR_CHANNELS:
        val = np.broadcast_to(np.asarray(getattr(d, name), dtype=np.float64), (d.n,))
        cols.append(((val - stats.mean[name]) / stats.std[name])[:, None])
    return np.concatenate(cols, axis=1)


def prepare_sample(d: DescriptorSet, stats: FeatureStats, config, dtype=torch.float32,
                   seed: int | None = None) -> Sample:
    tokens = tokenise_points(d.coords, config.rate, config.k, config.eps, seed)
    return Sample(build_embedding(d, stats, dtype),
                  torch.as_tensor(scalar_features(d, stats), dtype=dtype), tokens)


def collate(samples: list[Sample]) -> Batch:
    return Batch.collate([s.x for s in samples], [s.tokens for s in samples],
                         [s.features for s in samples])


def build_model(kind: str, config, seed: int = 0, dtype=torch.float32) -> nn.Module:
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    return KINDS[kind][1](config, seed=seed).to(dtype)


def model_dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


@torch.no_grad()
def predict(model: nn.Module, samples: list[Sample]) -> list[TransientWssField]:
    model.eval()
    dtype = model_dtype(model)
    out = []
    for s in samples:
        tau, _ = model(collate([s]).to(dtype))
        out.append(TransientWssField(tau[0].double().numpy()))
    return out


def gradient(loss: torch.Tensor, params: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    """Reverse-mode derivatives of a recorded scalar loss, keyed by parameter name."""
    names = list(params)
    grads = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
    return {n: (torch.zeros_like(params[n]) if g is None else g) for n, g in zip(names, grads)}


@dataclass
class ModelCheckpoint:
    kind: str
    config: object
    stats: FeatureStats
    state: dict[str, torch.Tensor]
    train_state: dict

    def build(self) -> nn.Module:
        cls = KINDS[self.kind][1]
        dtype = next(iter(self.state.values())).dtype
        model = cls(self.config).to(dtype)
        model.load_state_dict(self.state)
        return model.eval()

    @classmethod
    def from_model(cls, kind: str, model: nn.Module, stats: FeatureStats,
                   train_state: dict | None = None) -> "ModelCheckpoint":
        state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        return cls(kind, model.config, stats, state, dict(train_state or {}))

    def save(self, path: str | Path) -> None:
        header = {"format_version": FORMAT_VERSION, "code_version": __version__,
                  "kind": self.kind, "config": self.config.to_dict(),
                  "stats": self.stats.to_dict(), "train_state": self.train_state}
        write_container(path, header, {k: v.cpu().numpy() for k, v in self.state.items()})

    @classmethod
    def load(cls, path: str | Path) -> "ModelCheckpoint":
        header, arrays = read_container(path)
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint format {header.get('format_version')}")
        config = KINDS[header["kind"]][0](**header["config"])
        state = {k: torch.from_numpy(np.array(v)) for k, v in arrays.items()}
        return cls(header["kind"], config, FeatureStats.from_dict(header["stats"]), state,
                   header.get("train_state", {}))
