"""Glue between simulated cohorts, descriptors and training items."""

from __future__ import annotations

from dataclasses import replace

import torch

from .descriptors import DescriptorSet, FeatureStats, compute_descriptors, v_max
from .synth.dataset import Simulation
from .trainer import TrainItem
from .model.api import prepare_sample


def featurize(sims: list[Simulation]) -> list[DescriptorSet]:
    """Descriptors per simulation; geometry terms are computed once per geometry."""
    cache: dict[str, DescriptorSet] = {}
    out = []
    for s in sims:
        if s.geometry_id not in cache:
            cache[s.geometry_id] = compute_descriptors(s.mesh, s.waveform)
        out.append(replace(cache[s.geometry_id], v_max=v_max(s.waveform, s.mesh.inlet_area)))
    return out


def make_items(sims: list[Simulation], descs: list[DescriptorSet], stats: FeatureStats, config,
               dtype=torch.float32) -> list[TrainItem]:
    return [TrainItem(prepare_sample(d, stats, config, dtype),
                      torch.as_tensor(s.tau.tau, dtype=dtype), s.geometry_id)
            for s, d in zip(sims, descs)]


def split_by_geometry(sims: list[Simulation], test_ids: set[str]):
    train = [i for i, s in enumerate(sims) if s.geometry_id not in test_ids]
    test = [i for i, s in enumerate(sims) if s.geometry_id in test_ids]
    return train, test
