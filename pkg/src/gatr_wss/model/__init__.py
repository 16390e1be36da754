"""Equivariant surrogate network, scalar baseline and checkpoints."""

from .api import (ModelCheckpoint, Sample, build_model, collate, gradient, predict,
                  prepare_sample, scalar_features)
from .gatr import Batch, GatrConfig, LabGatr, decode_wss, interpolation_weights, tokenise_points
from .vatr import LabVatr, VatrConfig
