"""LaB-GATr: cross-attention tokenisation, GATr trunk, learned interpolation, WSS decode."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from ..descriptors import N_CHANNELS
from ..ga.layers import EquiLinear, GeometricAttention, GeometricMLP
from ..mesh import farthest_point_sample, knn

DECODE_EPS = 1e-12
READOUT_GAIN = 0.01  # scale of the initial readout weights


@dataclass
class GatrConfig:
    blocks: int = 10
    heads: int = 4
    channels: int = 8
    rate: float = 0.1
    k: int = 3
    eps: float = 1e-8
    timepoints: int = 21
    dropout: float = 0.2
    # average over both point orientations; makes the model exactly invariant to the
    # det(R) sign that reflections put on re-embedded points (doubles the cost)
    orientation_symmetric: bool = False

    def __post_init__(self):
        if self.blocks < 1 or self.heads < 1 or self.channels < 1 or self.k < 1:
            raise ValueError("blocks, heads, channels and k must be positive")
        if not 0.0 < self.rate <= 1.0:
            raise ValueError("rate must lie in (0, 1]")
        if not self.eps > 0 or self.timepoints < 1 or not 0.0 <= self.dropout < 1.0:
            raise ValueError("invalid eps, timepoints or dropout")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Tokenisation:
    """Coarse point set and interpolation stencil for one point cloud."""

    coarse: np.ndarray  # (n_coarse,) indices into the fine cloud
    neighbours: np.ndarray  # (n, k) indices into the coarse set
    weights: np.ndarray  # (n, k), rows sum to one


def interpolation_weights(fine: np.ndarray, coarse: np.ndarray, k: int, eps: float):
    if k > len(coarse):
        raise ValueError(f"k={k} exceeds the coarse set size {len(coarse)}")
    idx, dist = knn(fine, coarse, k)
    lam = 1.0 / (dist ** 2 + eps)
    return idx, lam / lam.sum(axis=1, keepdims=True)


def tokenise_points(points: np.ndarray, rate: float, k: int, eps: float,
                    seed: int | None = None) -> Tokenisation:
    coarse = farthest_point_sample(points, rate, seed)
    if len(coarse) == 0:
        raise ValueError("coarse set is empty")
    idx, w = interpolation_weights(points, points[coarse], k, eps)
    return Tokenisation(coarse, idx, w)


@dataclass
class Batch:
    """Padded batch of samples (B samples, N = max points, M = max tokens)."""

    x: torch.Tensor  # (B, N, C, 16) embeddings
    mask: torch.Tensor  # (B, N) valid points
    coarse: torch.Tensor  # (B, M) token indices into points
    coarse_mask: torch.Tensor  # (B, M)
    neighbours: torch.Tensor  # (B, N, k) indices into tokens
    weights: torch.Tensor  # (B, N, k)
    features: torch.Tensor | None = None  # (B, N, F) flat features for the scalar baseline

    @classmethod
    def collate(cls, embeddings: list[torch.Tensor], tokens: list[Tokenisation],
                features: list[torch.Tensor] | None = None) -> "Batch":
        b = len(embeddings)
        n = max(len(e) for e in embeddings)
        m = max(len(t.coarse) for t in tokens)
        k = tokens[0].neighbours.shape[1]
        dtype = embeddings[0].dtype
        x = torch.zeros(b, n, *embeddings[0].shape[1:], dtype=dtype)
        mask = torch.zeros(b, n, dtype=torch.bool)
        coarse = torch.zeros(b, m, dtype=torch.long)
        cmask = torch.zeros(b, m, dtype=torch.bool)
        nb = torch.zeros(b, n, k, dtype=torch.long)
        w = torch.zeros(b, n, k, dtype=dtype)
        feats = None
        if features is not None:
            feats = torch.zeros(b, n, features[0].shape[1], dtype=dtype)
        for i, (e, t) in enumerate(zip(embeddings, tokens)):
            ni, mi = len(e), len(t.coarse)
            x[i, :ni] = e
            mask[i, :ni] = True
            coarse[i, :mi] = torch.as_tensor(t.coarse)
            cmask[i, :mi] = True
            nb[i, :ni] = torch.as_tensor(t.neighbours)
            w[i, :ni] = torch.as_tensor(t.weights, dtype=dtype)
            if feats is not None:
                feats[i, :ni] = features[i]
        return cls(x, mask, coarse, cmask, nb, w, feats)

    def to(self, dtype: torch.dtype) -> "Batch":
        f = None if self.features is None else self.features.to(dtype)
        return Batch(self.x.to(dtype), self.mask, self.coarse, self.coarse_mask,
                     self.neighbours, self.weights.to(dtype), f)


def gather_points(x: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    """``x[b, idx[b, ...]]`` for x of shape (B, N, ...) and idx of shape (B, ...)."""
    b = torch.arange(x.shape[0]).view(-1, *([1] * (idx.dim() - 1)))
    return x[b, idx]


def interpolate(tokens: torch.Tensor, neighbours: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Inverse-square-distance weighted mean of the k nearest tokens per fine point."""
    near = gather_points(tokens, neighbours)  # (B, N, k, C, 16)
    return (weights[..., None, None] * near).sum(dim=2)


def decode_wss(out: torch.Tensor, eps: float = DECODE_EPS) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-channel magnitude (absolute scalar part) times unit plane normal.

    Using the absolute value keeps the direction sign in the plane slots only, so the
    angle loss alone decides it and the magnitude loss alone decides the scalar.

    ``out`` has shape (..., T, 16); returns ``(tau, valid)`` with tau (..., T, 3) and
    ``valid`` False where the direction slots vanish (tau is zero there).
    """
    direction = out[..., 2:5]
    norm = torch.linalg.norm(direction, dim=-1, keepdim=True)
    valid = norm[..., 0] >= eps
    unit = direction / torch.where(norm >= eps, norm, torch.ones_like(norm))
    tau = out[..., 0:1].abs() * unit * valid[..., None]
    return tau, valid


class GatrBlock(nn.Module):
    def __init__(self, channels: int, heads: int, dropout: float,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.attention = GeometricAttention(channels, heads, generator)
        self.mlp = GeometricMLP(channels, dropout=dropout, generator=generator)

    def forward(self, x: torch.Tensor, context: torch.Tensor | None = None,
                key_mask: torch.Tensor | None = None) -> torch.Tensor:
        ctx = x if context is None else context
        a = x + self.attention(x, ctx, key_mask)
        return a + self.mlp(a)


class LabGatr(nn.Module):
    def __init__(self, config: GatrConfig, in_channels: int = N_CHANNELS, seed: int = 0):
        super().__init__()
        self.config = config
        gen = torch.Generator().manual_seed(seed)
        c = config.channels
        self.embed = EquiLinear(in_channels, c, generator=gen)
        # the cross-attention block stands in for the first of the `blocks` blocks
        self.tokeniser = GatrBlock(c, config.heads, config.dropout, gen)
        self.trunk = nn.ModuleList(GatrBlock(c, config.heads, 0.0, gen)
                                   for _ in range(config.blocks - 1))
        self.skip = EquiLinear(c + in_channels, c, generator=gen)
        self.head_mlp = GeometricMLP(c, dropout=config.dropout, generator=gen)
        self.readout = EquiLinear(c, config.timepoints, generator=gen)
        # small readout: each timepoint's shear direction can change sign within a few steps
        # instead of sitting on the antipodal plateau of the angle loss
        with torch.no_grad():
            self.readout.weight.mul_(READOUT_GAIN)
        # tokeniser MLP is a nonlinear layer phi; trunk MLPs get dropout too
        for block in self.trunk:
            block.mlp.dropout = config.dropout

    def forward_multivectors(self, batch: Batch) -> torch.Tensor:
        """Output multivectors (B, N, T, 16)."""
        if self.config.orientation_symmetric:
            flipped = batch.x.clone()
            flipped[..., 0, :] = -flipped[..., 0, :]
            other = Batch(flipped, batch.mask, batch.coarse, batch.coarse_mask,
                          batch.neighbours, batch.weights, batch.features)
            return 0.5 * (self._forward(batch) + self._forward(other))
        return self._forward(batch)

    def _forward(self, batch: Batch) -> torch.Tensor:
        x0 = batch.x
        h = self.embed(x0)
        coarse = gather_points(h, batch.coarse)
        tok = self.tokeniser(coarse, h, batch.mask)
        for block in self.trunk:
            tok = block(tok, key_mask=batch.coarse_mask)
        fine = interpolate(tok, batch.neighbours, batch.weights)
        y = self.skip(torch.cat([fine, x0], dim=-2))
        y = y + self.head_mlp(y)
        return self.readout(y)

    def forward(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        """Transient WSS (B, T, N, 3) and the decode validity mask (B, T, N)."""
        out = self.forward_multivectors(batch)
        tau, valid = decode_wss(out)
        return tau.transpose(1, 2), valid.transpose(1, 2)
