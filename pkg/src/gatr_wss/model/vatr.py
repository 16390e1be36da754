"""LaB-VaTr: the same tokenise/attend/interpolate wiring on a flat scalar feature vector."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from .gatr import READOUT_GAIN, Batch, gather_points, interpolate

N_FEATURES = 14  # 3 coords + 3 normal + 3 flow prior + 2 geodesics + 2 curvatures + v_max


@dataclass
class VatrConfig:
    blocks: int = 12
    heads: int = 4
    hidden: int = 128
    rate: float = 0.1
    k: int = 3
    eps: float = 1e-8
    timepoints: int = 21
    dropout: float = 0.2

    def __post_init__(self):
        if self.blocks < 1 or self.heads < 1 or self.hidden < 1 or self.k < 1:
            raise ValueError("blocks, heads, hidden and k must be positive")
        if self.hidden % self.heads:
            raise ValueError("hidden size must be divisible by the head count")
        if not 0.0 < self.rate <= 1.0 or not self.eps > 0 or self.timepoints < 1:
            raise ValueError("invalid rate, eps or timepoints")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


class Mlp(nn.Module):
    def __init__(self, width: int, dropout: float):
        super().__init__()
        self.net = nn.Sequential(nn.LayerNorm(width), nn.Linear(width, 2 * width), nn.GELU(),
                                 nn.Dropout(dropout), nn.Linear(2 * width, width))

    def forward(self, x):
        return self.net(x)


class VatrBlock(nn.Module):
    def __init__(self, width: int, heads: int, dropout: float):
        super().__init__()
        self.norm_q = nn.LayerNorm(width)
        self.norm_kv = nn.LayerNorm(width)
        self.attention = nn.MultiheadAttention(width, heads, batch_first=True)
        self.mlp = Mlp(width, dropout)

    def forward(self, x, context=None, key_mask=None):
        q = self.norm_q(x)
        kv = q if context is None else self.norm_kv(context)
        pad = None if key_mask is None else ~key_mask
        h, _ = self.attention(q, kv, kv, key_padding_mask=pad, need_weights=False)
        a = x + h
        return a + self.mlp(a)


class LabVatr(nn.Module):
    def __init__(self, config: VatrConfig, in_features: int = N_FEATURES, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.config = config
        w = config.hidden
        self.embed = nn.Linear(in_features, w)
        self.tokeniser = VatrBlock(w, config.heads, config.dropout)
        self.trunk = nn.ModuleList(VatrBlock(w, config.heads, config.dropout)
                                   for _ in range(config.blocks - 1))
        self.skip = nn.Linear(w + in_features, w)
        self.head_mlp = Mlp(w, config.dropout)
        self.readout = nn.Linear(w, 3 * config.timepoints)
        with torch.no_grad():
            self.readout.weight.mul_(READOUT_GAIN)
            self.readout.bias.zero_()

    def forward(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        """Transient WSS (B, T, N, 3) and an all-True mask."""
        f0 = batch.features
        h = self.embed(f0)
        tok = self.tokeniser(gather_points(h, batch.coarse), h, batch.mask)
        for block in self.trunk:
            tok = block(tok, key_mask=batch.coarse_mask)
        fine = interpolate(tok[..., None], batch.neighbours, batch.weights)[..., 0]
        y = self.skip(torch.cat([fine, f0], dim=-1))
        y = y + self.head_mlp(y)
        out = self.readout(y)
        b, n = out.shape[:2]
        tau = out.reshape(b, n, self.config.timepoints, 3).transpose(1, 2)
        return tau, torch.ones(tau.shape[:-1], dtype=torch.bool)
