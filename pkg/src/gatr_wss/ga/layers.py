"""Equivariant primitives for multivector channels, shape ``(..., channels, 16)``."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .algebra import CAYLEY, GRADES, NONDEGENERATE

N_LINEAR_BASIS = 9


def _linear_basis() -> np.ndarray:
    """Nine 16x16 maps spanning the equivariant linear maps of one channel.

    Maps 0-4 project onto grades 0-4; maps 5-8 project onto grades 0-3 and then
    multiply by e0 from the left.
    """
    basis = np.zeros((N_LINEAR_BASIS, 16, 16))
    for g in range(5):
        basis[g] = np.diag((GRADES == g).astype(float))
    e0_left = CAYLEY[1].T  # (out, in): e0 * e_in
    for g in range(4):
        basis[5 + g] = e0_left @ basis[g]
    return basis


LINEAR_BASIS = _linear_basis()


@lru_cache(maxsize=None)
def _basis(dtype: torch.dtype) -> torch.Tensor:
    return torch.tensor(LINEAR_BASIS, dtype=dtype)


@lru_cache(maxsize=None)
def _cayley_flat(dtype: torch.dtype) -> torch.Tensor:
    return torch.tensor(CAYLEY.reshape(256, 16), dtype=dtype)


@lru_cache(maxsize=None)
def _nondegenerate_mask(dtype: torch.dtype) -> torch.Tensor:
    mask = torch.zeros(16, dtype=dtype)
    mask[torch.as_tensor(NONDEGENERATE)] = 1.0
    return mask


def equivariant_linear(x: torch.Tensor, weight: torch.Tensor,
                       bias: torch.Tensor | None = None) -> torch.Tensor:
    """Channel-mixing equivariant map.

    Parameters
    ----------
    x : Tensor with shape (..., c_in, 16)
    weight : Tensor with shape (c_in, c_out, 9)
    bias : Tensor with shape (c_out,), optional
        Added to the scalar component only.
    """
    if weight.shape[0] != x.shape[-2] or weight.shape[-1] != N_LINEAR_BASIS:
        raise ValueError(f"weight shape {tuple(weight.shape)} does not match input "
                         f"channels {x.shape[-2]}")
    # full (c_in*16) x (c_out*16) matrix
    full = torch.einsum("iok,kab->ioab", weight, _basis(x.dtype))
    c_in, c_out = weight.shape[:2]
    mat = full.permute(0, 3, 1, 2).reshape(c_in * 16, c_out * 16)
    out = (x.reshape(*x.shape[:-2], c_in * 16) @ mat).reshape(*x.shape[:-2], c_out, 16)
    if bias is not None:
        out = out + F.pad(bias[:, None], (0, 15))
    return out


def invariant_inner_product(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Sum of products over the e0-free components (last axis)."""
    return (a * b * _nondegenerate_mask(a.dtype)).sum(-1)


def equivariant_layernorm(x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Rescale so the channel mean of the squared invariant norm is one."""
    sq = invariant_inner_product(x, x).mean(dim=-1, keepdim=True)
    return x / torch.sqrt(sq + eps)[..., None]


def geometric_nonlinearity(x: torch.Tensor) -> torch.Tensor:
    """Scalar-gated GELU: every multivector is scaled by GELU of its own scalar part."""
    return F.gelu(x[..., 0:1]) * x


def geometric_product(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    # outer product of coefficients contracted with the flattened Cayley table (BLAS-friendly)
    outer = (a.unsqueeze(-1) * b.unsqueeze(-2)).flatten(-2)
    return outer @ _cayley_flat(a.dtype)


def geometric_bilinear(x: torch.Tensor, y: torch.Tensor, w_left: torch.Tensor,
                       w_right: torch.Tensor, w_out: torch.Tensor) -> torch.Tensor:
    """Geometric product of two linear projections, then a linear mix."""
    left = equivariant_linear(x, w_left)
    right = equivariant_linear(y, w_right)
    return equivariant_linear(geometric_product(left, right), w_out)


def multivector_dropout(x: torch.Tensor, p: float, training: bool) -> torch.Tensor:
    """Zero whole multivectors channel-wise."""
    if not training or p == 0.0:
        return x
    keep = torch.bernoulli(torch.full(x.shape[:-1] + (1,), 1.0 - p, dtype=x.dtype))
    return x * keep / (1.0 - p)


def geometric_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                        key_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Softmax attention with invariant logits.

    q : (..., heads, n_q, c, 16); k, v : (..., heads, n_k, c, 16);
    key_mask : (batch..., n_k) boolean without the head axis, True where valid.
    """
    c = q.shape[-2]
    mask = _nondegenerate_mask(q.dtype)
    qf = (q * mask).flatten(-2)
    kf = (k * mask).flatten(-2)
    logits = qf @ kf.transpose(-1, -2) / math.sqrt(8 * c)
    if key_mask is not None:
        logits = logits.masked_fill(~key_mask[..., None, None, :], float("-inf"))
    weights = torch.softmax(logits, dim=-1)
    out = weights @ v.flatten(-2)
    return out.reshape(v.shape[:-3] + (q.shape[-3],) + v.shape[-2:])


class EquiLinear(nn.Module):
    def __init__(self, c_in: int, c_out: int, bias: bool = True,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(c_in, c_out, N_LINEAR_BASIS))
        self.bias = nn.Parameter(torch.zeros(c_out)) if bias else None
        self.reset_parameters(generator)

    @torch.no_grad()
    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        c_in = self.weight.shape[0]
        self.weight.normal_(0.0, 1.0 / math.sqrt(c_in), generator=generator)
        # rescale so unit-variance inputs give unit-variance outputs
        probe = torch.randn(256, c_in, 16, generator=generator, dtype=self.weight.dtype)
        out = equivariant_linear(probe, self.weight)
        self.weight.div_(out.std().clamp_min(1e-6))
        if self.bias is not None:
            self.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return equivariant_linear(x, self.weight, self.bias)


class EquiLayerNorm(nn.Module):
    def __init__(self, eps: float = 1e-6):
        super().__init__()
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return equivariant_layernorm(x, self.eps)


class GeometricMLP(nn.Module):
    """Nonlinear residual branch: norm, bilinear product, gated GELU, dropout, linear."""

    def __init__(self, channels: int, hidden: int | None = None, dropout: float = 0.0,
                 generator: torch.Generator | None = None):
        super().__init__()
        hidden = hidden or channels
        self.norm = EquiLayerNorm()
        self.left = EquiLinear(channels, hidden, generator=generator)
        self.right = EquiLinear(channels, hidden, generator=generator)
        self.mix = EquiLinear(hidden, hidden, generator=generator)
        self.out = EquiLinear(hidden, channels, generator=generator)
        self.dropout = dropout

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm(x)
        h = self.mix(geometric_product(self.left(h), self.right(h)))
        h = geometric_nonlinearity(h)
        h = multivector_dropout(h, self.dropout, self.training)
        return self.out(h)


class GeometricAttention(nn.Module):
    """Multi-head attention: layer-normed linear q/k/v, invariant logits, output map."""

    def __init__(self, channels: int, heads: int, generator: torch.Generator | None = None):
        super().__init__()
        self.heads = heads
        self.norm = EquiLayerNorm()
        self.q = EquiLinear(channels, heads * channels, generator=generator)
        self.k = EquiLinear(channels, heads * channels, generator=generator)
        self.v = EquiLinear(channels, heads * channels, generator=generator)
        self.out = EquiLinear(heads * channels, channels, generator=generator)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        # (..., n, h*c, 16) -> (..., h, n, c, 16)
        *lead, n, hc, _ = x.shape
        x = x.reshape(*lead, n, self.heads, hc // self.heads, 16)
        return x.movedim(-3, -4)

    def forward(self, queries: torch.Tensor, context: torch.Tensor,
                key_mask: torch.Tensor | None = None) -> torch.Tensor:
        qn = self.norm(queries)
        kn = qn if context is queries else self.norm(context)
        q = self._split(self.q(qn))
        k = self._split(self.k(kn))
        v = self._split(self.v(kn))
        h = geometric_attention(q, k, v, key_mask)
        h = h.movedim(-4, -3).flatten(-3, -2)
        return self.out(h)
