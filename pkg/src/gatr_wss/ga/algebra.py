"""Projective geometric algebra G(3,0,1) on 16-component arrays.

Basis order (``BASIS_VERSION = 1``), used for every multivector in this package,
including serialised batches:

    ====  =======  =====
    idx   blade    grade
    ====  =======  =====
    0     1        0
    1     e0       1
    2     e1       1
    3     e2       1
    4     e3       1
    5     e01      2
    6     e02      2
    7     e03      2
    8     e12      2
    9     e13      2
    10    e23      2
    11    e012     3
    12    e013     3
    13    e023     3
    14    e123     3
    15    e0123    4
    ====  =======  =====

Metric: e0^2 = 0, e1^2 = e2^2 = e3^2 = +1.

Object conventions (plane-based PGA):

* plane ``{x : n.x = d}``  ->  ``n1 e1 + n2 e2 + n3 e3 - d e0``
* point ``x``              ->  ``e123 - x1 e023 + x2 e013 - x3 e012``
* scalar ``s``             ->  ``s``

All functions act on the trailing axis and accept any leading batch shape.
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np
import torch

BASIS_VERSION = 1

BLADES: tuple[tuple[int, ...], ...] = (
    (),
    (0,), (1,), (2,), (3,),
    (0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3),
    (0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3),
    (0, 1, 2, 3),
)
BASIS_NAMES = tuple("1" if not b else "e" + "".join(map(str, b)) for b in BLADES)
GRADES = np.array([len(b) for b in BLADES])
METRIC = (0.0, 1.0, 1.0, 1.0)

# component slots used by the embeddings
SCALAR = 0
E0 = 1
PLANE_NORMAL = (2, 3, 4)
E123 = 14
PSEUDOSCALAR = 15
# slots without an e0 factor; the invariant inner product lives on these
NONDEGENERATE = np.array([i for i, b in enumerate(BLADES) if 0 not in b])

_INDEX = {b: i for i, b in enumerate(BLADES)}


def _blade_product(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[float, tuple[int, ...]]:
    """Product of two basis blades as (sign, blade)."""
    factors = list(a) + list(b)
    sign = 1.0
    # bubble sort, counting transpositions
    for i in range(len(factors)):
        for j in range(len(factors) - 1 - i):
            if factors[j] > factors[j + 1]:
                factors[j], factors[j + 1] = factors[j + 1], factors[j]
                sign = -sign
    out: list[int] = []
    for f in factors:
        if out and out[-1] == f:
            out.pop()
            sign *= METRIC[f]
        else:
            out.append(f)
    return sign, tuple(out)


def _build_cayley() -> np.ndarray:
    table = np.zeros((16, 16, 16))
    for i, j in itertools.product(range(16), repeat=2):
        sign, blade = _blade_product(BLADES[i], BLADES[j])
        if sign != 0.0:
            table[i, j, _INDEX[blade]] = sign
    return table


# CAYLEY[i, j, k]: coefficient of blade k in (blade i)(blade j)
CAYLEY = _build_cayley()
REVERSE_SIGNS = np.array([(-1.0) ** (g * (g - 1) // 2) for g in GRADES])
INVOLUTION_SIGNS = np.array([(-1.0) ** g for g in GRADES])


@lru_cache(maxsize=None)
def _cayley(dtype: torch.dtype) -> torch.Tensor:
    return torch.tensor(CAYLEY, dtype=dtype)


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def geometric_product(a, b) -> torch.Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return torch.einsum("...i,ijk,...j->...k", a, _cayley(a.dtype), b)


def grade_project(x, grade: int) -> torch.Tensor:
    x = _as_tensor(x)
    mask = torch.tensor(GRADES == grade, dtype=x.dtype)
    return x * mask


def reverse(x) -> torch.Tensor:
    x = _as_tensor(x)
    return x * torch.tensor(REVERSE_SIGNS, dtype=x.dtype)


def grade_involution(x) -> torch.Tensor:
    x = _as_tensor(x)
    return x * torch.tensor(INVOLUTION_SIGNS, dtype=x.dtype)


def basis_vector(index: int, dtype=torch.float64) -> torch.Tensor:
    out = torch.zeros(16, dtype=dtype)
    out[index] = 1.0
    return out


def blade(name: str, dtype=torch.float64) -> torch.Tensor:
    """Unit basis blade by name, e.g. ``blade("e12")``."""
    return basis_vector(BASIS_NAMES.index(name), dtype)


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains non-finite values")


def embed_scalar(s) -> torch.Tensor:
    s = _as_tensor(s)
    out = torch.zeros(*s.shape, 16, dtype=s.dtype)
    out[..., SCALAR] = s
    return out


def extract_scalar(x) -> torch.Tensor:
    return _as_tensor(x)[..., SCALAR]


def embed_point(x) -> torch.Tensor:
    """Embed 3D points ``(..., 3)`` as PGA trivectors with unit ``e123``."""
    x = _as_tensor(x)
    _check_finite(x.detach().cpu().numpy(), "point coordinates")
    out = torch.zeros(*x.shape[:-1], 16, dtype=x.dtype)
    out[..., 14] = 1.0
    out[..., 13] = -x[..., 0]
    out[..., 12] = x[..., 1]
    out[..., 11] = -x[..., 2]
    return out


def extract_point(x) -> torch.Tensor:
    x = _as_tensor(x)
    w = x[..., 14:15]
    coords = torch.stack([-x[..., 13], x[..., 12], -x[..., 11]], dim=-1)
    return coords / w


def embed_plane(normal, offset=0.0, normalize: bool = True) -> torch.Tensor:
    """Embed oriented planes ``{x : n.x = offset}`` as PGA vectors.

    Direction-only features (normals, flow prior) use ``offset=0``; the normal is
    scaled to unit length unless ``normalize=False``.
    """
    n = _as_tensor(normal)
    norm = torch.linalg.norm(n, dim=-1, keepdim=True)
    if torch.any(norm == 0):
        raise ValueError("plane normal must be nonzero")
    if normalize:
        n = n / norm
    offset = torch.as_tensor(offset, dtype=n.dtype)
    out = torch.zeros(*n.shape[:-1], 16, dtype=n.dtype)
    out[..., 2:5] = n
    out[..., 1] = -offset
    return out


def extract_plane(x) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(normal, offset)`` of a vector-grade multivector."""
    x = _as_tensor(x)
    return x[..., 2:5], -x[..., 1]


def inner_product(a, b) -> torch.Tensor:
    """Invariant inner product: sum over the e0-free components."""
    a, b = _as_tensor(a), _as_tensor(b)
    idx = torch.as_tensor(NONDEGENERATE)
    return (a[..., idx] * b[..., idx]).sum(-1)
