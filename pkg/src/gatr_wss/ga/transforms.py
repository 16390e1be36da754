"""E(3) elements and their action on multivectors.

A transform ``x -> R x + t`` is written as a product of at most five plane
reflections (Householder factors of ``R`` plus two parallel planes for ``t``).
Each reflection in a unit plane ``u`` acts through the twisted sandwich
``x -> (-1)^{grade(x)} u x u``; the composite action is a 16x16 matrix.

Under this action oriented planes transform as polar vectors, scalars are
invariant, and point trivectors pick up the factor ``det(R)`` (points are
projective, so ``extract_point`` is unaffected).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .algebra import CAYLEY, GRADES

_TOL = 1e-10


def _reflection_matrix(normal: np.ndarray, offset: float) -> np.ndarray:
    """Action of the reflection in ``{x : n.x = offset}`` (``|n| = 1``)."""
    u = np.zeros(16)
    u[2:5] = normal
    u[1] = -offset
    # left[i, k] = coefficient of blade k in u * e_i ; right similarly for e_i * u
    left = np.einsum("a,aik->ik", u, CAYLEY)
    right = np.einsum("iak,a->ik", CAYLEY, u)
    sandwich = left @ right  # e_i -> (u e_i) u
    signs = (-1.0) ** GRADES
    # rows: input blade, columns: output blade; return as matrix acting on column vectors
    return (signs[:, None] * sandwich).T


def _householder_factors(rotation: np.ndarray) -> list[np.ndarray]:
    """Unit normals n_1..n_k with ``rotation = H(n_1) ... H(n_k)``."""
    q = rotation.copy()
    normals = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        v = q[:, i] - e
        if np.linalg.norm(v) > _TOL:
            n = v / np.linalg.norm(v)
            q = q - 2.0 * np.outer(n, n @ q)
            normals.append(n)
    return normals


@dataclass(frozen=True)
class EuclideanTransform:
    """``x -> rotation @ x + translation``; ``parity = det(rotation)``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3) or np.abs(rot @ rot.T - np.eye(3)).max() > 1e-10:
            raise ValueError("rotation must be a 3x3 orthogonal matrix")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @property
    def parity(self) -> int:
        return int(round(np.linalg.det(self.rotation)))

    @classmethod
    def identity(cls) -> "EuclideanTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def random(cls, rng: np.random.Generator, translation_scale: float = 1.0,
               reflection: bool | None = None) -> "EuclideanTransform":
        """Haar-random orthogonal part; ``reflection=None`` picks parity at random."""
        q, r = np.linalg.qr(rng.standard_normal((3, 3)))
        q = q * np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        if reflection is None:
            reflection = bool(rng.integers(2))
        if reflection:
            q = q @ np.diag([1.0, 1.0, -1.0])
        return cls(q, translation_scale * rng.standard_normal(3))

    def compose(self, other: "EuclideanTransform") -> "EuclideanTransform":
        """``self o other`` (apply ``other`` first)."""
        return EuclideanTransform(self.rotation @ other.rotation,
                                  self.rotation @ other.translation + self.translation)

    def inverse(self) -> "EuclideanTransform":
        rt = self.rotation.T
        return EuclideanTransform(rt, -rt @ self.translation)

    def apply_points(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.rotation.T + self.translation

    def apply_vectors(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v) @ self.rotation.T

    def reflections(self) -> list[tuple[np.ndarray, float]]:
        """Planes ``(n, d)`` whose successive reflections (first to last) realise this map."""
        planes = [(n, 0.0) for n in reversed(_householder_factors(self.rotation))]
        t = self.translation
        dist = np.linalg.norm(t)
        if dist > 0:
            n = t / dist
            planes += [(n, 0.0), (n, dist / 2.0)]
        return planes

    def versor(self) -> np.ndarray:
        """Versor ``V`` (16 components) with the action ``x -> (-1)^{|V||x|} V x V^-1``."""
        v = np.zeros(16)
        v[0] = 1.0
        for n, d in self.reflections():
            u = np.zeros(16)
            u[2:5] = n
            u[1] = -d
            v = np.einsum("a,abk,b->k", u, CAYLEY, v)
        return v

    def action_matrix(self) -> np.ndarray:
        """16x16 matrix ``M`` with ``rho(g) x = M @ x``."""
        m = np.eye(16)
        for n, d in self.reflections():
            m = _reflection_matrix(n, d) @ m
        return m


def apply_transform(g: EuclideanTransform, x) -> torch.Tensor:
    """Apply ``g`` to every multivector in ``x`` (shape ``(..., 16)``)."""
    if not isinstance(x, torch.Tensor):
        x = torch.as_tensor(np.asarray(x, dtype=np.float64))
    m = torch.as_tensor(g.action_matrix(), dtype=x.dtype)
    return x @ m.T
