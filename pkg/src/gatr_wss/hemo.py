"""Hemodynamic markers (TAWSS, OSI), field comparison metrics and quartile trajectories."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import precision_dtype, read_container, write_container

ZERO_EPS = 1e-12


@dataclass
class TransientWssField:
    """Wall shear stress ``tau`` of shape (T, n, 3) in Pa."""

    tau: np.ndarray

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=np.float64)
        if self.tau.ndim != 3 or self.tau.shape[-1] != 3 or self.tau.shape[0] < 1:
            raise ValueError(f"expected a (T, n, 3) field, got shape {self.tau.shape}")
        if not np.all(np.isfinite(self.tau)):
            raise ValueError("field has non-finite entries")

    @property
    def timepoints(self) -> int:
        return self.tau.shape[0]

    @property
    def n(self) -> int:
        return self.tau.shape[1]

    def rotated(self, rotation: np.ndarray) -> "TransientWssField":
        return TransientWssField(self.tau @ np.asarray(rotation).T)

    def save(self, path: str | Path, precision: str = "f32") -> None:
        save_field(path, self.tau.transpose(1, 0, 2).reshape(self.n, -1),
                   T=self.timepoints, components=["tau_x", "tau_y", "tau_z"], kind="wss",
                   units="Pa", precision=precision)

    @classmethod
    def load(cls, path: str | Path) -> "TransientWssField":
        header, data = load_field(path)
        if header["kind"] != "wss":
            raise ValueError(f"{path} holds a {header['kind']!r} field, not wss")
        return cls(data.reshape(header["n"], header["T"], 3).transpose(1, 0, 2))


@dataclass
class MarkerField:
    values: np.ndarray
    kind: str  # "TAWSS" or "OSI"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.kind not in ("TAWSS", "OSI"):
            raise ValueError(f"unknown marker kind {self.kind!r}")

    def save(self, path: str | Path, precision: str = "f32") -> None:
        save_field(path, self.values[:, None], T=1, components=[self.kind.lower()],
                   kind=self.kind, units="Pa" if self.kind == "TAWSS" else "1",
                   precision=precision)

    @classmethod
    def load(cls, path: str | Path) -> "MarkerField":
        header, data = load_field(path)
        return cls(data[:, 0], header["kind"])


def save_field(path: str | Path, data: np.ndarray, T: int, components: list[str], kind: str,
               units: str, precision: str = "f32") -> None:
    """Per-vertex columns ``(n, T * len(components))``, time-major inside each row."""
    header = {"n": int(data.shape[0]), "T": int(T), "components": components, "kind": kind,
              "units": units, "precision": precision}
    write_container(path, header, {"data": np.asarray(data).astype(precision_dtype(precision))})


def load_field(path: str | Path) -> tuple[dict, np.ndarray]:
    header, arrays = read_container(path)
    for key in ("n", "T", "components", "kind", "units"):
        if key not in header:
            raise ValueError(f"{path}: field header lacks {key!r}")
    return header, arrays["data"].astype(np.float64)


def _as_tau(field) -> np.ndarray:
    return field.tau if isinstance(field, TransientWssField) else np.asarray(field, dtype=np.float64)


def tawss(field) -> MarkerField:
    tau = _as_tau(field)
    return MarkerField(np.linalg.norm(tau, axis=-1).mean(axis=0), "TAWSS")


def osi(field) -> MarkerField:
    tau = _as_tau(field)
    mean_mag = np.linalg.norm(tau, axis=-1).mean(axis=0)
    mag_mean = np.linalg.norm(tau.mean(axis=0), axis=-1)
    ok = mean_mag >= ZERO_EPS
    ratio = np.where(ok, mag_mean / np.where(ok, mean_mag, 1.0), 1.0)
    # guard rounding so the value stays inside [0, 0.5]
    return MarkerField(np.clip(0.5 * (1.0 - ratio), 0.0, 0.5), "OSI")


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cosines of vector pairs along the last axis and the mask of pairs where both are nonzero."""
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    ok = (na >= ZERO_EPS) & (nb >= ZERO_EPS)
    denom = np.where(ok, na * nb, 1.0)
    return np.where(ok, (a * b).sum(-1) / denom, 0.0), ok


def metrics(pred, truth) -> dict[str, float]:
    """MAE (Pa), NMAE, mean cosine similarity and approximation disparity."""
    p, t = _as_tau(pred), _as_tau(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    diff = np.linalg.norm(t - p, axis=-1)
    tn = np.linalg.norm(t, axis=-1)
    peak = tn.max() if tn.size else 0.0
    if not peak > 0:
        raise ValueError("reference field is identically zero; NMAE and disparity are undefined")
    cos, ok = cosine_similarity(p, t)
    mae = float(diff.mean())
    return {
        "mae": mae,
        "nmae": mae / float(peak),
        "cos_similarity": float(cos[ok].mean()) if ok.any() else float("nan"),
        "approx_disp": float(np.sqrt((diff ** 2).sum() / (tn ** 2).sum())),
    }


def scalar_metrics(pred, truth) -> dict[str, float]:
    p = pred.values if isinstance(pred, MarkerField) else np.asarray(pred, dtype=np.float64)
    t = truth.values if isinstance(truth, MarkerField) else np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch {p.shape} vs {t.shape}")
    denom = (t ** 2).sum()
    if not denom > 0:
        raise ValueError("reference marker is identically zero; disparity is undefined")
    d = np.abs(p - t)
    return {"mae": float(d.mean()), "approx_disp": float(np.sqrt((d ** 2).sum() / denom))}


QUARTILES = {"Q1": 0.25, "Q2": 0.5, "Q3": 0.75}


def quartile(values, which: str) -> float:
    """Linear interpolation between order statistics (numpy's default, type 7)."""
    v = values.values if isinstance(values, MarkerField) else np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot take a quartile of an empty field")
    return float(np.quantile(v, QUARTILES[which], method="linear"))


def quartile_trajectory(series, which: str) -> np.ndarray:
    if len(series) == 0:
        raise ValueError("empty series")
    return np.array([quartile(f, which) for f in series])


def trajectory_mae(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("trajectories differ in length")
    return float(np.abs(a - b).mean())


def region_metrics(pred, truth, mask) -> dict[str, float]:
    mask = np.asarray(mask, dtype=bool)
    p, t = _as_tau(pred), _as_tau(truth)
    if mask.shape != (t.shape[1],):
        raise ValueError(f"mask length {mask.shape} does not match {t.shape[1]} points")
    if not mask.any():
        raise ValueError("evaluation region is empty")
    return metrics(p[:, mask], t[:, mask])
