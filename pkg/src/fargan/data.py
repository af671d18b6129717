"""Finite 2-D training sets and latent sampling."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KINDS = ("single-gaussian", "ring-8", "grid-25", "swissroll")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "single-gaussian"
    n_real: int = 512
    seed: int = 0
    mean: tuple[float, float] = (0.0, 0.0)
    std: float | None = None  # per-kind default when None
    radius: float = 2.0
    spacing: float = 2.0
    noise: float = 0.02

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}; expected one of {KINDS}")
        if self.n_real <= 0:
            raise ValueError("n_real must be positive")
        if self.std is not None and self.std < 0:
            raise ValueError("std must be non-negative")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")

    @property
    def mode_std(self) -> float:
        if self.std is not None:
            return self.std
        return {"single-gaussian": 1.0, "ring-8": 0.02, "grid-25": 0.05, "swissroll": 0.02}[self.kind]


@dataclass(frozen=True)
class RealDataset:
    points: np.ndarray
    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    spec: DatasetSpec | None = None

    def __post_init__(self):
        self.points.setflags(write=False)
        self.centers.setflags(write=False)

    def __len__(self):
        return self.points.shape[0]

    def to_csv(self, path) -> None:
        write_points_csv(path, self.points)


def write_points_csv(path, points: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for x, y in points:
            w.writerow([f"{x:.17g}", f"{y:.17g}"])


def read_points_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["x", "y"]:
        raise ValueError(f"{path}: expected header x,y")
    return np.array([[float(a), float(b)] for a, b in rows[1:]], dtype=np.float64).reshape(-1, 2)


def mode_centers(spec: DatasetSpec) -> np.ndarray:
    if spec.kind == "single-gaussian":
        return np.array([spec.mean], dtype=np.float64)
    if spec.kind == "ring-8":
        ang = 2 * np.pi * np.arange(8) / 8
        return spec.radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if spec.kind == "grid-25":
        ticks = spec.spacing * np.arange(-2, 3)
        return np.array([[x, y] for x in ticks for y in ticks], dtype=np.float64)
    return np.zeros((0, 2))


def generate_real(spec: DatasetSpec) -> RealDataset:
    rng = np.random.default_rng(spec.seed)
    n = spec.n_real
    centers = mode_centers(spec)
    if spec.kind == "swissroll":
        t = rng.uniform(1.5 * np.pi, 4.5 * np.pi, size=n)
        pts = np.stack([t * np.cos(t), t * np.sin(t)], axis=1)
        pts = pts * (2.0 / (4.5 * np.pi))  # max radius maps to 2
        pts = pts + spec.noise * rng.standard_normal((n, 2))
    else:
        idx = rng.integers(0, len(centers), size=n)
        pts = centers[idx] + spec.mode_std * rng.standard_normal((n, 2))
    return RealDataset(np.ascontiguousarray(pts), centers, spec)


def sample_real_batch(ds: RealDataset, count: int, rng: np.random.Generator) -> np.ndarray:
    """Rows drawn uniformly with replacement."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return ds.points[rng.integers(0, len(ds), size=count)]


def sample_latent(count: int, rng: np.random.Generator, dim: int = 2) -> np.ndarray:
    return rng.standard_normal((count, dim))
