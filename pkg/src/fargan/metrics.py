"""Mode coverage, close pairs and loss-deviation diagnostics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

D_LOSS_EQUILIBRIUM = 2 * math.log(2)
G_LOSS_EQUILIBRIUM = math.log(2)


@dataclass
class ModeCoverageReport:
    covered: int
    counts: list[int]
    hq_ratio: float

    @property
    def n_modes(self) -> int:
        return len(self.counts)

    @property
    def max_share(self) -> float:
        total = sum(self.counts)
        return max(self.counts) / total if total else 0.0


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def mode_coverage(
    fakes: np.ndarray,
    centers: np.ndarray,
    mode_std: float,
    cover_radius_mult: float = 3.0,
    min_count: int = 20,
) -> ModeCoverageReport:
    """Assign each fake to its nearest center; a mode is covered when at least
    ``min_count`` of its fakes lie within ``cover_radius_mult * mode_std``."""
    centers = np.asarray(centers, dtype=np.float64)
    if len(centers) == 0:
        raise ValueError("mode_coverage needs at least one mode center")
    fakes = np.asarray(fakes, dtype=np.float64).reshape(-1, 2)
    radius2 = (cover_radius_mult * mode_std) ** 2
    counts = np.zeros(len(centers), dtype=int)
    hits = 0
    for start in range(0, len(fakes), 4096):
        d2 = _sq_dists(fakes[start:start + 4096], centers)
        near = d2.argmin(axis=1)
        inside = d2[np.arange(len(near)), near] <= radius2
        counts += np.bincount(near[inside], minlength=len(centers))
        hits += int(inside.sum())
    covered = int((counts >= min_count).sum())
    ratio = hits / len(fakes) if len(fakes) else 0.0
    return ModeCoverageReport(covered, counts.tolist(), ratio)


@dataclass(frozen=True)
class ClosePairConfig:
    delta: float = 0.05
    min_source_count: int = 2

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.min_source_count < 1:
            raise ValueError("min_source_count must be >= 1")


@dataclass
class ClosePairStats:
    pairs: int
    sources: int
    max_fakes_per_source: int
    pair_index: np.ndarray = field(repr=False)  # (pairs, 2): real idx, fake idx
    surrogates: np.ndarray = field(repr=False)  # |D0(x)-D0(y)| / ||x-y||

    @property
    def surrogate_max(self) -> float:
        return float(self.surrogates.max()) if len(self.surrogates) else 0.0


def min_pairwise_distance(points: np.ndarray) -> float:
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return math.inf
    best = math.inf
    for start in range(0, len(points), 1024):
        d2 = _sq_dists(points[start:start + 1024], points)
        rows = np.arange(d2.shape[0])
        d2[rows, rows + start] = np.inf
        best = min(best, float(d2.min()))
    return math.sqrt(best)


def close_pairs(
    reals: np.ndarray,
    fakes: np.ndarray,
    d0_real: np.ndarray,
    d0_fake: np.ndarray,
    cfg: ClosePairConfig = ClosePairConfig(),
    check_separation: bool = True,
) -> ClosePairStats:
    """All real/fake pairs with ||x - y|| <= delta, by brute-force scan."""
    reals = np.asarray(reals, dtype=np.float64).reshape(-1, 2)
    fakes = np.asarray(fakes, dtype=np.float64).reshape(-1, 2)
    d0_real = np.asarray(d0_real, dtype=np.float64).ravel()
    d0_fake = np.asarray(d0_fake, dtype=np.float64).ravel()
    if len(d0_real) != len(reals) or len(d0_fake) != len(fakes):
        raise ValueError("discriminator outputs are not aligned with the point sets")
    if check_separation:
        sep = min_pairwise_distance(reals)
        if cfg.delta >= sep:
            warnings.warn(
                f"delta={cfg.delta} is not small against the minimum real spacing {sep:.3g}",
                stacklevel=2,
            )
    d2max = cfg.delta * cfg.delta
    ri_all, fi_all, dist_all = [], [], []
    for start in range(0, len(fakes), 2048):
        d2 = _sq_dists(reals, fakes[start:start + 2048])
        ri, fi = np.nonzero(d2 <= d2max)
        ri_all.append(ri)
        fi_all.append(fi + start)
        dist_all.append(np.sqrt(d2[ri, fi]))
    ri = np.concatenate(ri_all) if ri_all else np.zeros(0, dtype=int)
    fi = np.concatenate(fi_all) if fi_all else np.zeros(0, dtype=int)
    dist = np.concatenate(dist_all) if dist_all else np.zeros(0)
    with np.errstate(divide="ignore", invalid="ignore"):
        diff = np.abs(d0_real[ri] - d0_fake[fi])
        # coincident points: the finite-distance surrogate is undefined, report 0
        # when outputs agree and inf otherwise
        sur = np.where(dist > 0, diff / np.where(dist > 0, dist, 1.0), np.where(diff > 0, np.inf, 0.0))
    per_real = np.bincount(ri, minlength=len(reals))
    is_source = per_real >= cfg.min_source_count
    max_per = int(per_real[is_source].max()) if is_source.any() else 0
    return ClosePairStats(
        pairs=int(len(ri)),
        sources=int(is_source.sum()),
        max_fakes_per_source=max_per,
        pair_index=np.stack([ri, fi], axis=1),
        surrogates=sur,
    )


@dataclass
class LossDeviation:
    d_window_dev: list[float]  # mean(d_loss - 2 log 2) per window
    g_window_dev: list[float]  # mean(g_loss - log 2) per window
    d_mad: list[float]  # mean |d_loss - 2 log 2| per window
    g_mad: list[float]
    collapse_flag: bool


def loss_deviation(
    d_loss,
    g_loss,
    window: int | None = None,
    n_windows: int = 10,
    threshold: float = 0.5,
    sustain: int = 3,
) -> LossDeviation:
    """Windowed deviation of losses from the equilibrium values 2 log 2 and log 2.

    The collapse flag is raised when each of the trailing ``sustain`` windows
    shows the discriminator loss below equilibrium by more than ``threshold``
    while the generator loss is above it by more than ``threshold``.
    """
    d = np.asarray(d_loss, dtype=np.float64).ravel()
    g = np.asarray(g_loss, dtype=np.float64).ravel()
    if len(d) == 0 or len(d) != len(g):
        raise ValueError("loss traces must be nonempty and of equal length")
    if window is None:
        window = max(1, len(d) // n_windows)
    if window >= len(d):
        bounds = [(0, len(d))]
    else:
        starts = range(0, len(d) - window + 1, window)
        bounds = [(s, s + window) for s in starts]
        # fold a short tail into the last window
        bounds[-1] = (bounds[-1][0], len(d))
    dd = d - D_LOSS_EQUILIBRIUM
    gg = g - G_LOSS_EQUILIBRIUM
    d_dev = [float(dd[a:b].mean()) for a, b in bounds]
    g_dev = [float(gg[a:b].mean()) for a, b in bounds]
    d_mad = [float(np.abs(dd[a:b]).mean()) for a, b in bounds]
    g_mad = [float(np.abs(gg[a:b]).mean()) for a, b in bounds]
    tail = min(sustain, len(bounds))
    flag = all(
        d_dev[i] < -threshold and g_dev[i] > threshold for i in range(len(bounds) - tail, len(bounds))
    )
    return LossDeviation(d_dev, g_dev, d_mad, g_mad, flag)
