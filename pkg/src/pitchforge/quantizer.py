"""Speaker-adaptive 128-class F0 quantization.

Bin 0 is reserved for unvoiced frames; the remaining 127 bins evenly divide
the band from 4 standard deviations below to 4 above the speaker's mean F0,
measured in base-2 log space. Out-of-range voiced frequencies clamp to the
edge bins so mismatched speaker stats degrade gracefully.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pitch import F0Contour, SpeakerStats

N_CLASSES = 128
UNVOICED_BIN = 0


@dataclass(frozen=True)
class QuantGrid:
    """Immutable quantization grid in log2-Hz."""

    mu: float
    sigma: float
    n_bins: int = N_CLASSES

    def __post_init__(self):
        if not np.isfinite(self.mu) or self.sigma <= 0:
            raise ValueError("grid needs finite mu and positive sigma")

    @property
    def lo(self) -> float:
        return self.mu - 4.0 * self.sigma

    @property
    def hi(self) -> float:
        return self.mu + 4.0 * self.sigma

    @property
    def n_voiced_bins(self) -> int:
        return self.n_bins - 1

    @property
    def bin_width(self) -> float:
        return (self.hi - self.lo) / self.n_voiced_bins

    def centers(self) -> np.ndarray:
        """log2-Hz centers of voiced bins 1..n_bins-1."""
        k = np.arange(1, self.n_bins)
        return self.lo + (k - 0.5) * self.bin_width

    def to_dict(self) -> dict:
        return {"mu": self.mu, "sigma": self.sigma, "n_bins": self.n_bins}

    @classmethod
    def from_dict(cls, doc: dict) -> "QuantGrid":
        return cls(mu=float(doc["mu"]), sigma=float(doc["sigma"]), n_bins=int(doc.get("n_bins", N_CLASSES)))


def build_grid(stats: SpeakerStats, n_bins: int = N_CLASSES) -> QuantGrid:
    return QuantGrid(mu=stats.mu, sigma=stats.sigma, n_bins=n_bins)


def quantize(contour: F0Contour, grid: QuantGrid) -> np.ndarray:
    """Map a contour to bin indices; unvoiced frames become bin 0."""
    bins = np.zeros(len(contour), dtype=np.int64)
    voiced = contour.voiced
    if np.any(voiced):
        rel = (np.log2(contour.hz[voiced]) - grid.lo) / (grid.hi - grid.lo)
        k = 1 + np.floor(rel * grid.n_voiced_bins).astype(np.int64)
        bins[voiced] = np.clip(k, 1, grid.n_voiced_bins)
    return bins


def dequantize(bins: np.ndarray, grid: QuantGrid) -> F0Contour:
    """Map bin indices back to a contour using voiced bin centers."""
    bins = np.asarray(bins, dtype=np.int64)
    if np.any(bins < 0) or np.any(bins >= grid.n_bins):
        raise ValueError(f"bin index out of range [0, {grid.n_bins})")
    voiced = bins != UNVOICED_BIN
    log_hz = grid.lo + (bins - 0.5) * grid.bin_width
    hz = np.where(voiced, np.power(2.0, log_hz, where=voiced, out=np.zeros_like(log_hz)), 0.0)
    return F0Contour(hz=hz, voiced=voiced)
