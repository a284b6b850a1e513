"""Photometric similarity and distance functions.

Normalized cross-correlation pools all channels of the counted pixels into
one sample vector, so it stays well-defined when a single channel is flat.
The distance metrics are the ones whose axioms (triangle inequality,
permutational invariance) the rigidity theory relies on; `l_inf` and `l_p`
satisfy both, `ncc_distance` is a monotone surrogate kept for comparison
runs only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Image

_VARIANCE_EPS = 1e-12


@dataclass(frozen=True)
class DistanceMetricKind:
    """Tagged choice of image distance: l_inf, l_p(p >= 1), or ncc_distance."""

    kind: str
    p: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("l_inf", "l_p", "ncc_distance"):
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.kind == "l_p":
            if self.p is None or self.p < 1.0:
                raise ValueError("l_p requires exponent p >= 1")
        elif self.p is not None:
            raise ValueError(f"{self.kind} takes no exponent")

    @classmethod
    def l_inf(cls) -> "DistanceMetricKind":
        return cls("l_inf")

    @classmethod
    def l_p(cls, p: float) -> "DistanceMetricKind":
        return cls("l_p", float(p))

    @classmethod
    def ncc_distance(cls) -> "DistanceMetricKind":
        return cls("ncc_distance")

    def __str__(self) -> str:
        return f"l_{self.p:g}" if self.kind == "l_p" else self.kind


def _pooled_samples(img: Image, mask: Optional[np.ndarray]) -> np.ndarray:
    if mask is None:
        return img.data.reshape(-1)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (img.height, img.width):
        raise ValueError("mask shape must match image dimensions")
    return img.data[mask].reshape(-1)


def ncc_flagged(
    a: Image, b: Image, mask: Optional[np.ndarray] = None
) -> tuple[float, bool]:
    """Pearson correlation of pooled pixel intensities plus an informativeness flag.

    Returns (score, informative). With fewer than 2 counted pixels, or zero
    variance in either image, the score is the sentinel 0 ("uninformative")
    and the flag is False; a flat crop then fails the color test by default
    instead of crashing a batch run.
    """
    if (a.height, a.width, a.channels) != (b.height, b.width, b.channels):
        raise ValueError("images must have identical dimensions")
    x = _pooled_samples(a, mask)
    y = _pooled_samples(b, mask)
    n_pixels = x.size // a.channels
    if n_pixels < 2:
        return 0.0, False
    xc = x - x.mean()
    yc = y - y.mean()
    vx = float(np.dot(xc, xc))
    vy = float(np.dot(yc, yc))
    if vx < _VARIANCE_EPS or vy < _VARIANCE_EPS:
        return 0.0, False
    r = float(np.dot(xc, yc)) / np.sqrt(vx * vy)
    return float(np.clip(r, -1.0, 1.0)), True


def ncc(a: Image, b: Image, mask: Optional[np.ndarray] = None) -> float:
    """Normalized cross-correlation in [-1, 1]; 0 when uninformative."""
    return ncc_flagged(a, b, mask)[0]


def image_distance(kind: DistanceMetricKind, a: Image, b: Image) -> float:
    """Nonnegative distance between two same-sized images under `kind`."""
    if (a.height, a.width, a.channels) != (b.height, b.width, b.channels):
        raise ValueError("images must have identical dimensions")
    if kind.kind == "ncc_distance":
        return 1.0 - ncc(a, b)
    diff = (a.data - b.data).reshape(-1)
    if kind.kind == "l_inf":
        return float(np.abs(diff).max())
    p = float(kind.p)  # type: ignore[arg-type]
    return float(np.sum(np.abs(diff) ** p) ** (1.0 / p))
