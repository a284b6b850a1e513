"""Brute-force dense correspondence for small images.

Every template patch is compared against every crop patch by normalized
cross-correlation, computed as one big normalized-row matrix product. This
is the self-contained fallback matcher: quadratic in pixel count, so it is
capped at 128 x 128 inputs, but it needs no learned model.
"""

from __future__ import annotations

import numpy as np

from .core import FlowField, Image

MAX_SIDE = 128


def _patch_matrix(img: Image, radius: int) -> np.ndarray:
    """(H*W, patch_pixels*C) matrix of zero-mean, unit-norm local patches."""
    k = 2 * radius + 1
    padded = np.pad(img.data, ((radius, radius), (radius, radius), (0, 0)), mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(0, 1))
    # windows: (H, W, C, k, k) -> rows of flattened patches
    flat = windows.reshape(img.height * img.width, img.channels * k * k)
    flat = flat - flat.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(flat, axis=1, keepdims=True)
    return flat / np.maximum(norms, 1e-12)


def exhaustive_ncc_flow(template: Image, crop: Image, patch_radius: int = 3) -> FlowField:
    """Dense flow by exhaustive patch-NCC matching of template into crop.

    Each template pixel maps to the crop pixel whose surrounding patch
    correlates best (ties to the lowest row-major crop index). All entries
    are valid. Inputs larger than 128 pixels on a side are refused.
    """
    if max(template.width, template.height, crop.width, crop.height) > MAX_SIDE:
        raise ValueError(f"exhaustive matching is capped at {MAX_SIDE}^2 images")
    if template.channels != crop.channels:
        raise ValueError("template and crop must have the same channel count")
    tpl = _patch_matrix(template, patch_radius).astype(np.float32)
    crp = _patch_matrix(crop, patch_radius).astype(np.float32)

    best_idx = np.empty(tpl.shape[0], dtype=np.int64)
    chunk = max(1, (64 << 20) // max(crp.shape[0] * 4, 1))  # ~64 MB of scores at a time
    for start in range(0, tpl.shape[0], chunk):
        scores = tpl[start : start + chunk] @ crp.T
        best_idx[start : start + chunk] = np.argmax(scores, axis=1)

    tu = (best_idx % crop.width).astype(np.float64)
    tv = (best_idx // crop.width).astype(np.float64)
    targets = np.stack([tu, tv], axis=1).reshape(template.height, template.width, 2)
    valid = np.ones((template.height, template.width), dtype=bool)
    return FlowField(targets, valid)
