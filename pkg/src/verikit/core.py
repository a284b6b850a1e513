"""Fundamental data types: images, boxes, flow fields, detections, datasets.

All pixel intensities live in [0, 1] as floats; 8-bit sources are divided
by 255 on ingestion. Coordinates are continuous, with (u, v) = (column, row).
Every type is immutable after construction, so instances can be shared
freely across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class VerikitError(Exception):
    """Base class for all toolkit errors."""


class EmptyCropError(VerikitError):
    """Requested crop has no overlap with the source image."""


def mix_seed(*parts: int) -> int:
    """Derive a 64-bit seed from a sequence of integers (splitmix64 mix).

    Used to give every (detection, template) verification call its own
    deterministic random stream, independent of evaluation order.
    """
    mask = (1 << 64) - 1
    z = 0x9E3779B97F4A7C15
    for p in parts:
        z = (z + (int(p) & mask) + 0x9E3779B97F4A7C15) & mask
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        z = z ^ (z >> 31)
    return z & mask


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Image:
    """Dense H x W x C intensity grid with intensities in [0, 1].

    `data` is row-major (height, width, channels) float64; channels is
    1 (gray) or 3 (RGB).
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"image must be (H, W, 1|3), got shape {arr.shape}")
        if arr.size == 0:
            raise ValueError("image must be non-empty")
        if not np.isfinite(arr).all():
            raise ValueError("image intensities must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Image":
        """Build an image from a float array in [0,1] or a uint8 array."""
        arr = np.asarray(arr)
        if arr.dtype == np.uint8:
            arr = arr.astype(np.float64) / 255.0
        return cls(np.asarray(arr, dtype=np.float64))

    @classmethod
    def zeros(cls, width: int, height: int, channels: int = 3) -> "Image":
        return cls(np.zeros((height, width, channels)))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in continuous pixel coordinates, x_min < x_max."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("box coordinates must be finite")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {vals}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def shifted(self, dx: float, dy: float) -> "Box":
        return Box(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def contains(self, u: float, v: float) -> bool:
        """Boundary-inclusive point test."""
        return self.x_min <= u <= self.x_max and self.y_min <= v <= self.y_max

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


def iou(a: Box, b: Box) -> float:
    """Intersection area over union area; 0 when disjoint.

    Areas are computed analytically from the continuous coordinates, with
    no pixel discretization.
    """
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class FlowField:
    """Per-pixel 2D mapping from template coordinates to scene-crop coordinates.

    `targets[v, u]` holds the continuous (u2, v2) a template pixel (u, v)
    maps to; `valid[v, u]` marks entries that carry coordinate semantics.
    Invalid entries are excluded from all statistics.
    """

    targets: np.ndarray  # (height, width, 2) float64
    valid: np.ndarray  # (height, width) bool

    def __post_init__(self):
        t = np.asarray(self.targets, dtype=np.float64)
        v = np.asarray(self.valid, dtype=bool)
        if t.ndim != 3 or t.shape[2] != 2:
            raise ValueError(f"flow targets must be (H, W, 2), got {t.shape}")
        if v.shape != t.shape[:2]:
            raise ValueError("validity mask shape must match flow dimensions")
        if not np.isfinite(t[v]).all():
            raise ValueError("valid flow targets must be finite")
        object.__setattr__(self, "targets", _freeze(t))
        object.__setattr__(self, "valid", _freeze(v))

    @property
    def height(self) -> int:
        return self.targets.shape[0]

    @property
    def width(self) -> int:
        return self.targets.shape[1]

    @property
    def valid_count(self) -> int:
        return int(self.valid.sum())

    def valid_sources(self) -> np.ndarray:
        """(N, 2) array of valid template coordinates (u, v), row-major order."""
        vv, uu = np.nonzero(self.valid)
        return np.stack([uu, vv], axis=1).astype(np.float64)

    def valid_targets(self) -> np.ndarray:
        """(N, 2) array of target coordinates for the valid entries."""
        return self.targets[self.valid]

    @classmethod
    def identity(cls, width: int, height: int) -> "FlowField":
        uu, vv = np.meshgrid(np.arange(width), np.arange(height))
        t = np.stack([uu, vv], axis=2).astype(np.float64)
        return cls(t, np.ones((height, width), dtype=bool))


@dataclass(frozen=True)
class Detection:
    """A proposed detection: scene box, proposed class, base-detector confidence."""

    detection_id: int
    class_id: int
    box: Box
    confidence: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class TemplateSet:
    """Ordered template viewpoints for one object class, with optional masks."""

    class_id: int
    templates: tuple[Image, ...]
    masks: Optional[tuple[Optional[np.ndarray], ...]] = None

    def __post_init__(self):
        templates = tuple(self.templates)
        if len(templates) == 0:
            raise ValueError("a template set needs at least one template")
        object.__setattr__(self, "templates", templates)
        if self.masks is not None:
            masks = tuple(
                None if m is None else _freeze(np.asarray(m, dtype=bool))
                for m in self.masks
            )
            if len(masks) != len(templates):
                raise ValueError("one mask entry per template required")
            for m, t in zip(masks, templates):
                if m is not None and m.shape != (t.height, t.width):
                    raise ValueError("mask shape must match its template")
            object.__setattr__(self, "masks", masks)

    def __len__(self) -> int:
        return len(self.templates)


@dataclass(frozen=True)
class SceneRecord:
    """One evaluation unit: a scene, its annotations, detections, and flows.

    `flows` maps (detection_id, class_id, template_index) to the dense
    correspondence between that template and the detection's square crop.
    """

    scene: Image
    ground_truth: tuple[tuple[Box, int], ...]
    detections: tuple[Detection, ...]
    flows: dict[tuple[int, int, int], FlowField] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "ground_truth", tuple(self.ground_truth))
        object.__setattr__(self, "detections", tuple(self.detections))
        ids = {d.detection_id for d in self.detections}
        if len(ids) != len(self.detections):
            raise ValueError("detection ids must be unique within a scene")
        for key in self.flows:
            det_id, _, t_idx = key
            if det_id not in ids:
                raise ValueError(f"flow key {key} references unknown detection")
            if t_idx < 0:
                raise ValueError(f"flow key {key} has a negative template index")

    def flows_for(self, detection: Detection, n_templates: int) -> list[Optional[FlowField]]:
        """Per-template flow list for a detection's proposed class (None = missing)."""
        return [
            self.flows.get((detection.detection_id, detection.class_id, i))
            for i in range(n_templates)
        ]


def square_crop_box(box: Box) -> tuple[int, int, int]:
    """Integer (x0, y0, side) of the square crop centered on `box`.

    The side is max(width, height) rounded up to whole pixels; the square
    is centered on the box center with half-up rounding of the origin.
    """
    side = math.ceil(max(box.width, box.height))
    if side <= 0:
        raise EmptyCropError("empty crop")
    cx, cy = box.center
    x0 = math.floor(cx - side / 2.0 + 0.5)
    y0 = math.floor(cy - side / 2.0 + 0.5)
    return x0, y0, side


def box_to_crop_frame(box: Box, crop_origin: tuple[int, int]) -> Box:
    """Express a scene-frame box in the coordinates of a crop at `crop_origin`."""
    x0, y0 = crop_origin
    return box.shifted(-x0, -y0)


def crop_to_square(scene: Image, box: Box) -> Image:
    """Square crop of the scene centered on `box`, zero-padded out of bounds.

    The shorter box axis is padded symmetrically so the output side equals
    max(box width, box height), rounded up to whole pixels.
    """
    if (
        box.x_max <= 0
        or box.y_max <= 0
        or box.x_min >= scene.width
        or box.y_min >= scene.height
    ):
        raise EmptyCropError("empty crop")
    x0, y0, side = square_crop_box(box)
    out = np.zeros((side, side, scene.channels))
    src_x0, src_y0 = max(x0, 0), max(y0, 0)
    src_x1, src_y1 = min(x0 + side, scene.width), min(y0 + side, scene.height)
    if src_x0 < src_x1 and src_y0 < src_y1:
        out[src_y0 - y0 : src_y1 - y0, src_x0 - x0 : src_x1 - x0] = scene.data[
            src_y0:src_y1, src_x0:src_x1
        ]
    return Image(out)


def splat_flow(
    template: Image, flow: FlowField, target_size: tuple[int, int]
) -> tuple[Image, np.ndarray]:
    """Forward-warp a template through a flow field.

    Each valid template pixel is written to its rounded target coordinate,
    last writer wins in row-major template order. Returns the warped image
    of `target_size` = (width, height) and the boolean mask of written
    pixels; unwritten pixels are 0.
    """
    if (flow.height, flow.width) != (template.height, template.width):
        raise ValueError("flow dimensions must equal template dimensions")
    tw, th = target_size
    out = np.zeros((th, tw, template.channels))
    written = np.zeros((th, tw), dtype=bool)
    if flow.valid_count == 0:
        return Image(out), written
    src = flow.valid_sources().astype(np.intp)
    dst = flow.valid_targets()
    # Half-up rounding keeps splat targets platform-stable.
    du = np.floor(dst[:, 0] + 0.5).astype(np.intp)
    dv = np.floor(dst[:, 1] + 0.5).astype(np.intp)
    inside = (du >= 0) & (du < tw) & (dv >= 0) & (dv < th)
    su, sv = src[inside, 0], src[inside, 1]
    du, dv = du[inside], dv[inside]
    # numpy fancy assignment stores the last value for duplicate indices,
    # which matches row-major last-writer-wins because valid_sources() is
    # row-major.
    out[dv, du] = template.data[sv, su]
    written[dv, du] = True
    return Image(out), written


def apply_flow(template: Image, flow: FlowField, target_size: tuple[int, int]) -> Image:
    """Warped image only; see `splat_flow` for the written-pixel mask."""
    return splat_flow(template, flow, target_size)[0]
