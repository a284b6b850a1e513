"""Synthetic scenes and datasets with exact ground-truth flow.

Two generators live here. `compose_scene`/`make_detection_suite` build
detection-style evaluation suites: textured objects warped into background
scenes with randomized lighting and blur, true detections with oracle
flows, and injected false positives. `build_assumption_dataset` builds the
datasets the zero-false-positive harness runs on, where every premise
(dense dataset, classifier smoothness) is machine-checkable by
construction: the rigid family is the 8 symmetries of the square pixel
grid, which are simultaneously exact pixel permutations and exact
homographies.

Rendering uses backward bilinear sampling for image quality; ground-truth
flow is the exact forward analytic mapping. The two are deliberately
separate concerns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import (
    Box,
    Detection,
    FlowField,
    Image,
    SceneRecord,
    TemplateSet,
    VerikitError,
    box_to_crop_frame,
    crop_to_square,
    iou,
    mix_seed,
    square_crop_box,
)
from .geometry import Homography
from .verify import TheoreticalConfig, theoretical_flow_verify

__version_tag__ = 1  # bumped when generator output changes for a fixed seed


class PlacementError(VerikitError):
    """A placement's warped footprint leaves the background bounds."""


class ConstraintUnsatisfiableError(VerikitError):
    """Corner-ordering constraint could not be satisfied within the retry budget."""


# ---------------------------------------------------------------------------
# Square-grid symmetry group (rotations by multiples of 90 degrees + flips)
# ---------------------------------------------------------------------------

DIHEDRAL_ORDER = 8

_ROT = np.array([[0, -1], [1, 0]])  # quarter turn in (u, v)
_FLIP = np.array([[-1, 0], [0, 1]])  # horizontal mirror


def _dihedral_linear(k: int) -> np.ndarray:
    if not 0 <= k < DIHEDRAL_ORDER:
        raise ValueError(f"symmetry index must be in [0, 8), got {k}")
    a = np.eye(2, dtype=np.int64)
    if k >= 4:
        a = _FLIP @ a
    for _ in range(k % 4):
        a = _ROT @ a
    return a


def dihedral_homography(k: int, size: int) -> Homography:
    """Exact integer homography of grid symmetry `k` on a size x size grid."""
    a = _dihedral_linear(k)
    c = (size - 1) / 2.0
    b = np.array([c, c]) - a @ np.array([c, c])
    h = np.eye(3)
    h[:2, :2] = a
    h[:2, 2] = b
    return Homography(h)


def dihedral_flow(k: int, size: int) -> FlowField:
    """Flow field sending every grid pixel to its image under symmetry `k`."""
    a = _dihedral_linear(k)
    c = (size - 1) / 2.0
    b = np.array([c, c]) - a @ np.array([c, c])
    uu, vv = np.meshgrid(np.arange(size), np.arange(size))
    pts = np.stack([uu, vv], axis=-1).astype(np.float64)
    targets = pts @ a.T.astype(np.float64) + b
    return FlowField(targets, np.ones((size, size), dtype=bool))


def dihedral_apply(arr: np.ndarray, k: int) -> np.ndarray:
    """Apply grid symmetry `k` to an (S, S, C) array, exactly."""
    size = arr.shape[0]
    if arr.shape[1] != size:
        raise ValueError("dihedral symmetries act on square arrays")
    a = _dihedral_linear(k)
    inv = np.linalg.inv(a).astype(np.int64)
    c = (size - 1) / 2.0
    b = np.array([c, c]) - a @ np.array([c, c])
    uu, vv = np.meshgrid(np.arange(size), np.arange(size))
    dst = np.stack([uu, vv], axis=-1)
    src = (dst - b.astype(np.int64)) @ inv.T
    return arr[src[..., 1], src[..., 0]]


# ---------------------------------------------------------------------------
# Transform specifications and scene composition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransformSpec:
    """Geometric placement plus photometric perturbation for one object.

    `homography` maps template pixel coordinates into the output frame
    (the full placement map for scene composition, or the unit-square map
    as produced by `random_transform` before placement). Lighting is a
    per-channel gain and bias; blur is a Gaussian sigma in pixels.
    """

    kind: str  # "affine" or "homography"
    homography: Homography
    gains: tuple[float, float, float] = (1.0, 1.0, 1.0)
    biases: tuple[float, float, float] = (0.0, 0.0, 0.0)
    blur_sigma: float = 0.0
    rotation: Optional[float] = None
    translation: Optional[tuple[float, float]] = None
    scale: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("affine", "homography"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if any(g <= 0.0 for g in self.gains):
            raise ValueError("lighting gains must be > 0")
        if self.blur_sigma < 0.0:
            raise ValueError("blur sigma must be >= 0")

    @classmethod
    def from_affine(
        cls,
        rotation: float,
        translation: tuple[float, float],
        scale: float,
        template_size: tuple[int, int],
        gains=(1.0, 1.0, 1.0),
        biases=(0.0, 0.0, 0.0),
        blur_sigma: float = 0.0,
    ) -> "TransformSpec":
        """Rotation about the template center, scaling, then translation."""
        if scale <= 0.0:
            raise ValueError("scale must be > 0")
        w, h = template_size
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
        cos_t, sin_t = math.cos(rotation), math.sin(rotation)
        a = scale * np.array([[cos_t, -sin_t], [sin_t, cos_t]])
        b = np.array([cx + translation[0], cy + translation[1]]) - a @ np.array([cx, cy])
        m = np.eye(3)
        m[:2, :2] = a
        m[:2, 2] = b
        return cls(
            kind="affine",
            homography=Homography(m),
            gains=tuple(gains),
            biases=tuple(biases),
            blur_sigma=blur_sigma,
            rotation=rotation,
            translation=tuple(translation),
            scale=scale,
        )

    @classmethod
    def from_homography(
        cls, h: Homography, gains=(1.0, 1.0, 1.0), biases=(0.0, 0.0, 0.0), blur_sigma=0.0
    ) -> "TransformSpec":
        return cls(
            kind="homography",
            homography=h,
            gains=tuple(gains),
            biases=tuple(biases),
            blur_sigma=blur_sigma,
        )

    def with_homography(self, h: Homography) -> "TransformSpec":
        return TransformSpec(
            kind=self.kind,
            homography=h,
            gains=self.gains,
            biases=self.biases,
            blur_sigma=self.blur_sigma,
            rotation=self.rotation,
            translation=self.translation,
            scale=self.scale,
        )


_UNIT_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
_CORNER_RETRIES = 100


def random_transform(
    corner_jitter: float,
    lighting_range: tuple[tuple[float, float], tuple[float, float]] = ((0.8, 1.25), (-0.05, 0.05)),
    blur_range: tuple[float, float] = (0.0, 1.5),
    seed: int = 0,
) -> TransformSpec:
    """Random homography on the unit square plus sampled lighting and blur.

    Each corner moves by at most `corner_jitter` of the square diagonal,
    resampling until the corner ordering survives: both left corners stay
    left of both right corners, both top corners stay above both bottom
    ones. The returned homography is in unit-square coordinates; compose
    it with a placement via `placed_spec`.
    """
    if not 0.0 <= corner_jitter < 0.5:
        raise ValueError("corner_jitter must be in [0, 0.5)")
    rng = np.random.default_rng(seed)
    (g_min, g_max), (b_min, b_max) = lighting_range
    gains = tuple(rng.uniform(g_min, g_max, size=3))
    biases = tuple(rng.uniform(b_min, b_max, size=3))
    blur = float(rng.uniform(blur_range[0], blur_range[1]))

    if corner_jitter == 0.0:
        return TransformSpec.from_homography(
            Homography.identity(), gains=gains, biases=biases, blur_sigma=blur
        )
    max_shift = corner_jitter * math.sqrt(2.0)
    for _ in range(_CORNER_RETRIES):
        radius = rng.uniform(0.0, max_shift, size=4)
        angle = rng.uniform(0.0, 2.0 * math.pi, size=4)
        quad = _UNIT_CORNERS + np.stack(
            [radius * np.cos(angle), radius * np.sin(angle)], axis=1
        )
        tl, tr, br, bl = quad
        left_of = max(tl[0], bl[0]) < min(tr[0], br[0])
        above = max(tl[1], tr[1]) < min(bl[1], br[1])
        if not (left_of and above):
            continue
        try:
            h = Homography.from_points(_UNIT_CORNERS, quad)
        except ValueError:
            continue
        return TransformSpec.from_homography(h, gains=gains, biases=biases, blur_sigma=blur)
    raise ConstraintUnsatisfiableError("constraint unsatisfiable")


def placed_spec(
    spec: TransformSpec, template_size: tuple[int, int], target_box: Box
) -> TransformSpec:
    """Rescale a unit-square TransformSpec into template-to-scene coordinates."""
    w, h = template_size
    to_unit = Homography(np.diag([1.0 / max(w - 1, 1), 1.0 / max(h - 1, 1), 1.0]))
    to_box = Homography(
        np.array(
            [
                [target_box.width, 0.0, target_box.x_min],
                [0.0, target_box.height, target_box.y_min],
                [0.0, 0.0, 1.0],
            ]
        )
    )
    full = to_box.compose(spec.homography).compose(to_unit)
    return spec.with_homography(full)


@dataclass(frozen=True)
class Placement:
    template: Image
    spec: TransformSpec
    mask: Optional[np.ndarray] = None
    class_id: int = -1
    template_index: int = -1


@dataclass(frozen=True)
class PlacedObject:
    class_id: int
    template_index: int
    spec: TransformSpec
    box: Box
    flow: FlowField  # template pixel -> scene coordinates, occlusions invalidated


@dataclass(frozen=True)
class SynthScene:
    scene: Image
    placed: tuple[PlacedObject, ...]
    background: Image


def _bilinear(arr: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear samples of an (H, W, C) array at continuous (x, y); 0 outside."""
    h, w = arr.shape[:2]
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    fx = x - x0
    fy = y - y0
    out = np.zeros(x.shape + (arr.shape[2],))
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            weight = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = np.zeros_like(out)
            vals[inside] = arr[yi[inside], xi[inside]]
            out += weight[..., None] * vals
    return out


def compose_scene(
    background: Image, placements: Sequence[Placement], seed: int = 0
) -> SynthScene:
    """Warp, light, blur, and alpha-composite placements over a background.

    Placements are composited in list order, later ones occluding earlier
    ones; occluded template pixels get their flow validity cleared. Each
    placement's spec must already be in template-to-scene coordinates and
    its warped footprint must fit inside the background, otherwise a
    PlacementError names the offending index. `seed` is accepted for
    interface stability; composition is fully determined by its inputs.
    """
    del seed
    out = background.data.copy()
    sh, sw = out.shape[:2]
    footprints: list[np.ndarray] = []
    raw: list[tuple[Placement, np.ndarray, np.ndarray]] = []  # (placement, targets, mask)

    for idx, placement in enumerate(placements):
        tpl = placement.template
        mask = (
            np.ones((tpl.height, tpl.width), dtype=bool)
            if placement.mask is None
            else np.asarray(placement.mask, dtype=bool)
        )
        if mask.shape != (tpl.height, tpl.width):
            raise ValueError(f"placement {idx}: mask shape mismatch")
        hmat = placement.spec.homography.h
        uu, vv = np.meshgrid(np.arange(tpl.width), np.arange(tpl.height))
        src_pts = np.stack([uu, vv, np.ones_like(uu)], axis=-1).astype(np.float64)
        fwd = src_pts @ hmat.T
        targets = fwd[..., :2] / fwd[..., 2:3]
        t = targets[mask]
        if len(t) == 0:
            raise ValueError(f"placement {idx}: empty mask")
        if (
            t[:, 0].min() < -0.5
            or t[:, 1].min() < -0.5
            or t[:, 0].max() >= sw - 0.5
            or t[:, 1].max() >= sh - 0.5
        ):
            raise PlacementError(f"placement {idx} out of bounds")

        # Backward warp over the target bounding region.
        x_lo = max(int(math.floor(t[:, 0].min())) - 2, 0)
        y_lo = max(int(math.floor(t[:, 1].min())) - 2, 0)
        x_hi = min(int(math.ceil(t[:, 0].max())) + 3, sw)
        y_hi = min(int(math.ceil(t[:, 1].max())) + 3, sh)
        gx, gy = np.meshgrid(np.arange(x_lo, x_hi), np.arange(y_lo, y_hi))
        inv = np.linalg.inv(hmat)
        back = np.stack([gx, gy, np.ones_like(gx)], axis=-1).astype(np.float64) @ inv.T
        bx = back[..., 0] / back[..., 2]
        by = back[..., 1] / back[..., 2]
        layer = _bilinear(tpl.data, bx, by)
        alpha = _bilinear(mask[:, :, None].astype(np.float64), bx, by)[..., 0]
        in_tpl = (bx >= 0) & (bx <= tpl.width - 1) & (by >= 0) & (by <= tpl.height - 1)
        alpha = np.where(in_tpl, alpha, 0.0)

        gains = np.array(placement.spec.gains[: tpl.channels])
        biases = np.array(placement.spec.biases[: tpl.channels])
        layer = np.clip(layer * gains + biases, 0.0, 1.0)

        hard = alpha >= 0.5
        if placement.spec.blur_sigma > 0.0:
            layer = gaussian_filter(
                layer, sigma=(placement.spec.blur_sigma, placement.spec.blur_sigma, 0)
            )
            alpha = gaussian_filter(alpha, sigma=placement.spec.blur_sigma)

        region = out[y_lo:y_hi, x_lo:x_hi]
        out[y_lo:y_hi, x_lo:x_hi] = alpha[..., None] * layer + (1.0 - alpha[..., None]) * region

        footprint = np.zeros((sh, sw), dtype=bool)
        footprint[y_lo:y_hi, x_lo:x_hi] = hard
        footprints.append(footprint)
        raw.append((placement, targets, mask))

    placed = []
    for i, (placement, targets, mask) in enumerate(raw):
        valid = mask.copy()
        if i + 1 < len(footprints):
            occluders = np.logical_or.reduce(footprints[i + 1 :])
            tu = np.floor(targets[..., 0] + 0.5).astype(np.intp)
            tv = np.floor(targets[..., 1] + 0.5).astype(np.intp)
            tu = np.clip(tu, 0, sw - 1)
            tv = np.clip(tv, 0, sh - 1)
            valid &= ~occluders[tv, tu]
        rows, cols = np.nonzero(footprints[i])
        box = Box(float(cols.min()), float(rows.min()), float(cols.max() + 1), float(rows.max() + 1))
        placed.append(
            PlacedObject(
                class_id=placement.class_id,
                template_index=placement.template_index,
                spec=placement.spec,
                box=box,
                flow=FlowField(targets, valid),
            )
        )
    return SynthScene(scene=Image(np.clip(out, 0.0, 1.0)), placed=tuple(placed), background=background)


# ---------------------------------------------------------------------------
# Textures
# ---------------------------------------------------------------------------


def _texture(
    rng: np.random.Generator,
    size: tuple[int, int],
    value_range: tuple[float, float],
    channels: int = 3,
    channel_mix: float = 0.75,
    smooth: float = 0.0,
) -> np.ndarray:
    """Random texture with channels correlated through a shared base field."""
    w, h = size
    lo, hi = value_range
    base = rng.uniform(0.0, 1.0, size=(h, w))
    chans = []
    for _ in range(channels):
        jitter = rng.uniform(0.0, 1.0, size=(h, w))
        chans.append(channel_mix * base + (1.0 - channel_mix) * jitter)
    arr = np.stack(chans, axis=2)
    if smooth > 0.0:
        arr = gaussian_filter(arr, sigma=(smooth, smooth, 0))
        arr -= arr.min()
        arr /= max(arr.max(), 1e-9)
    return lo + (hi - lo) * arr


# ---------------------------------------------------------------------------
# Assumption-satisfying datasets and the theorem harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AssumptionDatasetSpec:
    """Parameters of a dataset that satisfies the verifier's premises by construction."""

    gamma: float
    num_classes: int
    templates_per_class: int
    size: int = 64
    transform_family: str = "homography"
    lighting_bound: Optional[float] = None  # defaults to 0.75 * gamma

    def __post_init__(self):
        if self.gamma <= 0.0:
            raise ValueError("gamma must be > 0")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes for wrong-class trials")
        if self.templates_per_class < 1:
            raise ValueError("need at least one template per class")
        if self.transform_family != "homography":
            raise ValueError("only the homography transform family is supported")
        if self.lighting_bound is None:
            object.__setattr__(self, "lighting_bound", 0.75 * self.gamma)
        if self.lighting_bound > self.gamma:
            raise ValueError("lighting_bound must be <= gamma")


@dataclass(frozen=True)
class Query:
    """One synthetic detection crop with its certified provenance."""

    crop: Image
    flow: FlowField
    transform: Homography
    class_id: int
    template_index: int
    dihedral_k: int
    bias: float
    source: Image


@dataclass(frozen=True)
class AssumptionDataset:
    """Templates plus the machinery certifying Assumptions 1 and 2.

    The classifier scores 1 minus the best symmetry-aligned l_inf distance
    (unit Lipschitz constant in that distance, so delta = 2 * gamma); class
    intensity bands in channel 0 are separated by at least 4 * gamma so
    compatible classifiers exist at all.
    """

    spec: AssumptionDatasetSpec
    seed: int
    templates: tuple[TemplateSet, ...]
    delta: float
    lipschitz: float
    _rng: np.random.Generator = field(repr=False, compare=False, default=None)  # type: ignore[assignment]

    def classifier(self, template: Image, crop: Image) -> float:
        arrs = template.data
        best = np.inf
        for k in range(DIHEDRAL_ORDER):
            d = float(np.abs(dihedral_apply(arrs, k) - crop.data).max())
            if d < best:
                best = d
        return 1.0 - best

    def sample_query(self, class_id: int, rng: np.random.Generator) -> Query:
        tset = self.templates[class_id]
        m = int(rng.integers(len(tset)))
        k = int(rng.integers(DIHEDRAL_ORDER))
        bound = float(self.spec.lighting_bound)  # type: ignore[arg-type]
        bias = float(rng.uniform(-bound, bound))
        source = tset.templates[m]
        arr = dihedral_apply(source.data, k) + bias
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise VerikitError("intensity headroom violated; bands too close to [0,1]")
        return Query(
            crop=Image(arr),
            flow=dihedral_flow(k, self.spec.size),
            transform=dihedral_homography(k, self.spec.size),
            class_id=class_id,
            template_index=m,
            dihedral_k=k,
            bias=bias,
            source=source,
        )

    def query_factory(self, class_id: int) -> Query:
        return self.sample_query(class_id, self._rng)

    def theoretical_config(self, rigidity_epsilon: float = 0.5) -> TheoreticalConfig:
        return TheoreticalConfig(
            gamma=self.spec.gamma, delta=self.delta, rigidity_epsilon=rigidity_epsilon
        )


def build_assumption_dataset(spec: AssumptionDatasetSpec, seed: int = 0) -> AssumptionDataset:
    """Generate class-separated textured templates plus query machinery.

    Channel 0 carries per-class intensity bands of width 2 * gamma with
    4 * gamma gaps (so any cross-class pixel pair differs by at least
    4 * gamma in l_inf); the other channels carry free texture. Queries are
    exactly (grid symmetry + bounded intensity shift) of one template,
    which certifies the dense-dataset premise with the configured gamma.
    """
    g = spec.gamma
    headroom = 2.5 * g
    width = 2.0 * g
    gap = 4.0 * g
    needed = 2 * headroom + spec.num_classes * width + (spec.num_classes - 1) * gap
    if needed > 1.0:
        raise VerikitError(
            f"class-separation unachievable: {spec.num_classes} classes at gamma={g} "
            f"need intensity range {needed:.3f} > 1"
        )
    rng = np.random.default_rng(mix_seed(seed, 0x5EED))
    template_sets = []
    for class_id in range(spec.num_classes):
        lo = headroom + class_id * (width + gap)
        images = []
        for _ in range(spec.templates_per_class):
            chan0 = rng.uniform(lo, lo + width, size=(spec.size, spec.size))
            rest = _texture(
                rng, (spec.size, spec.size), (0.3, 0.7), channels=2, channel_mix=0.7
            )
            images.append(Image(np.concatenate([chan0[:, :, None], rest], axis=2)))
        template_sets.append(TemplateSet(class_id=class_id, templates=tuple(images)))

    probe = AssumptionDataset(
        spec=spec,
        seed=seed,
        templates=tuple(template_sets),
        delta=2.0 * g,
        lipschitz=1.0,
        _rng=np.random.default_rng(mix_seed(seed, 0xFAC7)),
    )
    measured = _measure_lipschitz(probe, n_samples=200, seed=mix_seed(seed, 0x11B5))
    effective = max(1.0, measured)
    return AssumptionDataset(
        spec=spec,
        seed=seed,
        templates=probe.templates,
        delta=2.0 * g * effective,
        lipschitz=measured,
        _rng=np.random.default_rng(mix_seed(seed, 0xFAC7)),
    )


def _measure_lipschitz(ds: AssumptionDataset, n_samples: int, seed: int) -> float:
    """Empirical ratio |c(I1,D) - c(I2,D)| / d(T(I1), I2) over probe pairs."""
    rng = np.random.default_rng(seed)
    g = ds.spec.gamma
    worst = 0.0
    for _ in range(n_samples):
        class_id = int(rng.integers(ds.spec.num_classes))
        tset = ds.templates[class_id]
        i1 = tset.templates[int(rng.integers(len(tset)))]
        k = int(rng.integers(DIHEDRAL_ORDER))
        e = rng.uniform(-2.0 * g, 2.0 * g, size=i1.data.shape)
        i2_arr = np.clip(dihedral_apply(i1.data, k) + e, 0.0, 1.0)
        premise = float(np.abs(dihedral_apply(i1.data, k) - i2_arr).max())
        if premise < g / 10.0:
            continue
        d_class = int(rng.integers(ds.spec.num_classes))
        d_img = ds.sample_query(d_class, rng).crop
        gap = abs(ds.classifier(i1, d_img) - ds.classifier(Image(i2_arr), d_img))
        worst = max(worst, gap / premise)
    return worst


@dataclass(frozen=True)
class AuditReport:
    name: str
    passed: bool
    samples: int
    worst: float
    bound: float


def audit_assumption_1(ds: AssumptionDataset, n_samples: int = 1000, seed: int = 0) -> AuditReport:
    """Check that sampled queries stay within gamma of a rigidly mapped template."""
    rng = np.random.default_rng(mix_seed(seed, 0xA1))
    worst = 0.0
    for _ in range(n_samples):
        class_id = int(rng.integers(ds.spec.num_classes))
        q = ds.sample_query(class_id, rng)
        mapped = dihedral_apply(q.source.data, q.dihedral_k)
        d = float(np.abs(mapped - q.crop.data).max())
        worst = max(worst, d)
    return AuditReport(
        name="assumption_1_dense_dataset",
        passed=worst <= ds.spec.gamma,
        samples=n_samples,
        worst=worst,
        bound=ds.spec.gamma,
    )


def audit_assumption_2(ds: AssumptionDataset, n_samples: int = 10000, seed: int = 0) -> AuditReport:
    """Monte-Carlo classifier-smoothness audit over premise-satisfying pairs.

    Perturbations are drawn just inside the 2 * gamma premise ball (98% of
    it), which keeps the strict inequality check meaningful instead of
    letting the supremum graze the bound to within float noise.
    """
    rng = np.random.default_rng(mix_seed(seed, 0xA2))
    g = ds.spec.gamma
    reach = 1.96 * g
    worst = 0.0
    for _ in range(n_samples):
        class_id = int(rng.integers(ds.spec.num_classes))
        tset = ds.templates[class_id]
        i1 = tset.templates[int(rng.integers(len(tset)))]
        k = int(rng.integers(DIHEDRAL_ORDER))
        e = rng.uniform(-reach, reach, size=i1.data.shape)
        i2 = Image(np.clip(dihedral_apply(i1.data, k) + e, 0.0, 1.0))
        d_class = int(rng.integers(ds.spec.num_classes))
        d_img = ds.sample_query(d_class, rng).crop
        gap = abs(ds.classifier(i1, d_img) - ds.classifier(i2, d_img))
        worst = max(worst, gap)
    return AuditReport(
        name="assumption_2_classifier_smoothness",
        passed=worst < ds.delta,
        samples=n_samples,
        worst=worst,
        bound=ds.delta,
    )


# ---------------------------------------------------------------------------
# Flow estimators for the theorem harness
# ---------------------------------------------------------------------------

ESTIMATOR_NAMES = ("ground-truth", "uniform-random", "adversarial")


def ground_truth_estimator(query: Query) -> Callable[[Image, Image], FlowField]:
    """True flow for the query's source template; identity flow elsewhere.

    The identity flow is the honest "no information" answer: it is rigid,
    so only the color test can be fooled into checking it, and it never is.
    """

    def estimate(template: Image, crop: Image) -> FlowField:
        del crop
        if template is query.source or np.array_equal(template.data, query.source.data):
            return query.flow
        return FlowField.identity(template.width, template.height)

    return estimate


def adversarial_estimator(query: Query) -> Callable[[Image, Image], FlowField]:
    """The true rigid mapping copied onto every template, matching or not."""
    size = query.flow.width

    def estimate(template: Image, crop: Image) -> FlowField:
        del crop
        if (template.height, template.width) != (size, size):
            raise ValueError("adversarial estimator requires same-size templates")
        return dihedral_flow(query.dihedral_k, size)

    return estimate


def uniform_random_estimator(seed: int) -> Callable[[Image, Image], FlowField]:
    """Independent uniform targets over the crop for every request."""
    rng = np.random.default_rng(seed)

    def estimate(template: Image, crop: Image) -> FlowField:
        targets = np.stack(
            [
                rng.uniform(0.0, crop.width - 1.0, size=(template.height, template.width)),
                rng.uniform(0.0, crop.height - 1.0, size=(template.height, template.width)),
            ],
            axis=2,
        )
        return FlowField(targets, np.ones((template.height, template.width), dtype=bool))

    return estimate


def make_estimator(
    name: str, query: Query, seed: int
) -> Callable[[Image, Image], FlowField]:
    if name == "ground-truth":
        return ground_truth_estimator(query)
    if name == "adversarial":
        return adversarial_estimator(query)
    if name == "uniform-random":
        return uniform_random_estimator(seed)
    raise ValueError(f"unknown estimator {name!r}; expected one of {ESTIMATOR_NAMES}")


@dataclass(frozen=True)
class TheoremArm:
    """Result of one batch of verifier trials under a single flow estimator."""

    estimator: str
    wrong_class: bool
    trials: int
    accepts: int

    @property
    def acceptance_rate(self) -> float:
        return self.accepts / self.trials if self.trials else 0.0


def run_theorem_trials(
    ds: AssumptionDataset,
    trials: int,
    estimator: str,
    cfg: Optional[TheoreticalConfig] = None,
    seed: int = 0,
    wrong_class: bool = True,
) -> TheoremArm:
    """Run theoretical verification trials on freshly sampled queries.

    With wrong_class=True the proposed class always differs from the true
    one, so every acceptance is a false positive. With wrong_class=False
    the proposed class is correct and the acceptance rate measures recall.
    """
    if cfg is None:
        cfg = ds.theoretical_config()
    rng = np.random.default_rng(mix_seed(seed, 0x7310, int(wrong_class)))
    accepts = 0
    for t in range(trials):
        true_class = int(rng.integers(ds.spec.num_classes))
        query = ds.sample_query(true_class, rng)
        if wrong_class:
            others = [c for c in range(ds.spec.num_classes) if c != true_class]
            proposed = int(others[rng.integers(len(others))])
        else:
            proposed = true_class
        flow_estimator = make_estimator(estimator, query, seed=mix_seed(seed, 0xE571, t))
        accepted = theoretical_flow_verify(
            proposed, query.crop, ds.templates, ds.classifier, flow_estimator, cfg
        )
        accepts += int(accepted)
    return TheoremArm(estimator=estimator, wrong_class=wrong_class, trials=trials, accepts=accepts)


# ---------------------------------------------------------------------------
# Detection suites for end-to-end evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectionSuite:
    """Templates, annotated scenes, and per-detection truth flags."""

    templates: tuple[TemplateSet, ...]
    scenes: tuple[SceneRecord, ...]
    truth: tuple[tuple[bool, ...], ...]
    params: dict

    @property
    def num_detections(self) -> int:
        return sum(len(s.detections) for s in self.scenes)


def _luminance(arr: np.ndarray) -> np.ndarray:
    return arr.mean(axis=2)


def rank_match_flow(template: Image, crop: Image, box_in_crop: Box) -> FlowField:
    """Non-rigid flow that greedily matches intensities into the box interior.

    Template pixels and box-interior crop pixels are paired by intensity
    rank, producing strongly correlated colors with spatially scrambled
    geometry: the kind of flow only the rigidity test can reject.
    """
    u_lo = max(int(math.ceil(box_in_crop.x_min)), 0)
    u_hi = min(int(math.floor(box_in_crop.x_max)), crop.width - 1)
    v_lo = max(int(math.ceil(box_in_crop.y_min)), 0)
    v_hi = min(int(math.floor(box_in_crop.y_max)), crop.height - 1)
    if u_hi < u_lo or v_hi < v_lo:
        raise ValueError("box interior is empty")
    gu, gv = np.meshgrid(np.arange(u_lo, u_hi + 1), np.arange(v_lo, v_hi + 1))
    gu, gv = gu.reshape(-1), gv.reshape(-1)
    crop_vals = _luminance(crop.data)[gv, gu]
    crop_order = np.argsort(crop_vals, kind="stable")

    tpl_vals = _luminance(template.data).reshape(-1)
    tpl_order = np.argsort(tpl_vals, kind="stable")

    n_tpl = len(tpl_vals)
    n_box = len(crop_order)
    ranks = (np.arange(n_tpl) * n_box) // n_tpl
    targets_flat = np.zeros((n_tpl, 2))
    box_idx = crop_order[ranks]
    targets_flat[tpl_order, 0] = gu[box_idx]
    targets_flat[tpl_order, 1] = gv[box_idx]
    targets = targets_flat.reshape(template.height, template.width, 2)
    return FlowField(targets, np.ones((template.height, template.width), dtype=bool))


def uniform_flow(
    template_size: tuple[int, int], crop_size: tuple[int, int], rng: np.random.Generator
) -> FlowField:
    w, h = template_size
    cw, ch = crop_size
    targets = np.stack(
        [rng.uniform(0.0, cw - 1.0, size=(h, w)), rng.uniform(0.0, ch - 1.0, size=(h, w))],
        axis=2,
    )
    return FlowField(targets, np.ones((h, w), dtype=bool))


def flow_to_crop_frame(flow: FlowField, crop_origin: tuple[int, int]) -> FlowField:
    """Re-express scene-frame flow targets in a crop's coordinate frame."""
    x0, y0 = crop_origin
    targets = flow.targets.copy()
    targets[..., 0] -= x0
    targets[..., 1] -= y0
    return FlowField(targets, flow.valid)


def _jitter_box(box: Box, rng: np.random.Generator, amount: float = 0.02) -> Box:
    w, h = box.width, box.height
    return Box(
        box.x_min + rng.uniform(-amount, amount) * w,
        box.y_min + rng.uniform(-amount, amount) * h,
        box.x_max + rng.uniform(-amount, amount) * w,
        box.y_max + rng.uniform(-amount, amount) * h,
    )


def _sample_clear_box(
    rng: np.random.Generator,
    scene_size: int,
    size_range: tuple[float, float],
    avoid: Sequence[Box],
    max_iou: float = 0.05,
    retries: int = 200,
) -> Box:
    best, best_overlap = None, math.inf
    margin = 3.0
    for _ in range(retries):
        w = rng.uniform(*size_range)
        h = w * rng.uniform(1.05, 1.45)
        if rng.random() < 0.5:
            w, h = h, w
        x0 = rng.uniform(margin, scene_size - margin - w)
        y0 = rng.uniform(margin, scene_size - margin - h)
        cand = Box(x0, y0, x0 + w, y0 + h)
        overlap = max((iou(cand, b) for b in avoid), default=0.0)
        if overlap <= max_iou:
            return cand
        if overlap < best_overlap:
            best, best_overlap = cand, overlap
    assert best is not None
    return best


def make_detection_suite(
    num_scenes: int,
    objects_per_scene: int,
    fp_rate: float,
    seed: int = 0,
    num_classes: int = 3,
    templates_per_class: int = 2,
    scene_size: int = 144,
    template_size: int = 48,
) -> DetectionSuite:
    """Compose scenes with oracle-flowed true detections and injected false positives.

    True detections carry the exact ground-truth flow of their placed
    object (slightly jittered boxes, confidence in [0.6, 0.9]). Injected
    false positives come in three flavors whose confidences overlap and
    overshoot the true band: intensity-rank-matched flows on background
    boxes (color-consistent but non-rigid), uniform-random flows on
    background boxes, and wrong-class labels on real objects. fp_rate is
    the fraction of all detections that are false.
    """
    if not 0.0 <= fp_rate <= 1.0:
        raise ValueError("fp_rate must be in [0, 1]")
    lib_rng = np.random.default_rng(mix_seed(seed, 0x713))
    template_sets = []
    for class_id in range(num_classes):
        images = tuple(
            Image(
                _texture(
                    lib_rng,
                    (template_size, template_size),
                    (0.15, 0.9),
                    channel_mix=0.8,
                    smooth=0.6,
                )
            )
            for _ in range(templates_per_class)
        )
        template_sets.append(TemplateSet(class_id=class_id, templates=images))

    scenes = []
    truth = []
    for s_idx in range(num_scenes):
        rng = np.random.default_rng(mix_seed(seed, 0x5C3, s_idx))
        bg = Image(_texture(rng, (scene_size, scene_size), (0.25, 0.75), smooth=3.0))

        placements = []
        placed_boxes: list[Box] = []
        obj_size = (0.28 * scene_size, 0.4 * scene_size)
        for _ in range(objects_per_scene):
            class_id = int(rng.integers(num_classes))
            t_idx = int(rng.integers(templates_per_class))
            target = _sample_clear_box(rng, scene_size, obj_size, placed_boxes, max_iou=0.1)
            placed_boxes.append(target)
            unit = random_transform(
                corner_jitter=0.05,
                lighting_range=((0.85, 1.2), (-0.04, 0.04)),
                blur_range=(0.0, 0.8),
                seed=mix_seed(seed, 0x7F, s_idx, len(placements)),
            )
            spec = placed_spec(unit, (template_size, template_size), target)
            placements.append(
                Placement(
                    template=template_sets[class_id].templates[t_idx],
                    spec=spec,
                    class_id=class_id,
                    template_index=t_idx,
                )
            )
        synth_scene = compose_scene(bg, placements)

        detections: list[Detection] = []
        flows: dict[tuple[int, int, int], FlowField] = {}
        is_true: list[bool] = []
        det_id = 0
        tp_confidence: list[float] = []

        for obj in synth_scene.placed:
            det_box = _jitter_box(obj.box, rng)
            conf = float(rng.uniform(0.6, 0.9))
            det = Detection(detection_id=det_id, class_id=obj.class_id, box=det_box, confidence=conf)
            x0, y0, side = square_crop_box(det_box)
            flows[(det_id, obj.class_id, obj.template_index)] = flow_to_crop_frame(
                obj.flow, (x0, y0)
            )
            for other_idx in range(templates_per_class):
                if other_idx != obj.template_index:
                    flows[(det_id, obj.class_id, other_idx)] = uniform_flow(
                        (template_size, template_size), (side, side), rng
                    )
            detections.append(det)
            tp_confidence.append(conf)
            is_true.append(True)
            det_id += 1

        n_true = len(synth_scene.placed)
        if fp_rate >= 1.0:
            detections, flows, is_true, tp_confidence = [], {}, [], []
            det_id = 0
            n_fp = objects_per_scene
        else:
            n_fp = int(round(n_true * fp_rate / (1.0 - fp_rate)))
        n_rank = (n_fp + 1) // 2
        n_wrong = n_fp // 4 if tp_confidence else 0
        n_rand = n_fp - n_rank - n_wrong

        gt_boxes = [obj.box for obj in synth_scene.placed]
        fp_boxes_placed: list[Box] = list(gt_boxes)

        for kind_count, kind in ((n_rank, "rank"), (n_rand, "random"), (n_wrong, "wrong")):
            for _ in range(kind_count):
                if kind == "wrong":
                    j = int(rng.integers(n_true))
                    obj = synth_scene.placed[j]
                    box = _jitter_box(obj.box, rng)
                    wrong_classes = [c for c in range(num_classes) if c != obj.class_id]
                    class_id = int(wrong_classes[rng.integers(len(wrong_classes))])
                    conf = float(max(0.4, tp_confidence[j] - rng.uniform(0.03, 0.1)))
                else:
                    box = _sample_clear_box(
                        rng, scene_size, obj_size, fp_boxes_placed, max_iou=0.05
                    )
                    fp_boxes_placed.append(box)
                    class_id = int(rng.integers(num_classes))
                    if kind == "rank":
                        conf = float(rng.uniform(0.75, 0.99))
                    else:
                        conf = float(rng.uniform(0.65, 0.9))
                det = Detection(detection_id=det_id, class_id=class_id, box=box, confidence=conf)
                x0, y0, side = square_crop_box(box)
                crop = crop_to_square(synth_scene.scene, box)
                box_in_crop = box_to_crop_frame(box, (x0, y0))
                for t_idx in range(templates_per_class):
                    tpl = template_sets[class_id].templates[t_idx]
                    if kind == "rank":
                        flows[(det_id, class_id, t_idx)] = rank_match_flow(
                            tpl, crop, box_in_crop
                        )
                    else:
                        flows[(det_id, class_id, t_idx)] = uniform_flow(
                            (template_size, template_size), (side, side), rng
                        )
                detections.append(det)
                is_true.append(False)
                det_id += 1

        ground_truth = tuple((obj.box, obj.class_id) for obj in synth_scene.placed)
        scenes.append(
            SceneRecord(
                scene=synth_scene.scene,
                ground_truth=ground_truth,
                detections=tuple(detections),
                flows=flows,
            )
        )
        truth.append(tuple(is_true))

    params = {
        "num_scenes": num_scenes,
        "objects_per_scene": objects_per_scene,
        "fp_rate": fp_rate,
        "seed": seed,
        "num_classes": num_classes,
        "templates_per_class": templates_per_class,
        "scene_size": scene_size,
        "template_size": template_size,
        "generator_version": __version_tag__,
    }
    return DetectionSuite(
        templates=tuple(template_sets), scenes=tuple(scenes), truth=tuple(truth), params=params
    )


# ---------------------------------------------------------------------------
# Suite persistence
#
# Layout: scenes/NNN.png, templates/CLS/MM.png (optional MM_mask.png),
# flows/NNN_DDDD_CLS_MM.vflw, annotations.jsonl, manifest.json.
# ---------------------------------------------------------------------------


def flow_filename(scene: int, detection_id: int, class_id: int, template_index: int) -> str:
    return f"{scene:03d}_{detection_id:04d}_{class_id:03d}_{template_index:02d}.vflw"


def save_suite(suite: DetectionSuite, out_dir) -> None:
    """Persist a suite to the on-disk layout consumed by the CLI."""
    import json
    from pathlib import Path

    from . import fileio

    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    (out / "flows").mkdir(exist_ok=True)
    for tset in suite.templates:
        tdir = out / "templates" / f"{tset.class_id:03d}"
        tdir.mkdir(parents=True, exist_ok=True)
        for m, tpl in enumerate(tset.templates):
            fileio.write_image(tdir / f"{m:02d}.png", tpl)
            if tset.masks is not None and tset.masks[m] is not None:
                mask_img = Image(tset.masks[m].astype(np.float64)[:, :, None])
                fileio.write_image(tdir / f"{m:02d}_mask.png", mask_img)

    with open(out / "annotations.jsonl", "w") as f:
        for s_idx, scene in enumerate(suite.scenes):
            fileio.write_image(out / "scenes" / f"{s_idx:03d}.png", scene.scene)
            for box, class_id in scene.ground_truth:
                rec = {
                    "scene": s_idx,
                    "kind": "ground_truth",
                    "class_id": class_id,
                    "box": box.as_list(),
                }
                f.write(json.dumps(rec, sort_keys=True) + "\n")
            flags = suite.truth[s_idx] if s_idx < len(suite.truth) else ()
            for d_idx, det in enumerate(scene.detections):
                rec = {"scene": s_idx, "kind": "detection"}
                rec.update(fileio.detection_to_record(det))
                if d_idx < len(flags):
                    rec["true_positive"] = bool(flags[d_idx])
                f.write(json.dumps(rec, sort_keys=True) + "\n")
            for (det_id, class_id, t_idx), flow in sorted(scene.flows.items()):
                fileio.write_flow(
                    out / "flows" / flow_filename(s_idx, det_id, class_id, t_idx), flow
                )

    manifest = {"params": suite.params, "format": "verikit-suite-v1"}
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_suite(suite_dir) -> DetectionSuite:
    """Load a persisted suite back into memory."""
    import json
    import re
    from pathlib import Path

    from . import fileio

    root = Path(suite_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    params = manifest.get("params", {})

    template_sets = []
    for tdir in sorted((root / "templates").iterdir()):
        if not tdir.is_dir():
            continue
        class_id = int(tdir.name)
        images = []
        masks = []
        for path in sorted(tdir.glob("[0-9][0-9].png")):
            images.append(fileio.read_image(path))
            mask_path = tdir / f"{path.stem}_mask.png"
            masks.append(
                fileio.read_image(mask_path).data[:, :, 0] >= 0.5
                if mask_path.exists()
                else None
            )
        use_masks = tuple(masks) if any(m is not None for m in masks) else None
        template_sets.append(
            TemplateSet(class_id=class_id, templates=tuple(images), masks=use_masks)
        )

    gt_by_scene: dict[int, list[tuple[Box, int]]] = {}
    det_by_scene: dict[int, list[Detection]] = {}
    truth_by_scene: dict[int, list[bool]] = {}
    with open(root / "annotations.jsonl") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            s_idx = int(rec["scene"])
            if rec["kind"] == "ground_truth":
                gt_by_scene.setdefault(s_idx, []).append(
                    (Box(*[float(v) for v in rec["box"]]), int(rec["class_id"]))
                )
            else:
                det_by_scene.setdefault(s_idx, []).append(fileio.detection_from_record(rec))
                truth_by_scene.setdefault(s_idx, []).append(
                    bool(rec.get("true_positive", False))
                )

    flow_pattern = re.compile(r"^(\d{3})_(\d{4})_(\d{3})_(\d{2})\.vflw$")
    flows_by_scene: dict[int, dict[tuple[int, int, int], FlowField]] = {}
    for path in sorted((root / "flows").glob("*.vflw")):
        m = flow_pattern.match(path.name)
        if not m:
            raise VerikitError(f"unrecognized flow filename {path.name}")
        s_idx, det_id, class_id, t_idx = (int(g) for g in m.groups())
        flows_by_scene.setdefault(s_idx, {})[(det_id, class_id, t_idx)] = fileio.read_flow(path)

    scene_paths = sorted((root / "scenes").glob("*.png"))
    scenes = []
    truth = []
    for path in scene_paths:
        s_idx = int(path.stem)
        scenes.append(
            SceneRecord(
                scene=fileio.read_image(path),
                ground_truth=tuple(gt_by_scene.get(s_idx, [])),
                detections=tuple(det_by_scene.get(s_idx, [])),
                flows=flows_by_scene.get(s_idx, {}),
            )
        )
        truth.append(tuple(truth_by_scene.get(s_idx, [])))
    return DetectionSuite(
        templates=tuple(template_sets), scenes=tuple(scenes), truth=tuple(truth), params=params
    )
