"""
Deterministic synthetic scenes standing in for real Grad-CAM output, and an
overlay renderer for eyeballing proposals.

Activations are Gaussian bumps rendered with a jet-like colour ramp
``a -> (a, 1 - |2a - 1|, 1 - a)``: 0 is pure blue, 1 pure red.
"""
from __future__ import annotations
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator

from rgbdg.core.clustering import ProposalSet
from rgbdg.core.fusion import FusionConfig, intersect
from rgbdg.core.scene_model import ActivationHeatmap, BoundingBox, Category, DepthMap, Scene
from rgbdg.services.scene_io import write_ppm
from rgbdg.utils.env_setup import get_logger
from rgbdg.utils.errors import InvalidSpecError, OverlayError, SchemaViolationError

logger = get_logger("Synth")

BACKGROUND_DEPTH = 1.0
# a pixel belongs to its nearest blob when that blob's unit bump is at least this high
BLOB_SUPPORT = 0.1
GROUND_TRUTH_LEVEL = 0.5

GT_COLOR = np.array([255, 0, 0], dtype=np.uint8)
PROPOSAL_COLOR = np.array([0, 255, 0], dtype=np.uint8)


class BlobSpec(BaseModel):
    center: Tuple[float, float]
    radius_sigma: float
    peak: float = 1.0
    depth: float = 0.5


class SynthSpec(BaseModel):
    scene_id: str = "synth"
    width: int
    height: int
    blobs: List[BlobSpec] = Field(default_factory=list)
    rgb_active_blobs: List[int] = Field(default_factory=list)
    depth_active_blobs: List[int] = Field(default_factory=list)
    target_blob: Optional[int] = None
    noise_amplitude: float = 0.0
    seed: int = 0
    expression: str = "the object"
    category: Category = Category.EASY

    @model_validator(mode="after")
    def _check(self) -> "SynthSpec":
        check_spec(self)
        return self

    @classmethod
    def parse(cls, data) -> "SynthSpec":
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            first = e.errors()[0]
            loc = ".".join(str(p) for p in first.get("loc", ()))
            raise InvalidSpecError(f"{loc}: {first.get('msg')}")


def check_spec(spec: SynthSpec) -> None:
    if spec.width < 1 or spec.height < 1:
        raise InvalidSpecError(f"image must be at least 1x1, got {spec.width}x{spec.height}")
    if not 0.0 <= spec.noise_amplitude <= 1.0:
        raise InvalidSpecError(f"noise_amplitude must be in [0, 1], got {spec.noise_amplitude}")
    for i, b in enumerate(spec.blobs):
        x, y = b.center
        if not (0 <= x <= spec.width - 1 and 0 <= y <= spec.height - 1):
            raise InvalidSpecError(f"blob {i} center {b.center} outside {spec.width}x{spec.height}")
        if b.radius_sigma <= 0:
            raise InvalidSpecError(f"blob {i} radius_sigma must be positive")
        if not (0.0 <= b.peak <= 1.0 and 0.0 <= b.depth <= 1.0):
            raise InvalidSpecError(f"blob {i} peak and depth must lie in [0, 1]")
    n = len(spec.blobs)
    for name in ("rgb_active_blobs", "depth_active_blobs"):
        bad = [i for i in getattr(spec, name) if not 0 <= i < n]
        if bad:
            raise InvalidSpecError(f"{name} references unknown blobs {bad}")
    if spec.target_blob is not None and not 0 <= spec.target_blob < n:
        raise InvalidSpecError(f"target_blob {spec.target_blob} out of range")
    if n and spec.target_blob is None:
        raise InvalidSpecError("target_blob is required when blobs are present")


def jet_encode(activation: np.ndarray) -> np.ndarray:
    a = np.clip(activation, 0.0, 1.0)
    return np.stack([a, 1.0 - np.abs(2.0 * a - 1.0), 1.0 - a], axis=-1)


def _bumps(spec: SynthSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Per-blob unit bumps and peak-scaled bumps, both (B, H, W)."""
    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    unit = np.zeros((len(spec.blobs), spec.height, spec.width))
    for i, b in enumerate(spec.blobs):
        d2 = (xx - b.center[0]) ** 2 + (yy - b.center[1]) ** 2
        unit[i] = np.exp(-d2 / (2.0 * b.radius_sigma ** 2))
    peaks = np.array([b.peak for b in spec.blobs]).reshape(-1, 1, 1)
    return unit, unit * peaks


def _activation(scaled: np.ndarray, active: List[int], shape: Tuple[int, int]) -> np.ndarray:
    if not active:
        return np.zeros(shape)
    return scaled[sorted(set(active))].max(axis=0)


def _ground_truth(spec: SynthSpec, scaled: np.ndarray) -> BoundingBox:
    if spec.target_blob is None:
        return BoundingBox(x_min=0, y_min=0, x_max=spec.width - 1, y_max=spec.height - 1)
    ys, xs = np.nonzero(scaled[spec.target_blob] > GROUND_TRUTH_LEVEL)
    if xs.size == 0:
        cx, cy = spec.blobs[spec.target_blob].center
        x, y = int(round(cx)), int(round(cy))
        return BoundingBox(x_min=x, y_min=y, x_max=x, y_max=y)
    return BoundingBox.from_pixels(xs, ys)


def generate(spec: SynthSpec) -> Scene:
    check_spec(spec)
    shape = (spec.height, spec.width)
    unit, scaled = _bumps(spec)

    rgb = jet_encode(_activation(scaled, spec.rgb_active_blobs, shape))
    depth_hm = jet_encode(_activation(scaled, spec.depth_active_blobs, shape))
    if spec.noise_amplitude > 0:
        rng = np.random.default_rng(spec.seed)
        amp = spec.noise_amplitude
        rgb = np.clip(rgb + rng.uniform(-amp, amp, size=rgb.shape), 0.0, 1.0)
        depth_hm = np.clip(depth_hm + rng.uniform(-amp, amp, size=depth_hm.shape), 0.0, 1.0)

    depth = np.full(shape, BACKGROUND_DEPTH)
    if spec.blobs:
        nearest = unit.argmax(axis=0)
        support = unit.max(axis=0) >= BLOB_SUPPORT
        blob_depths = np.array([b.depth for b in spec.blobs])
        depth = np.where(support, blob_depths[nearest], depth)

    return Scene(
        id=spec.scene_id,
        rgb_heatmap=ActivationHeatmap(pixels=rgb),
        depth_heatmap=ActivationHeatmap(pixels=depth_hm),
        depth_map=DepthMap(values=depth),
        expression=spec.expression,
        ground_truth=_ground_truth(spec, scaled),
        category=spec.category,
    )


def depth_critical_preset(seed: int, width: int = 320, height: int = 240, noise_amplitude: float = 0.02) -> SynthSpec:
    """Two identical blobs side by side; only depth singles out the target.

    The RGB heatmap lights up both, the depth heatmap only the target, so the
    fused heatmap is active over the target alone while RGB stays ambiguous.
    """
    rng = np.random.default_rng([seed, 1])
    scale = min(width / 320.0, height / 240.0)
    sigma = float(rng.uniform(16.0, 20.0)) * scale
    separation = 5.0 * sigma
    margin = 2.0 * sigma
    lo_x, hi_x = margin + separation / 2, width - 1 - margin - separation / 2
    lo_y, hi_y = margin, height - 1 - margin
    if lo_x > hi_x or lo_y > hi_y:
        raise InvalidSpecError(f"{width}x{height} is too small for the depth-critical layout")
    mid_x = float(rng.uniform(lo_x, hi_x))
    mid_y = float(rng.uniform(lo_y, hi_y))
    target = int(rng.integers(2))
    near, far = float(rng.uniform(0.2, 0.4)), float(rng.uniform(0.6, 0.8))
    depths = [near, far] if target == 0 else [far, near]
    blobs = [
        BlobSpec(center=(mid_x - separation / 2, mid_y), radius_sigma=sigma, peak=1.0, depth=depths[0]),
        BlobSpec(center=(mid_x + separation / 2, mid_y), radius_sigma=sigma, peak=1.0, depth=depths[1]),
    ]
    return SynthSpec(
        scene_id=f"depth-critical-{seed:04d}",
        width=width,
        height=height,
        blobs=blobs,
        rgb_active_blobs=[0, 1],
        depth_active_blobs=[target],
        target_blob=target,
        noise_amplitude=noise_amplitude,
        seed=seed,
        expression="the mug in front",
        category=Category.DIFFICULT,
    )


# ---------- Overlay ----------

def _draw_box(image: np.ndarray, box: BoundingBox, color: np.ndarray) -> None:
    h, w = image.shape[:2]
    x0, x1 = max(box.x_min, 0), min(box.x_max, w - 1)
    y0, y1 = max(box.y_min, 0), min(box.y_max, h - 1)
    if x0 > x1 or y0 > y1:
        return
    for y in (box.y_min, box.y_max):
        if 0 <= y < h:
            image[y, x0:x1 + 1] = color
    for x in (box.x_min, box.x_max):
        if 0 <= x < w:
            image[y0:y1 + 1, x] = color


def overlay_image(scene: Scene, proposals: ProposalSet, fusion_cfg: FusionConfig | None = None) -> np.ndarray:
    """Fused heatmap (RGB heatmap when depth is absent) with 1-pixel outlines:
    ground truth in red first, then candidates in green from last rank to rank 1."""
    if proposals.scene_id != scene.id:
        raise SchemaViolationError(
            f"proposals are for scene {proposals.scene_id!r}, not {scene.id!r}", "scene_id"
        )
    base = scene.rgb_heatmap
    if scene.depth_heatmap is not None:
        base = intersect(scene.rgb_heatmap, scene.depth_heatmap, fusion_cfg or FusionConfig())
    image = np.rint(base.pixels * 255).astype(np.uint8)
    _draw_box(image, scene.ground_truth, GT_COLOR)
    for p in sorted(proposals.proposals, key=lambda p: p.rank, reverse=True):
        _draw_box(image, p.box, PROPOSAL_COLOR)
    return image


def render_overlay(scene: Scene, proposals: ProposalSet, path: str, fusion_cfg: FusionConfig | None = None) -> str:
    image = overlay_image(scene, proposals, fusion_cfg)
    try:
        write_ppm(image, path)
    except OSError as e:
        raise OverlayError(f"cannot write overlay {path}: {e}")
    logger.info(f"Overlay for {scene.id} written to {path}")
    return path
