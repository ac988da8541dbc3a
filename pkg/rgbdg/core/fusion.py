"""
Intersection of the RGB and depth activation heatmaps.

A pixel is kept when it is active in both inputs (red or green above
``t_rgb``); kept pixels take the channel-wise mean of the two inputs, every
other pixel becomes the inactive colour (0, 0, 1).
"""
from __future__ import annotations

import numpy as np
from pydantic import BaseModel, Field

from rgbdg.core.scene_model import ActivationHeatmap
from rgbdg.utils.env_setup import get_logger
from rgbdg.utils.errors import DimensionMismatchError

logger = get_logger("Fusion")

INACTIVE_PIXEL = np.array([0.0, 0.0, 1.0])


class FusionConfig(BaseModel):
    t_rgb: float = Field(default=0.39, ge=0.0, le=1.0)


def active_mask(pixels: np.ndarray, threshold: float) -> np.ndarray:
    """True where max(red, green) is strictly above ``threshold``."""
    return np.maximum(pixels[..., 0], pixels[..., 1]) > threshold


def intersect(h_rgb: ActivationHeatmap, h_depth: ActivationHeatmap, cfg: FusionConfig | None = None) -> ActivationHeatmap:
    cfg = cfg or FusionConfig()
    if h_rgb.shape != h_depth.shape:
        raise DimensionMismatchError(
            f"cannot fuse {h_rgb.width}x{h_rgb.height} with {h_depth.width}x{h_depth.height}"
        )
    a, b = h_rgb.pixels, h_depth.pixels
    both = active_mask(a, cfg.t_rgb) & active_mask(b, cfg.t_rgb)
    # (a + b) / 2 is symmetric bit-for-bit, unlike a + (b - a) / 2
    fused = np.where(both[..., None], (a + b) / 2.0, INACTIVE_PIXEL)
    logger.debug(f"fusion: {int(both.sum())} of {both.size} pixels active in both heatmaps")
    return ActivationHeatmap(pixels=fused)
