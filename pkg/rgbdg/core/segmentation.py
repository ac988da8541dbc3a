"""
Binary activity labelling of the fused heatmap and connected-region counting,
which fixes the number of K-means clusters.
"""
from __future__ import annotations
from typing import List, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import ndimage

from rgbdg.core.scene_model import ActivationHeatmap
from rgbdg.utils.env_setup import get_logger

logger = get_logger("Segmentation")


class RegionCountConfig(BaseModel):
    high_activity_threshold: float = Field(default=0.9, ge=0.0, le=1.0)
    min_region_area: int = Field(default=150, ge=1)
    count_background: bool = True
    connectivity: Literal[4, 8] = 8


class BinaryMask(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    labels: np.ndarray

    @field_validator("labels", mode="before")
    @classmethod
    def _as_bool(cls, v) -> np.ndarray:
        arr = np.array(v, dtype=bool, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        arr.setflags(write=False)
        return arr

    @property
    def width(self) -> int:
        return int(self.labels.shape[1])

    @property
    def height(self) -> int:
        return int(self.labels.shape[0])


def structure_for(connectivity: int) -> np.ndarray:
    if connectivity == 8:
        return np.ones((3, 3), dtype=bool)
    if connectivity == 4:
        return ndimage.generate_binary_structure(2, 1)
    raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")


def label_active(h_int: ActivationHeatmap, cfg: RegionCountConfig | None = None) -> BinaryMask:
    cfg = cfg or RegionCountConfig()
    px = h_int.pixels
    return BinaryMask(labels=np.maximum(px[..., 0], px[..., 1]) > cfg.high_activity_threshold)


def label_components(mask: np.ndarray, connectivity: int = 8) -> List[np.ndarray]:
    """Maximal connected components of a boolean array.

    Each component is a sorted array of row-major flat indices; components are
    ordered by their smallest flat index.
    """
    labeled, count = ndimage.label(mask, structure=structure_for(connectivity))
    if count == 0:
        return []
    flat = labeled.ravel()
    members = np.flatnonzero(flat)
    # stable sort keeps indices ascending inside each label group
    order = members[np.argsort(flat[members], kind="stable")]
    bounds = np.concatenate([[0], np.cumsum(np.bincount(flat[members], minlength=count + 1)[1:])])
    components = [order[bounds[i]:bounds[i + 1]] for i in range(count)]
    components.sort(key=lambda c: int(c[0]))
    return components


def connected_components(mask: BinaryMask, connectivity: int = 8) -> List[np.ndarray]:
    return label_components(mask.labels, connectivity)


def count_regions(mask: BinaryMask, cfg: RegionCountConfig | None = None) -> int:
    cfg = cfg or RegionCountConfig()
    components = connected_components(mask, cfg.connectivity)
    kept = sum(1 for c in components if c.size >= cfg.min_region_area)
    n = kept + (1 if cfg.count_background else 0)
    logger.debug(f"regions: {len(components)} components, {kept} >= {cfg.min_region_area} px, N={n}")
    # without background counting an empty mask still needs one cluster
    return max(n, 1)
