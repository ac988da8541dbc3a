"""
Core domain types shared by every stage of the grounding pipeline.

Rasters are numpy arrays in row-major order with the origin at the top-left
(x grows rightward, y downward). They are copied and made read-only on
construction, so validated objects can be shared between workers freely.
"""
from __future__ import annotations
from enum import Enum
from typing import Any, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from rgbdg.utils.errors import DegenerateBoxError, DimensionMismatchError, OutOfRangeError


class Mode(str, Enum):
    RGBD = "rgbd"
    RGB = "rgb"


class Category(str, Enum):
    EASY = "easy"
    DIFFICULT = "difficult"


def _frozen_array(value: Any, ndim: int, what: str) -> np.ndarray:
    arr = np.array(value, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise DimensionMismatchError(f"{what} must be a {ndim}-D array, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatchError(f"{what} must be at least 1x1, got shape {arr.shape}")
    _check_unit_range(arr, what)
    arr.setflags(write=False)
    return arr


def _check_unit_range(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise OutOfRangeError(f"{what} contains non-finite values")
    lo, hi = float(arr.min()), float(arr.max())
    if lo < 0.0 or hi > 1.0:
        raise OutOfRangeError(f"{what} values must lie in [0, 1], found [{lo}, {hi}]")


class RasterModel(BaseModel):
    """Base for models holding numpy arrays: compares arrays element-wise."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    def __eq__(self, other: object) -> bool:
        if type(self) is not type(other):
            return NotImplemented
        for name in type(self).model_fields:
            a, b = getattr(self, name), getattr(other, name)
            if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
                if a is None or b is None or not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None  # type: ignore[assignment]


class BoundingBox(BaseModel):
    """Axis-aligned box with inclusive pixel corners."""
    model_config = ConfigDict(frozen=True)

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    @model_validator(mode="after")
    def _check_order(self) -> "BoundingBox":
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise DegenerateBoxError(
                f"box ({self.x_min},{self.y_min},{self.x_max},{self.y_max}) violates min <= max"
            )
        return self

    @classmethod
    def from_list(cls, values) -> "BoundingBox":
        x_min, y_min, x_max, y_max = (int(v) for v in values)
        return cls(x_min=x_min, y_min=y_min, x_max=x_max, y_max=y_max)

    @classmethod
    def from_pixels(cls, xs: np.ndarray, ys: np.ndarray) -> "BoundingBox":
        """Minimal box covering the given pixel coordinates."""
        return cls(x_min=int(xs.min()), y_min=int(ys.min()), x_max=int(xs.max()), y_max=int(ys.max()))

    def as_list(self) -> list[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0

    def contains(self, x: int, y: int) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def within(self, width: int, height: int) -> bool:
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max < width and self.y_max < height


class ActivationHeatmap(RasterModel):
    """H x W x 3 activation intensities (red = high, blue = low)."""
    pixels: np.ndarray

    @field_validator("pixels", mode="before")
    @classmethod
    def _validate_pixels(cls, v: Any) -> np.ndarray:
        arr = _frozen_array(v, 3, "heatmap")
        if arr.shape[2] != 3:
            raise DimensionMismatchError(f"heatmap must have 3 channels, got {arr.shape[2]}")
        return arr

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    def pixel(self, x: int, y: int) -> Tuple[float, float, float]:
        r, g, b = self.pixels[y, x]
        return float(r), float(g), float(b)

    @classmethod
    def filled(cls, width: int, height: int, rgb: Tuple[float, float, float]) -> "ActivationHeatmap":
        return cls(pixels=np.broadcast_to(np.asarray(rgb, dtype=np.float64), (height, width, 3)))


class DepthMap(RasterModel):
    """H x W normalized depth; 0 is nearest, 1 farthest."""
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _validate_values(cls, v: Any) -> np.ndarray:
        return _frozen_array(v, 2, "depth map")

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width


class Scene(RasterModel):
    """One grounding instance.

    ``depth_heatmap`` and ``depth_map`` are absent only for RGB-only loads.
    """
    id: str
    rgb_heatmap: ActivationHeatmap
    depth_heatmap: Optional[ActivationHeatmap] = None
    depth_map: Optional[DepthMap] = None
    expression: str = ""
    ground_truth: BoundingBox
    category: Category = Category.EASY

    @model_validator(mode="after")
    def _check_scene(self) -> "Scene":
        _check_scene_invariants(self)
        return self

    @property
    def width(self) -> int:
        return self.rgb_heatmap.width

    @property
    def height(self) -> int:
        return self.rgb_heatmap.height

    @property
    def has_depth(self) -> bool:
        return self.depth_heatmap is not None and self.depth_map is not None


class Cluster(RasterModel):
    """A connected pixel set with its minimal box and (once scored) activation.

    ``pixels`` holds sorted row-major flat indices into an image of ``width`` columns.
    """
    pixels: np.ndarray
    width: int
    box: BoundingBox
    activation: Optional[float] = None

    @field_validator("pixels", mode="before")
    @classmethod
    def _validate_pixels(cls, v: Any) -> np.ndarray:
        arr = np.unique(np.asarray(v, dtype=np.int64))
        if arr.size == 0:
            raise DegenerateBoxError("cluster must contain at least one pixel")
        arr.setflags(write=False)
        return arr

    @classmethod
    def from_flat(cls, flat: np.ndarray, width: int) -> "Cluster":
        flat = np.asarray(flat, dtype=np.int64)
        ys, xs = np.divmod(flat, width)
        return cls(pixels=flat, width=width, box=BoundingBox.from_pixels(xs, ys))

    @property
    def pixel_count(self) -> int:
        return int(self.pixels.size)

    @property
    def first_index(self) -> int:
        return int(self.pixels[0])

    def coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """(xs, ys) of the member pixels."""
        ys, xs = np.divmod(self.pixels, self.width)
        return xs, ys

    def pixel_set(self) -> set[Tuple[int, int]]:
        xs, ys = self.coordinates()
        return set(zip(xs.tolist(), ys.tolist()))

    def with_activation(self, activation: float) -> "Cluster":
        return self.model_copy(update={"activation": float(activation)})


def _check_scene_invariants(scene: Scene) -> None:
    shape = scene.rgb_heatmap.shape
    for name in ("depth_heatmap", "depth_map"):
        raster = getattr(scene, name)
        if raster is not None and raster.shape != shape:
            raise DimensionMismatchError(
                f"scene {scene.id}: {name} is {raster.width}x{raster.height}, "
                f"rgb_heatmap is {shape[1]}x{shape[0]}"
            )
    if not scene.ground_truth.within(shape[1], shape[0]):
        raise OutOfRangeError(
            f"scene {scene.id}: ground truth {scene.ground_truth.as_list()} outside {shape[1]}x{shape[0]} image"
        )


def validate_scene(scene: Scene) -> Scene:
    """Re-check every scene invariant and return the scene unchanged.

    Scenes built normally are validated on construction; this also covers
    objects assembled with ``model_construct`` or rasters swapped after the fact.
    """
    for name in ("rgb_heatmap", "depth_heatmap"):
        hm = getattr(scene, name)
        if hm is not None:
            if hm.pixels.ndim != 3 or hm.pixels.shape[2] != 3:
                raise DimensionMismatchError(f"scene {scene.id}: {name} must be H x W x 3")
            _check_unit_range(hm.pixels, f"scene {scene.id}: {name}")
    if scene.depth_map is not None:
        _check_unit_range(scene.depth_map.values, f"scene {scene.id}: depth_map")
    box = scene.ground_truth
    if box.x_min > box.x_max or box.y_min > box.y_max:
        raise DegenerateBoxError(f"scene {scene.id}: ground truth {box.as_list()} violates min <= max")
    _check_scene_invariants(scene)
    return scene
