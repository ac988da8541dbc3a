"""
File formats for scenes, rasters, manifests, proposals and reports.

Rasters: binary PPM (P6) / PGM (P5) or a float CSV whose first line is
``width,height``. Heatmap CSV rows hold ``r,g,b`` triples for every column;
depth CSV rows hold one value per column. JSON outputs round floats to 9
significant digits and sort keys so reruns are byte-identical.
"""
from __future__ import annotations
import json
import math
import os
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, PrivateAttr, ValidationError, field_validator

from rgbdg.core.clustering import ProposalSet, RegionProposal
from rgbdg.core.evaluation import EvaluationReport
from rgbdg.core.scene_model import ActivationHeatmap, BoundingBox, Category, DepthMap, Mode, Scene
from rgbdg.utils.config import resolve_data_path
from rgbdg.utils.env_setup import get_logger
from rgbdg.utils.errors import (
    DuplicateSceneIdError,
    MalformedHeaderError,
    MissingInputError,
    SchemaViolationError,
    TruncatedPayloadError,
    ValueOutOfRangeError,
)

logger = get_logger("SceneIO")

_WHITESPACE = b" \t\r\n\v\f"


# ---------- PNM ----------

def _parse_pnm_header(data: bytes, magic: bytes, path: str) -> Tuple[int, int, int, int]:
    """Returns (width, height, maxval, payload_offset)."""
    if data[:2] != magic:
        raise MalformedHeaderError(f"expected magic {magic.decode()}, found {data[:2]!r}", path, 0)
    pos = 2
    values: List[int] = []
    while len(values) < 3:
        if pos < len(data) and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
            raise MalformedHeaderError("expected whitespace between header fields", path, pos)
        while pos < len(data):
            c = data[pos]
            if c in _WHITESPACE:
                pos += 1
            elif c == ord("#"):
                while pos < len(data) and data[pos] not in (10, 13):
                    pos += 1
            else:
                break
        start = pos
        while pos < len(data) and 48 <= data[pos] <= 57:
            pos += 1
        if start == pos:
            raise MalformedHeaderError("expected a decimal header field", path, start)
        values.append(int(data[start:pos]))
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise MalformedHeaderError("expected one whitespace byte after maxval", path, pos)
    width, height, maxval = values
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"image must be at least 1x1, got {width}x{height}", path, 2)
    if not 1 <= maxval <= 65535:
        raise MalformedHeaderError(f"maxval must be in [1, 65535], got {maxval}", path, pos)
    return width, height, maxval, pos + 1


def _read_pnm(path: str, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    width, height, maxval, offset = _parse_pnm_header(data, magic, path)
    sample_bytes = 1 if maxval < 256 else 2
    count = width * height * channels
    needed = count * sample_bytes
    if len(data) - offset < needed:
        raise TruncatedPayloadError(
            f"payload needs {needed} bytes for {width}x{height}, found {len(data) - offset}", path, len(data)
        )
    dtype = np.uint8 if sample_bytes == 1 else np.dtype(">u2")
    samples = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    over = np.flatnonzero(samples > maxval)
    if over.size:
        raise ValueOutOfRangeError(f"sample exceeds maxval {maxval}", path, offset + int(over[0]) * sample_bytes)
    shape = (height, width, channels) if channels > 1 else (height, width)
    return samples.astype(np.float64).reshape(shape) / maxval


def _pnm_bytes(magic: bytes, width: int, height: int, maxval: int, payload: bytes) -> bytes:
    return magic + f"\n{width} {height}\n{maxval}\n".encode("ascii") + payload


def _quantize(values: np.ndarray, maxval: int) -> np.ndarray:
    return np.rint(np.clip(values, 0.0, 1.0) * maxval)


# ---------- CSV ----------

def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _read_text(path: str) -> str:
    """Whole file as UTF-8 text; decoding errors surface as ``UnicodeDecodeError``."""
    with open(path, "rb") as f:
        raw = f.read()
    return raw.decode("utf-8")


def _line_of(e: UnicodeDecodeError) -> int:
    return e.object[:e.start].count(b"\n") + 1


def _read_csv_raster(path: str, per_cell: int) -> np.ndarray:
    try:
        text = _read_text(path)
    except UnicodeDecodeError as e:
        raise ValueOutOfRangeError(f"invalid UTF-8: {e.reason}", path, e.start)
    lines = text.replace("\r\n", "\n").split("\n")
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MalformedHeaderError("empty file, expected 'width,height'", path, "1:1")
    header = lines[0].split(",")
    try:
        width, height = (int(t.strip()) for t in header)
    except ValueError:
        raise MalformedHeaderError(f"expected 'width,height', found {lines[0]!r}", path, "1:1")
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"image must be at least 1x1, got {width}x{height}", path, "1:1")
    if len(lines) - 1 < height:
        raise TruncatedPayloadError(f"expected {height} rows, found {len(lines) - 1}", path, f"{len(lines) + 1}:1")
    if len(lines) - 1 > height:
        raise TruncatedPayloadError(f"expected {height} rows, found {len(lines) - 1}", path, f"{height + 2}:1")
    expected = width * per_cell
    out = np.empty((height, expected), dtype=np.float64)
    for y in range(height):
        lineno = y + 2
        tokens = lines[y + 1].split(",")
        if len(tokens) != expected:
            raise TruncatedPayloadError(f"row has {len(tokens)} values, expected {expected}", path, f"{lineno}:1")
        for i, tok in enumerate(tokens):
            try:
                v = float(tok)
            except ValueError:
                raise ValueOutOfRangeError(f"{tok.strip()!r} is not a number", path, f"{lineno}:{i + 1}")
            if not (math.isfinite(v) and 0.0 <= v <= 1.0):
                raise ValueOutOfRangeError(f"value {tok.strip()} outside [0, 1]", path, f"{lineno}:{i + 1}")
            out[y, i] = v
    return out.reshape(height, width, per_cell) if per_cell > 1 else out


def _write_csv_raster(path: str, values: np.ndarray) -> None:
    height, width = values.shape[:2]
    rows = values.reshape(height, -1)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{width},{height}\n")
        for row in rows:
            f.write(",".join(_fmt(float(v)) for v in row) + "\n")


def _ext(path: str) -> str:
    return os.path.splitext(path)[1].lower()


# ---------- Rasters ----------

def read_heatmap(path: str) -> ActivationHeatmap:
    ext = _ext(path)
    if ext == ".ppm":
        return ActivationHeatmap(pixels=_read_pnm(path, b"P6", 3))
    if ext == ".csv":
        return ActivationHeatmap(pixels=_read_csv_raster(path, 3))
    raise MalformedHeaderError(f"unsupported heatmap extension {ext!r} (use .ppm or .csv)", path, 0)


def write_heatmap(heatmap: ActivationHeatmap, path: str) -> str:
    ext = _ext(path)
    if ext == ".ppm":
        payload = _quantize(heatmap.pixels, 255).astype(np.uint8).tobytes()
        with open(path, "wb") as f:
            f.write(_pnm_bytes(b"P6", heatmap.width, heatmap.height, 255, payload))
    elif ext == ".csv":
        _write_csv_raster(path, heatmap.pixels)
    else:
        raise MalformedHeaderError(f"unsupported heatmap extension {ext!r} (use .ppm or .csv)", path, 0)
    return path


def read_depth(path: str) -> DepthMap:
    ext = _ext(path)
    if ext == ".pgm":
        return DepthMap(values=_read_pnm(path, b"P5", 1))
    if ext == ".csv":
        return DepthMap(values=_read_csv_raster(path, 1))
    raise MalformedHeaderError(f"unsupported depth extension {ext!r} (use .pgm or .csv)", path, 0)


def write_depth(depth: DepthMap, path: str) -> str:
    ext = _ext(path)
    if ext == ".pgm":
        payload = _quantize(depth.values, 65535).astype(">u2").tobytes()
        with open(path, "wb") as f:
            f.write(_pnm_bytes(b"P5", depth.width, depth.height, 65535, payload))
    elif ext == ".csv":
        _write_csv_raster(path, depth.values)
    else:
        raise MalformedHeaderError(f"unsupported depth extension {ext!r} (use .pgm or .csv)", path, 0)
    return path


def write_ppm(pixels: np.ndarray, path: str) -> str:
    """Write an already-quantized H x W x 3 uint8 image as P6."""
    height, width = pixels.shape[:2]
    with open(path, "wb") as f:
        f.write(_pnm_bytes(b"P6", width, height, 255, np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()))
    return path


# ---------- Manifest ----------

class ManifestEntry(BaseModel):
    scene_id: str
    rgb_heatmap_path: Optional[str] = None
    depth_heatmap_path: Optional[str] = None
    depth_map_path: Optional[str] = None
    expression: str = ""
    ground_truth: List[int] = Field(min_length=4, max_length=4)
    category: Category = Category.EASY
    provider: str = "files"
    synth: Optional[Dict[str, Any]] = None

    @field_validator("scene_id")
    @classmethod
    def _non_empty_id(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("scene_id must not be empty")
        return v

    @field_validator("ground_truth")
    @classmethod
    def _ordered_box(cls, v: List[int]) -> List[int]:
        if v[0] > v[2] or v[1] > v[3]:
            raise ValueError(f"ground truth {v} violates min <= max")
        return v

    @property
    def box(self) -> BoundingBox:
        return BoundingBox.from_list(self.ground_truth)


class DatasetManifest(BaseModel):
    entries: List[ManifestEntry] = Field(default_factory=list)
    _base_dir: str = PrivateAttr(default=".")

    @property
    def base_dir(self) -> str:
        return self._base_dir

    def resolve(self, path: Optional[str]) -> Optional[str]:
        return resolve_data_path(path, self._base_dir) if path else None

    def get(self, scene_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.scene_id == scene_id:
                return e
        raise SchemaViolationError(f"no entry with scene_id {scene_id!r}", "entries")


def _field_path(err: ValidationError) -> str:
    first = err.errors()[0]
    return ".".join(str(p) for p in first.get("loc", ()))


def parse_manifest(data: Any, base_dir: str = ".") -> DatasetManifest:
    try:
        manifest = DatasetManifest.model_validate(data)
    except ValidationError as e:
        raise SchemaViolationError(e.errors()[0].get("msg", "invalid manifest"), _field_path(e))
    seen: Dict[str, int] = {}
    for i, entry in enumerate(manifest.entries):
        if entry.scene_id in seen:
            raise DuplicateSceneIdError(
                f"duplicate scene_id {entry.scene_id!r} (first at entries.{seen[entry.scene_id]})",
                f"entries.{i}.scene_id",
            )
        seen[entry.scene_id] = i
    manifest._base_dir = base_dir
    return manifest


def read_manifest(path: str) -> DatasetManifest:
    path = resolve_data_path(path)
    if not os.path.isfile(path):
        raise MissingInputError("manifest not found", path)
    try:
        data = json.loads(_read_text(path))
    except UnicodeDecodeError as e:
        raise SchemaViolationError(f"invalid UTF-8 at byte {e.start}: {e.reason}", f"line {_line_of(e)}")
    except json.JSONDecodeError as e:
        raise SchemaViolationError(f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}")
    manifest = parse_manifest(data, os.path.dirname(os.path.abspath(path)))
    logger.info(f"Loaded manifest {path} with {len(manifest.entries)} entries")
    return manifest


def write_manifest(manifest: DatasetManifest, path: str) -> str:
    data = {"entries": [e.model_dump(mode="json", exclude_none=True) for e in manifest.entries]}
    _write_json(data, path)
    return path


def _require(path: Optional[str], what: str, scene_id: str) -> str:
    if not path:
        raise MissingInputError(f"scene {scene_id}: no {what} path given")
    if not os.path.isfile(path):
        raise MissingInputError(f"scene {scene_id}: {what} not found", path)
    return path


def load_scene(entry: ManifestEntry, mode: Mode, base_dir: Optional[str] = None) -> Scene:
    """Read the rasters named by ``entry``. RGB-only loads never open depth files."""
    resolve = (lambda p: resolve_data_path(p, base_dir) if p else None)
    rgb = read_heatmap(_require(resolve(entry.rgb_heatmap_path), "rgb heatmap", entry.scene_id))
    depth_heatmap = depth_map = None
    if mode == Mode.RGBD:
        depth_heatmap = read_heatmap(_require(resolve(entry.depth_heatmap_path), "depth heatmap", entry.scene_id))
        depth_map = read_depth(_require(resolve(entry.depth_map_path), "depth map", entry.scene_id))
    return Scene(
        id=entry.scene_id,
        rgb_heatmap=rgb,
        depth_heatmap=depth_heatmap,
        depth_map=depth_map,
        expression=entry.expression,
        ground_truth=entry.box,
        category=entry.category,
    )


# ---------- JSON outputs ----------

def round_floats(obj: Any) -> Any:
    """Round every float to 9 significant digits, recursively."""
    if isinstance(obj, float):
        return float(_fmt(obj))
    if isinstance(obj, dict):
        return {k: round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v) for v in obj]
    return obj


def dumps(obj: Any, indent: Optional[int] = None) -> str:
    return json.dumps(round_floats(obj), sort_keys=True, indent=indent, separators=(",", ": ") if indent else (",", ":"))


def _write_json(data: Any, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps(data, indent=2) + "\n")
    os.replace(tmp, path)


def proposal_records(proposals: ProposalSet) -> List[Dict[str, Any]]:
    return [
        {
            "scene_id": proposals.scene_id,
            "mode": proposals.mode.value,
            "rank": p.rank,
            "box": p.box.as_list(),
            "activation": p.activation,
            "pixel_count": p.pixel_count,
        }
        for p in proposals.proposals
    ]


def write_proposals(sets: Union[ProposalSet, Iterable[ProposalSet]], path: str) -> str:
    """JSON Lines, one object per proposal. Empty sets contribute no lines."""
    if isinstance(sets, ProposalSet):
        sets = [sets]
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        for s in sets:
            for rec in proposal_records(s):
                f.write(dumps(rec) + "\n")
    os.replace(tmp, path)
    return path


def read_proposals(path: str) -> List[ProposalSet]:
    """Parse a proposals file back into sets, grouped by (scene_id, mode) in file order."""
    if not os.path.isfile(path):
        raise MissingInputError("proposals file not found", path)
    groups: Dict[Tuple[str, str], List[RegionProposal]] = {}
    try:
        text = _read_text(path)
    except UnicodeDecodeError as e:
        raise SchemaViolationError(f"invalid UTF-8 at byte {e.start}: {e.reason}", f"line {_line_of(e)}")
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            key = (str(rec["scene_id"]), str(rec["mode"]))
            groups.setdefault(key, []).append(
                RegionProposal(
                    rank=rec["rank"],
                    box=BoundingBox.from_list(rec["box"]),
                    activation=rec["activation"],
                    pixel_count=rec["pixel_count"],
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise SchemaViolationError(str(e), f"line {lineno}")
    try:
        return [ProposalSet(scene_id=sid, mode=mode, proposals=props) for (sid, mode), props in groups.items()]
    except ValidationError as e:
        raise SchemaViolationError(e.errors()[0].get("msg", "invalid proposals"), _field_path(e))


def write_report(report: EvaluationReport, path: str) -> str:
    _write_json(report.model_dump(mode="json"), path)
    return path


RASTER_FORMATS = {"ppm": (".ppm", ".pgm"), "csv": (".csv", ".csv")}


def write_scene(scene: Scene, out_dir: str, fmt: str = "ppm") -> ManifestEntry:
    """Write a scene's rasters under ``out_dir/<scene id>/`` and return its
    manifest entry with paths relative to ``out_dir``."""
    if fmt not in RASTER_FORMATS:
        raise SchemaViolationError(f"unknown raster format {fmt!r}", "format")
    heat_ext, depth_ext = RASTER_FORMATS[fmt]
    rel_dir = scene.id
    os.makedirs(os.path.join(out_dir, rel_dir), exist_ok=True)
    rel = {
        "rgb_heatmap_path": f"{rel_dir}/rgb_heatmap{heat_ext}",
        "depth_heatmap_path": f"{rel_dir}/depth_heatmap{heat_ext}",
        "depth_map_path": f"{rel_dir}/depth_map{depth_ext}",
    }
    write_heatmap(scene.rgb_heatmap, os.path.join(out_dir, rel["rgb_heatmap_path"]))
    if scene.depth_heatmap is not None:
        write_heatmap(scene.depth_heatmap, os.path.join(out_dir, rel["depth_heatmap_path"]))
    else:
        rel.pop("depth_heatmap_path")
    if scene.depth_map is not None:
        write_depth(scene.depth_map, os.path.join(out_dir, rel["depth_map_path"]))
    else:
        rel.pop("depth_map_path")
    return ManifestEntry(
        scene_id=scene.id,
        expression=scene.expression,
        ground_truth=scene.ground_truth.as_list(),
        category=scene.category,
        **rel,
    )
