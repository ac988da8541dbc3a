"""
Clustering stages: Gaussian smoothing of the fused heatmap, per-pixel feature
vectors, seeded K-means, connectivity refinement, activation scoring and
ranking into bounding-box proposals.
"""
from __future__ import annotations
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import ndimage

from rgbdg.core.scene_model import ActivationHeatmap, BoundingBox, Cluster, DepthMap, Mode
from rgbdg.core.segmentation import label_components
from rgbdg.utils.env_setup import get_logger
from rgbdg.utils.errors import (
    DimensionMismatchError,
    InvalidKernelError,
    InvariantViolationError,
    MissingInputError,
)

logger = get_logger("Clustering")

# relative slack allowed when checking that Lloyd iterations never raise the SSE
SSE_TOLERANCE = 1e-9


class ClusteringConfig(BaseModel):
    kernel_size: int = 11
    kernel_sigma: float = Field(default=2.0, gt=0.0)
    post_smooth_active_threshold: float = Field(default=0.5, ge=0.0, le=1.0)
    active_channels: Literal["red_green", "red_blue"] = "red_green"
    min_cluster_area: int = Field(default=150, ge=1)
    connectivity: Literal[4, 8] = 8
    w_r: float = Field(default=0.7, ge=0.0, le=1.0)
    w_g: float = Field(default=0.3, ge=0.0, le=1.0)
    kmeans_seed: int = 42
    kmeans_max_iters: int = Field(default=300, ge=1)
    kmeans_tol: float = Field(default=1e-4, ge=0.0)
    mode: Mode = Mode.RGBD

    @field_validator("kernel_size")
    @classmethod
    def _odd_kernel(cls, v: int) -> int:
        check_kernel_size(v)
        return v

    @model_validator(mode="after")
    def _weights_sum_to_one(self) -> "ClusteringConfig":
        if abs(self.w_r + self.w_g - 1.0) > 1e-9:
            raise ValueError(f"w_r + w_g must equal 1, got {self.w_r} + {self.w_g}")
        return self


def check_kernel_size(size: int) -> None:
    if size < 1 or size % 2 == 0:
        raise InvalidKernelError(f"kernel size must be odd and >= 1, got {size}")


# ---------- Smoothing ----------

def gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    check_kernel_size(size)
    half = size // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def gaussian_kernel_2d(size: int, sigma: float) -> np.ndarray:
    k = gaussian_kernel_1d(size, sigma)
    return np.outer(k, k)


def gaussian_smooth(h_int: ActivationHeatmap, cfg: ClusteringConfig | None = None) -> ActivationHeatmap:
    """Separable normalized Gaussian per channel, reflect borders, clamped to [0, 1]."""
    cfg = cfg or ClusteringConfig()
    kernel = gaussian_kernel_1d(cfg.kernel_size, cfg.kernel_sigma)
    out = ndimage.correlate1d(h_int.pixels, kernel, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="reflect")
    return ActivationHeatmap(pixels=np.clip(out, 0.0, 1.0))


# ---------- Features ----------

def post_smooth_active(h_s: ActivationHeatmap, cfg: ClusteringConfig) -> np.ndarray:
    px = h_s.pixels
    other = px[..., 1] if cfg.active_channels == "red_green" else px[..., 2]
    return np.maximum(px[..., 0], other) > cfg.post_smooth_active_threshold


def extract_features(h_s: ActivationHeatmap, depth: Optional[DepthMap], cfg: ClusteringConfig | None = None) -> np.ndarray:
    """Per-pixel feature grid of shape (H, W, 6) in rgbd mode, (H, W, 5) in rgb mode.

    Active pixels carry (x, y, [depth,] r, g, b) normalized to [0, 1];
    inactive pixels carry the zero vector.
    """
    cfg = cfg or ClusteringConfig()
    h, w = h_s.shape
    use_depth = cfg.mode == Mode.RGBD
    if use_depth:
        if depth is None:
            raise MissingInputError("rgbd features need a depth map")
        if depth.shape != h_s.shape:
            raise DimensionMismatchError(
                f"depth map is {depth.width}x{depth.height}, heatmap is {w}x{h}"
            )
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    xs = xs / (w - 1) if w > 1 else np.zeros_like(xs)
    ys = ys / (h - 1) if h > 1 else np.zeros_like(ys)
    columns = [xs, ys]
    if use_depth:
        columns.append(depth.values)
    columns.extend([h_s.pixels[..., 0], h_s.pixels[..., 1], h_s.pixels[..., 2]])
    features = np.stack(columns, axis=-1)
    features[~post_smooth_active(h_s, cfg)] = 0.0
    return features


# ---------- K-means ----------

class KMeansResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    labels: np.ndarray
    centroids: np.ndarray
    n_clusters: int
    iterations: int
    converged: bool
    inertia_history: List[float]

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def _unique_points(points: np.ndarray):
    """Distinct rows with multiplicities and the inverse map back to ``points``.

    Zero rows (inactive pixels) dominate real inputs, so they are folded
    separately before the row-wise unique of the rest.
    """
    nonzero = points.any(axis=1)
    inverse = np.empty(points.shape[0], dtype=np.int64)
    parts, weights = [], []
    offset = 0
    if not nonzero.all():
        parts.append(np.zeros((1, points.shape[1])))
        weights.append(np.array([int((~nonzero).sum())]))
        inverse[~nonzero] = 0
        offset = 1
    if nonzero.any():
        uniq, inv, counts = np.unique(points[nonzero], axis=0, return_inverse=True, return_counts=True)
        parts.append(uniq)
        weights.append(counts)
        inverse[nonzero] = inv.reshape(-1) + offset
    return np.concatenate(parts, axis=0), np.concatenate(weights).astype(np.float64), inverse


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    out = np.empty((points.shape[0], centroids.shape[0]))
    for j, c in enumerate(centroids):
        diff = points - c
        out[:, j] = np.einsum("ij,ij->i", diff, diff)
    return out


def _kmeans_pp(points: np.ndarray, weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    chosen = [int(rng.choice(points.shape[0], p=weights / weights.sum()))]
    closest = _sq_distances(points, points[chosen])[:, 0]
    for _ in range(1, n):
        mass = weights * closest
        total = mass.sum()
        if total <= 0.0:
            # only reachable with duplicate points, which _unique_points removes
            idx = next(i for i in range(points.shape[0]) if i not in chosen)
        else:
            idx = int(rng.choice(points.shape[0], p=mass / total))
        chosen.append(idx)
        closest = np.minimum(closest, _sq_distances(points, points[idx:idx + 1])[:, 0])
    return points[chosen].copy()


def _weighted_means(points: np.ndarray, weights: np.ndarray, labels: np.ndarray, previous: np.ndarray) -> np.ndarray:
    k, dim = previous.shape
    mass = np.bincount(labels, weights=weights, minlength=k)
    sums = np.stack([np.bincount(labels, weights=weights * points[:, d], minlength=k) for d in range(dim)], axis=1)
    centroids = previous.copy()
    filled = mass > 0
    # empty clusters keep their previous centroid
    centroids[filled] = sums[filled] / mass[filled, None]
    return centroids


def _check_monotone(history: List[float], sse: float) -> None:
    if history and sse > history[-1] * (1.0 + SSE_TOLERANCE) + 1e-12:
        raise InvariantViolationError(
            f"K-means SSE increased from {history[-1]!r} to {sse!r} at iteration {len(history)}"
        )


def kmeans(features: np.ndarray, n: int, cfg: ClusteringConfig | None = None, scene_id: str = "") -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    ``features`` is any array whose last axis is the feature dimension; the
    returned labels have the shape of the leading axes. Identical vectors are
    clustered once with their multiplicity as weight, which is equivalent to
    clustering every vector individually.
    """
    cfg = cfg or ClusteringConfig()
    if n < 1:
        raise ValueError(f"cluster count must be >= 1, got {n}")
    features = np.asarray(features, dtype=np.float64)
    grid_shape = features.shape[:-1]
    points_all = features.reshape(-1, features.shape[-1])
    points, weights, inverse = _unique_points(points_all)

    n_eff = min(n, points.shape[0])
    if n_eff < n:
        logger.warning(
            f"scene {scene_id or '?'}: only {points.shape[0]} distinct feature vectors, "
            f"reducing K-means clusters from {n} to {n_eff}"
        )

    rng = np.random.default_rng(cfg.kmeans_seed)
    centroids = _kmeans_pp(points, weights, n_eff, rng)
    history: List[float] = []
    converged = False
    iterations = 0
    for iterations in range(1, cfg.kmeans_max_iters + 1):
        d2 = _sq_distances(points, centroids)
        labels = np.argmin(d2, axis=1)
        sse = float(np.dot(weights, d2[np.arange(points.shape[0]), labels]))
        _check_monotone(history, sse)
        history.append(sse)
        updated = _weighted_means(points, weights, labels, centroids)
        shift = float(np.sqrt(((updated - centroids) ** 2).sum(axis=1)).max())
        centroids = updated
        if shift < cfg.kmeans_tol:
            converged = True
            break

    d2 = _sq_distances(points, centroids)
    labels = np.argmin(d2, axis=1)
    sse = float(np.dot(weights, d2[np.arange(points.shape[0]), labels]))
    _check_monotone(history, sse)
    history.append(sse)
    logger.debug(f"kmeans: k={n_eff} iterations={iterations} converged={converged} sse={sse:.6g}")
    return KMeansResult(
        labels=labels[inverse].reshape(grid_shape),
        centroids=centroids,
        n_clusters=n_eff,
        iterations=iterations,
        converged=converged,
        inertia_history=history,
    )


# ---------- Refinement, scoring, ranking ----------

def refine_clusters(assignment: KMeansResult | np.ndarray, features: np.ndarray, cfg: ClusteringConfig | None = None) -> List[Cluster]:
    """Split every K-means cluster into connected pieces of active pixels and
    drop pieces below ``min_cluster_area``.

    Zero (inactive) feature vectors never join a kept cluster, whichever
    K-means label they carry, so the background never yields a proposal.
    """
    cfg = cfg or ClusteringConfig()
    labels = assignment.labels if isinstance(assignment, KMeansResult) else np.asarray(assignment)
    h, w = labels.shape
    active = np.asarray(features).reshape(h, w, -1).any(axis=-1)
    clusters: List[Cluster] = []
    dropped_small = 0
    for j in np.unique(labels):
        for comp in label_components((labels == j) & active, cfg.connectivity):
            if comp.size < cfg.min_cluster_area:
                dropped_small += 1
                continue
            clusters.append(Cluster.from_flat(comp, w))
    clusters.sort(key=lambda c: c.first_index)
    logger.debug(
        f"refine: kept {len(clusters)} clusters, dropped {dropped_small} small, "
        f"excluded {int((~active).sum())} background pixels"
    )
    return clusters


def score_clusters(clusters: List[Cluster], h_int: ActivationHeatmap, cfg: ClusteringConfig | None = None) -> List[Cluster]:
    """Mean of w_r * red + w_g * green over each cluster, read from ``h_int``."""
    cfg = cfg or ClusteringConfig()
    flat = h_int.pixels.reshape(-1, 3)
    weighted = cfg.w_r * flat[:, 0] + cfg.w_g * flat[:, 1]
    scored = []
    for c in clusters:
        activation = float(np.clip(weighted[c.pixels].mean(), 0.0, 1.0))
        scored.append(c.with_activation(activation))
    return scored


class RegionProposal(BaseModel):
    rank: int = Field(ge=1)
    box: BoundingBox
    activation: float = Field(ge=0.0, le=1.0)
    pixel_count: int = Field(ge=1)


class ProposalSet(BaseModel):
    scene_id: str
    mode: Mode
    proposals: List[RegionProposal] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_order(self) -> "ProposalSet":
        for i, p in enumerate(self.proposals):
            if p.rank != i + 1:
                raise ValueError(f"proposal ranks must be 1..k without gaps, got {p.rank} at position {i + 1}")
            if i and p.activation > self.proposals[i - 1].activation:
                raise ValueError("proposal activations must be non-increasing")
        return self

    def top(self, k: int = 3) -> List[RegionProposal]:
        return self.proposals[:k]

    def boxes_within(self, width: int, height: int) -> bool:
        return all(p.box.within(width, height) for p in self.proposals)


def rank_clusters(clusters: List[Cluster]) -> List[Cluster]:
    """Activation descending, then larger cluster, then earlier row-major start."""
    return sorted(clusters, key=lambda c: (-(c.activation or 0.0), -c.pixel_count, c.first_index))


def rank_and_box(clusters: List[Cluster], scene_id: str = "", mode: Mode = Mode.RGBD) -> ProposalSet:
    ranked = rank_clusters(clusters)
    proposals = [
        RegionProposal(rank=i + 1, box=c.box, activation=c.activation or 0.0, pixel_count=c.pixel_count)
        for i, c in enumerate(ranked)
    ]
    return ProposalSet(scene_id=scene_id, mode=mode, proposals=proposals)
