from __future__ import annotations
import time
from contextlib import contextmanager
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from rgbdg.core.clustering import (
    ClusteringConfig,
    KMeansResult,
    ProposalSet,
    extract_features,
    gaussian_smooth,
    kmeans,
    rank_and_box,
    rank_clusters,
    refine_clusters,
    score_clusters,
)
from rgbdg.core.fusion import FusionConfig, intersect
from rgbdg.core.scene_model import ActivationHeatmap, Cluster, Mode, Scene, validate_scene
from rgbdg.core.segmentation import RegionCountConfig, count_regions, label_active
from rgbdg.utils.env_setup import get_logger
from rgbdg.utils.errors import MissingInputError
from rgbdg.utils.tracing import span


class Step(BaseModel):
    name: str
    detail: str = ""
    output: Optional[Dict[str, Any]] = None
    seconds: float = 0.0


class PipelineResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    proposals: ProposalSet
    h_int: ActivationHeatmap
    clusters: List[Cluster] = Field(default_factory=list)
    kmeans: Optional[KMeansResult] = None
    steps: List[Step] = Field(default_factory=list)


class Orchestrator:
    """Runs the grounding pipeline for one scene.

    rgbd: fuse -> label -> count -> smooth -> features -> K-means -> refine -> score -> rank.
    rgb:  the same chain on the RGB heatmap alone, with 5-D features.
    """

    def __init__(
        self,
        fusion_cfg: FusionConfig | None = None,
        region_cfg: RegionCountConfig | None = None,
        cluster_cfg: ClusteringConfig | None = None,
    ) -> None:
        self.logger = get_logger("Orchestrator")
        self.fusion_cfg = fusion_cfg or FusionConfig()
        self.region_cfg = region_cfg or RegionCountConfig()
        self.cluster_cfg = cluster_cfg or ClusteringConfig()

    @property
    def mode(self) -> Mode:
        return self.cluster_cfg.mode

    @contextmanager
    def _stage(self, steps: List[Step], name: str, scene_id: str):
        step = Step(name=name)
        start = time.perf_counter()
        with span(f"pipeline.{name}", {"scene": scene_id, "mode": self.mode.value}):
            yield step
        step.seconds = time.perf_counter() - start
        steps.append(step)
        self.logger.debug(f"[{scene_id}] {name}: {step.detail}")

    def run(self, scene: Scene) -> PipelineResult:
        scene = validate_scene(scene)
        steps: List[Step] = []
        sid = scene.id

        if self.mode == Mode.RGBD:
            if not scene.has_depth:
                raise MissingInputError(f"scene {sid}: rgbd mode needs depth_heatmap and depth_map")
            with self._stage(steps, "fuse", sid) as st:
                h_int = intersect(scene.rgb_heatmap, scene.depth_heatmap, self.fusion_cfg)
                st.detail = f"t_rgb={self.fusion_cfg.t_rgb}"
        else:
            h_int = scene.rgb_heatmap

        with self._stage(steps, "count_regions", sid) as st:
            mask = label_active(h_int, self.region_cfg)
            n = count_regions(mask, self.region_cfg)
            st.detail = f"N={n}"
            st.output = {"active_pixels": int(mask.labels.sum()), "n": n}

        with self._stage(steps, "smooth", sid) as st:
            h_s = gaussian_smooth(h_int, self.cluster_cfg)
            st.detail = f"kernel={self.cluster_cfg.kernel_size} sigma={self.cluster_cfg.kernel_sigma}"

        with self._stage(steps, "features", sid) as st:
            features = extract_features(h_s, scene.depth_map, self.cluster_cfg)
            active = int(features.reshape(-1, features.shape[-1]).any(axis=1).sum())
            st.detail = f"dim={features.shape[-1]} active={active}"
            st.output = {"active_pixels": active}

        with self._stage(steps, "kmeans", sid) as st:
            km = kmeans(features, n, self.cluster_cfg, scene_id=sid)
            st.detail = f"k={km.n_clusters} iterations={km.iterations}"
            st.output = {"k": km.n_clusters, "iterations": km.iterations, "converged": km.converged}

        with self._stage(steps, "refine", sid) as st:
            clusters = refine_clusters(km, features, self.cluster_cfg)
            st.detail = f"clusters={len(clusters)}"

        with self._stage(steps, "score_rank", sid) as st:
            clusters = rank_clusters(score_clusters(clusters, h_int, self.cluster_cfg))
            proposals = rank_and_box(clusters, scene_id=sid, mode=self.mode)
            st.detail = f"proposals={len(proposals.proposals)}"

        if not proposals.proposals:
            self.logger.info(f"[{sid}] no cluster survived filtering ({self.mode.value})")
        return PipelineResult(proposals=proposals, h_int=h_int, clusters=clusters, kmeans=km, steps=steps)


def propose(
    scene: Scene,
    fusion_cfg: FusionConfig | None = None,
    region_cfg: RegionCountConfig | None = None,
    cluster_cfg: ClusteringConfig | None = None,
) -> ProposalSet:
    """Ranked candidate boxes for the described object in ``scene``."""
    return Orchestrator(fusion_cfg, region_cfg, cluster_cfg).run(scene).proposals
