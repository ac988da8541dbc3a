from __future__ import annotations
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from rgbdg.core.clustering import ClusteringConfig, ProposalSet
from rgbdg.core.evaluation import EvaluationReport, MatchReport, build_report, match_rank
from rgbdg.core.fusion import FusionConfig
from rgbdg.core.orchestrator import Orchestrator, Step
from rgbdg.core.scene_model import Mode
from rgbdg.core.segmentation import RegionCountConfig
from rgbdg.services.providers import get_provider
from rgbdg.services.scene_io import DatasetManifest, ManifestEntry
from rgbdg.utils import metrics
from rgbdg.utils.env_setup import get_logger
from rgbdg.utils.tracing import setup_tracing, span

logger = get_logger("BatchService")


class PipelineConfigs(BaseModel):
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    region: RegionCountConfig = Field(default_factory=RegionCountConfig)
    clustering: ClusteringConfig = Field(default_factory=ClusteringConfig)

    def for_mode(self, mode: Mode) -> ClusteringConfig:
        return self.clustering.model_copy(update={"mode": mode})


class SceneJob(BaseModel):
    entry: ManifestEntry
    base_dir: Optional[str] = None
    modes: List[Mode]
    configs: PipelineConfigs


class SceneOutcome(BaseModel):
    scene_id: str
    proposals: List[ProposalSet]
    reports: List[MatchReport]
    steps: Dict[str, List[Step]] = Field(default_factory=dict)


# ---- Job function (runs in a worker process) ----

def job_evaluate_scene(job: SceneJob) -> SceneOutcome:
    entry = job.entry
    provider = get_provider(entry.provider)
    load_mode = Mode.RGBD if Mode.RGBD in job.modes else Mode.RGB
    with span("batch.scene", {"scene": entry.scene_id}):
        scene = provider.provide(entry, load_mode, job.base_dir)
        proposals, reports, steps = [], [], {}
        for mode in job.modes:
            orch = Orchestrator(job.configs.fusion, job.configs.region, job.configs.for_mode(mode))
            result = orch.run(scene)
            proposals.append(result.proposals)
            reports.append(match_rank(result.proposals, scene.ground_truth, scene.category))
            steps[mode.value] = result.steps
    return SceneOutcome(scene_id=entry.scene_id, proposals=proposals, reports=reports, steps=steps)


def _record(outcome: SceneOutcome) -> None:
    for ps in outcome.proposals:
        metrics.record_scene(ps.mode.value, len(ps.proposals))
    for r in outcome.reports:
        metrics.record_match(r.mode.value, r.matched_rank.value)
    for steps in outcome.steps.values():
        for st in steps:
            metrics.observe_stage(st.name, st.seconds)


def run_batch(
    manifest: DatasetManifest,
    modes: List[Mode],
    configs: PipelineConfigs | None = None,
    workers: int = 1,
) -> List[SceneOutcome]:
    """Process every manifest entry; results come back in manifest order
    whatever the worker count."""
    configs = configs or PipelineConfigs()
    jobs = [SceneJob(entry=e, base_dir=manifest.base_dir, modes=modes, configs=configs) for e in manifest.entries]
    logger.info(f"Running {len(jobs)} scenes in modes {[m.value for m in modes]} with {workers} worker(s)")
    if workers <= 1 or len(jobs) <= 1:
        outcomes = [job_evaluate_scene(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=setup_tracing) as pool:
            outcomes = list(pool.map(job_evaluate_scene, jobs))
    for o in outcomes:
        _record(o)
    return outcomes


def evaluate_manifest(
    manifest: DatasetManifest,
    modes: List[Mode],
    configs: PipelineConfigs | None = None,
    workers: int = 1,
) -> tuple[EvaluationReport, List[SceneOutcome]]:
    outcomes = run_batch(manifest, modes, configs, workers)
    reports = [r for o in outcomes for r in o.reports]
    return build_report(reports, modes), outcomes
