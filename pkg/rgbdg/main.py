"""
Command-line entry point.

    python -m rgbdg propose  --scene scene.json --mode rgbd --out proposals.jsonl
    python -m rgbdg evaluate --manifest manifest.json --modes rgbd,rgb --report report.json
    python -m rgbdg synth    --preset depth-critical --count 50 --seed 0 --out data/
    python -m rgbdg overlay  --scene scene.json --proposals proposals.jsonl --out overlay.ppm

Exit codes: 0 success, 2 usage or input error, 3 internal invariant violation.
"""
from __future__ import annotations
import argparse
import json
import os
import sys
from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, ValidationError

from rgbdg.core.clustering import ClusteringConfig, ProposalSet
from rgbdg.core.evaluation import RANK_ORDER, EvaluationReport
from rgbdg.core.fusion import FusionConfig
from rgbdg.core.orchestrator import Orchestrator
from rgbdg.core.scene_model import Mode
from rgbdg.core.segmentation import RegionCountConfig
from rgbdg.core.synth import SynthSpec, depth_critical_preset, generate, render_overlay
from rgbdg.services.batch_service import PipelineConfigs, evaluate_manifest
from rgbdg.services.providers import get_provider
from rgbdg.services.scene_io import (
    RASTER_FORMATS,
    DatasetManifest,
    ManifestEntry,
    read_heatmap,
    read_manifest,
    read_proposals,
    write_manifest,
    write_proposals,
    write_report,
    write_scene,
)
from rgbdg.utils import metrics
from rgbdg.utils.config import Settings, resolve_data_path
from rgbdg.utils.env_setup import get_logger, set_level
from rgbdg.utils.errors import (
    GroundingError,
    InvalidSpecError,
    InvariantViolationError,
    MissingInputError,
    SchemaViolationError,
)
from rgbdg.utils.tracing import setup_tracing, span

logger = get_logger("rgbdg")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INTERNAL = 3

PRESETS = ("depth-critical",)


class RunConfig(BaseModel):
    """Everything a command needs besides its input and output paths."""
    modes: List[Mode] = Field(default_factory=lambda: [Mode.RGBD])
    workers: int = Field(default=1, ge=1)
    metrics_file: Optional[str] = None
    configs: PipelineConfigs = Field(default_factory=PipelineConfigs)


# ---------- Argument parsing ----------

def _box(text: str) -> List[int]:
    try:
        values = [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x_min,y_min,x_max,y_max, got {text!r}")
    if len(values) != 4:
        raise argparse.ArgumentTypeError(f"expected 4 integers, got {len(values)}")
    return values


def _add_tunables(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("pipeline tunables (defaults in parentheses)")
    g.add_argument("--t-rgb", type=float, help="fusion activity threshold (0.39)")
    g.add_argument("--high-activity-threshold", type=float, help="region-count threshold (0.9)")
    g.add_argument("--min-region-area", type=int, help="smallest counted region in pixels (150)")
    g.add_argument("--no-count-background", action="store_true", help="do not add one cluster for background")
    g.add_argument("--connectivity", type=int, choices=(4, 8), help="pixel connectivity (8)")
    g.add_argument("--kernel-size", type=int, help="odd Gaussian kernel size (11)")
    g.add_argument("--kernel-sigma", type=float, help="Gaussian sigma (2.0)")
    g.add_argument("--post-smooth-threshold", type=float, help="feature activity threshold (0.5)")
    g.add_argument("--active-channels", choices=("red_green", "red_blue"), help="channels tested for activity (red_green)")
    g.add_argument("--min-cluster-area", type=int, help="smallest kept cluster in pixels (150)")
    g.add_argument("--w-r", type=float, help="red weight in the activation score; green gets 1 - w_r (0.7)")
    g.add_argument("--kmeans-seed", type=int, help="K-means++ seed (42)")
    g.add_argument("--kmeans-max-iters", type=int, help="Lloyd iteration cap (300)")
    g.add_argument("--kmeans-tol", type=float, help="centroid movement tolerance (1e-4)")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--verbose", "-v", action="store_true", help="log at DEBUG")
    parser.add_argument("--metrics-file", help="write Prometheus metrics here after the run")


def _add_scene_source(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scene", help="manifest JSON, or an RGB heatmap file (.ppm/.csv)")
    parser.add_argument("--manifest", help="manifest JSON")
    parser.add_argument("--scene-id", help="scene to pick from the manifest (or id for explicit files)")
    parser.add_argument("--rgb-heatmap", help="RGB heatmap file")
    parser.add_argument("--depth-heatmap", help="depth heatmap file")
    parser.add_argument("--depth-map", help="depth map file (.pgm/.csv)")
    parser.add_argument("--ground-truth", type=_box, help="x_min,y_min,x_max,y_max (default: full frame)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgbdg", description="Depth-aware referring-expression grounding from heatmaps")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("propose", help="rank candidate boxes for one scene")
    _add_scene_source(p)
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.RGBD.value)
    p.add_argument("--out", required=True, help="proposals JSON Lines file")
    _add_tunables(p)
    _add_common(p)

    p = sub.add_parser("evaluate", help="run every manifest scene in each mode and tabulate matches")
    p.add_argument("--manifest", required=True)
    p.add_argument("--modes", default="rgbd,rgb", help="comma-separated modes (rgbd,rgb)")
    p.add_argument("--report", required=True, help="report JSON file")
    p.add_argument("--proposals", help="also write every proposal as JSON Lines")
    p.add_argument("--workers", type=int, help="worker processes (RGBDG_WORKERS or 1)")
    _add_tunables(p)
    _add_common(p)

    p = sub.add_parser("synth", help="generate synthetic scenes and a manifest")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=PRESETS)
    src.add_argument("--spec", help="SynthSpec JSON document")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=320)
    p.add_argument("--height", type=int, default=240)
    p.add_argument("--noise", type=float, default=0.02, help="preset noise amplitude")
    p.add_argument("--format", choices=sorted(RASTER_FORMATS), default="ppm")
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)

    p = sub.add_parser("overlay", help="draw ground truth and proposals over the fused heatmap")
    _add_scene_source(p)
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.RGBD.value)
    p.add_argument("--proposals", required=True, help="proposals JSON Lines file")
    p.add_argument("--out", required=True, help="output PPM")
    p.add_argument("--t-rgb", type=float, help="fusion activity threshold (0.39)")
    _add_common(p)
    return parser


def _set(values: dict, key: str, value) -> None:
    if value is not None:
        values[key] = value


def build_configs(args: argparse.Namespace) -> PipelineConfigs:
    """Only flags given on the command line override the model defaults."""
    fusion, region, clustering = {}, {}, {}
    _set(fusion, "t_rgb", getattr(args, "t_rgb", None))
    _set(region, "high_activity_threshold", getattr(args, "high_activity_threshold", None))
    _set(region, "min_region_area", getattr(args, "min_region_area", None))
    if getattr(args, "no_count_background", False):
        region["count_background"] = False
    conn = getattr(args, "connectivity", None)
    _set(region, "connectivity", conn)
    _set(clustering, "connectivity", conn)
    _set(clustering, "kernel_size", getattr(args, "kernel_size", None))
    _set(clustering, "kernel_sigma", getattr(args, "kernel_sigma", None))
    _set(clustering, "post_smooth_active_threshold", getattr(args, "post_smooth_threshold", None))
    _set(clustering, "active_channels", getattr(args, "active_channels", None))
    _set(clustering, "min_cluster_area", getattr(args, "min_cluster_area", None))
    w_r = getattr(args, "w_r", None)
    if w_r is not None:
        clustering["w_r"] = w_r
        clustering["w_g"] = 1.0 - w_r
    _set(clustering, "kmeans_seed", getattr(args, "kmeans_seed", None))
    _set(clustering, "kmeans_max_iters", getattr(args, "kmeans_max_iters", None))
    _set(clustering, "kmeans_tol", getattr(args, "kmeans_tol", None))
    return PipelineConfigs(
        fusion=FusionConfig(**fusion),
        region=RegionCountConfig(**region),
        clustering=ClusteringConfig(**clustering),
    )


def parse_modes(text: str) -> List[Mode]:
    modes: List[Mode] = []
    for token in (t.strip() for t in text.split(",")):
        if not token:
            continue
        try:
            mode = Mode(token)
        except ValueError:
            raise SchemaViolationError(f"unknown mode {token!r} (use rgbd or rgb)", "modes")
        if mode not in modes:
            modes.append(mode)
    if not modes:
        raise SchemaViolationError("at least one mode is required", "modes")
    return modes


def build_run_config(args: argparse.Namespace, settings: Settings) -> RunConfig:
    modes = parse_modes(args.modes) if getattr(args, "modes", None) else [Mode(getattr(args, "mode", "rgbd"))]
    workers = getattr(args, "workers", None)
    return RunConfig(
        modes=modes,
        workers=workers if workers is not None else settings.workers,
        metrics_file=args.metrics_file or settings.metrics_file,
        configs=build_configs(args),
    )


# ---------- Scene selection ----------

def resolve_scene_entry(args: argparse.Namespace) -> Tuple[ManifestEntry, Optional[str]]:
    """Manifest entry and the base directory its paths are relative to."""
    manifest_path = args.manifest
    rgb_path = args.rgb_heatmap
    if args.scene:
        if args.scene.lower().endswith(".json"):
            manifest_path = args.scene
        else:
            rgb_path = args.scene

    if manifest_path:
        manifest = read_manifest(manifest_path)
        if args.scene_id:
            return manifest.get(args.scene_id), manifest.base_dir
        if len(manifest.entries) != 1:
            raise SchemaViolationError(
                f"manifest lists {len(manifest.entries)} scenes; pick one with --scene-id", "scene_id"
            )
        return manifest.entries[0], manifest.base_dir

    if not rgb_path:
        raise MissingInputError("no scene given: use --scene, --manifest or --rgb-heatmap")
    ground_truth = args.ground_truth
    if ground_truth is None:
        resolved = resolve_data_path(rgb_path)
        if not os.path.isfile(resolved):
            raise MissingInputError("rgb heatmap not found", resolved)
        heatmap = read_heatmap(resolved)
        ground_truth = [0, 0, heatmap.width - 1, heatmap.height - 1]
    scene_id = args.scene_id or os.path.splitext(os.path.basename(rgb_path))[0]
    entry = ManifestEntry(
        scene_id=scene_id,
        rgb_heatmap_path=rgb_path,
        depth_heatmap_path=args.depth_heatmap,
        depth_map_path=args.depth_map,
        ground_truth=ground_truth,
    )
    return entry, None


# ---------- Commands ----------

def cmd_propose(args: argparse.Namespace, run: RunConfig) -> int:
    mode = run.modes[0]
    entry, base_dir = resolve_scene_entry(args)
    scene = get_provider(entry.provider).provide(entry, mode, base_dir)
    orch = Orchestrator(run.configs.fusion, run.configs.region, run.configs.for_mode(mode))
    result = orch.run(scene)
    for step in result.steps:
        metrics.observe_stage(step.name, step.seconds)
    metrics.record_scene(mode.value, len(result.proposals.proposals))
    write_proposals(result.proposals, args.out)
    logger.info(f"{len(result.proposals.proposals)} proposals for {scene.id} ({mode.value}) written to {args.out}")
    return EXIT_OK


def format_summary(report: EvaluationReport) -> str:
    columns = [r.value for r in RANK_ORDER]
    lines = [f"{'category':<10} {'mode':<5} " + " ".join(f"{c:>6}" for c in columns) + f" {'total':>6}  modal"]
    for name, summary in report.categories.items():
        for label in summary.table.rows:
            counts = summary.table.row(label)
            lines.append(
                f"{name:<10} {label:<5} " + " ".join(f"{c:>6}" for c in counts)
                + f" {sum(counts):>6}  {summary.mode_of.get(label) or '-'}"
            )
        if summary.chi_squared is not None:
            chi = summary.chi_squared
            flag = " (expected counts below 5)" if chi.low_expected else ""
            lines.append(f"{'':<10} chi2={chi.statistic:.4f} dof={chi.dof} n={chi.n}{flag}")
        else:
            lines.append(f"{'':<10} chi2 n/a ({summary.chi_squared_error})")
    return "\n".join(lines)


def cmd_evaluate(args: argparse.Namespace, run: RunConfig) -> int:
    manifest = read_manifest(args.manifest)
    if not manifest.entries:
        raise MissingInputError("manifest lists no scenes, nothing to evaluate", args.manifest)
    with metrics.timed("batch"):
        report, outcomes = evaluate_manifest(manifest, run.modes, run.configs, run.workers)
    write_report(report, args.report)
    if args.proposals:
        write_proposals([ps for o in outcomes for ps in o.proposals], args.proposals)
    print(format_summary(report))
    logger.info(f"Report for {len(manifest.entries)} scenes written to {args.report}")
    return EXIT_OK


def _load_spec(path: str) -> SynthSpec:
    path = resolve_data_path(path)
    if not os.path.isfile(path):
        raise MissingInputError("synth spec not found", path)
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise InvalidSpecError(f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}")
        except UnicodeDecodeError as e:
            raise InvalidSpecError(f"{path}: invalid UTF-8 at byte {e.start}")
    return SynthSpec.parse(data)


def synth_specs(args: argparse.Namespace) -> List[SynthSpec]:
    if args.count < 1:
        raise InvalidSpecError(f"--count must be at least 1, got {args.count}")
    seeds = range(args.seed, args.seed + args.count)
    if args.preset:
        return [depth_critical_preset(s, args.width, args.height, args.noise) for s in seeds]
    base = _load_spec(args.spec)
    if args.count == 1:
        return [base]
    return [base.model_copy(update={"seed": s, "scene_id": f"{base.scene_id}-{s:04d}"}) for s in seeds]


def cmd_synth(args: argparse.Namespace, run: RunConfig) -> int:
    specs = synth_specs(args)
    os.makedirs(args.out, exist_ok=True)
    entries = []
    for spec in specs:
        with span("synth.scene", {"scene": spec.scene_id}):
            entries.append(write_scene(generate(spec), args.out, args.format))
    path = write_manifest(DatasetManifest(entries=entries), os.path.join(args.out, "manifest.json"))
    logger.info(f"{len(entries)} synthetic scenes written; manifest {path}")
    return EXIT_OK


def _pick_proposals(sets: List[ProposalSet], scene_id: str, mode: Mode) -> ProposalSet:
    if not sets:
        return ProposalSet(scene_id=scene_id, mode=mode)
    matching = [s for s in sets if s.scene_id == scene_id]
    if not matching:
        ids = sorted({s.scene_id for s in sets})
        raise SchemaViolationError(f"no proposals for scene {scene_id!r} (file has {ids})", "scene_id")
    for s in matching:
        if s.mode == mode:
            return s
    modes = sorted({s.mode.value for s in matching})
    raise SchemaViolationError(
        f"no {mode.value} proposals for scene {scene_id!r} (file has {modes})", "mode"
    )


def cmd_overlay(args: argparse.Namespace, run: RunConfig) -> int:
    mode = run.modes[0]
    entry, base_dir = resolve_scene_entry(args)
    scene = get_provider(entry.provider).provide(entry, mode, base_dir)
    proposals = _pick_proposals(read_proposals(args.proposals), scene.id, mode)
    render_overlay(scene, proposals, args.out, run.configs.fusion)
    return EXIT_OK


COMMANDS = {
    "propose": cmd_propose,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
    "overlay": cmd_overlay,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        set_level("DEBUG")
    setup_tracing()
    try:
        settings = Settings.from_env()
        run = build_run_config(args, settings)
        with span(f"cli.{args.command}"):
            code = COMMANDS[args.command](args, run)
        metrics.dump(run.metrics_file)
        return code
    except InvariantViolationError as e:
        print(f"error [{e.code}]: {e.message}", file=sys.stderr)
        return EXIT_INTERNAL
    except GroundingError as e:
        print(f"error [{e.code}]: {e.message}", file=sys.stderr)
        return EXIT_INPUT
    except ValidationError as e:
        first = e.errors()[0]
        loc = ".".join(str(p) for p in first.get("loc", ()))
        print(f"error [invalid-config]: {loc}: {first.get('msg')}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as e:
        print(f"error [invalid-input]: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        print(f"error [io-failure]: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception:
        logger.exception(f"Unexpected failure in {args.command}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
