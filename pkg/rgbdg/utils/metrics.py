"""
Prometheus counters for batch runs.

Metrics live in a dedicated registry so a batch can dump them with
``write_to_textfile`` without touching the process-global default registry.
"""
from __future__ import annotations
import time
from contextlib import contextmanager
from typing import Optional
from rgbdg.utils.env_setup import get_logger

try:
    from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile  # type: ignore
    HAS_PROM = True
except Exception:
    HAS_PROM = False

logger = get_logger("Metrics")

if HAS_PROM:
    REGISTRY = CollectorRegistry()
    SCENES_TOTAL = Counter('rgbdg_scenes_total', 'Scenes processed', ['mode'], registry=REGISTRY)
    PROPOSALS_TOTAL = Counter('rgbdg_proposals_total', 'Proposals emitted', ['mode'], registry=REGISTRY)
    MATCH_TOTAL = Counter('rgbdg_match_total', 'Match outcomes', ['mode', 'rank'], registry=REGISTRY)
    STAGE_LATENCY = Histogram('rgbdg_stage_latency_seconds', 'Pipeline stage latency', ['stage'], registry=REGISTRY)
else:
    REGISTRY = None


def record_scene(mode: str, proposals: int) -> None:
    if not HAS_PROM:
        return
    try:
        SCENES_TOTAL.labels(mode).inc()
        PROPOSALS_TOTAL.labels(mode).inc(proposals)
    except Exception:
        pass


def record_match(mode: str, rank: str) -> None:
    if not HAS_PROM:
        return
    try:
        MATCH_TOTAL.labels(mode, rank).inc()
    except Exception:
        pass


def observe_stage(stage: str, seconds: float) -> None:
    if not HAS_PROM:
        return
    try:
        STAGE_LATENCY.labels(stage).observe(seconds)
    except Exception:
        pass


@contextmanager
def timed(stage: str):
    start = time.perf_counter()
    try:
        yield
    finally:
        observe_stage(stage, time.perf_counter() - start)


def dump(path: Optional[str]) -> bool:
    """Write the registry in Prometheus text format. Returns False when skipped."""
    if not path:
        return False
    if not HAS_PROM:
        logger.warning("prometheus_client not installed; metrics file not written.")
        return False
    write_to_textfile(path, REGISTRY)
    logger.info(f"Metrics written to {path}")
    return True
