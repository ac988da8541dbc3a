"""
Optional OpenTelemetry spans around pipeline stages, batch scenes and CLI
commands. Everything here is a no-op unless TRACING_ENABLED=1 and the SDK is
importable; spans are exported over OTLP/HTTP when OTEL_EXPORTER_OTLP_ENDPOINT
is set.
"""
from __future__ import annotations
from contextlib import contextmanager
from enum import Enum
from typing import Any, Dict, Iterator, Optional
import os

try:
    from opentelemetry import trace  # type: ignore
    from opentelemetry.sdk.resources import Resource  # type: ignore
    from opentelemetry.sdk.trace import TracerProvider  # type: ignore
    from opentelemetry.sdk.trace.export import BatchSpanProcessor  # type: ignore
    from opentelemetry.exporter.otlp.proto.http.trace_exporter import OTLPSpanExporter  # type: ignore
    HAS_OTEL = True
except Exception:
    HAS_OTEL = False
    trace = None  # type: ignore

SERVICE_NAME = "rgbdg"

_tracer = None


def tracing_enabled() -> bool:
    return HAS_OTEL and os.getenv("TRACING_ENABLED", "0") == "1"


def setup_tracing() -> bool:
    """Install the tracer provider once per process; returns whether spans are recorded.

    Also used as the process-pool initializer so worker scenes are traced too.
    """
    global _tracer
    if not tracing_enabled():
        return False
    if _tracer is not None:
        return True
    try:
        provider = TracerProvider(resource=Resource.create({"service.name": SERVICE_NAME}))
        endpoint = os.getenv("OTEL_EXPORTER_OTLP_ENDPOINT")
        if endpoint:
            provider.add_span_processor(BatchSpanProcessor(OTLPSpanExporter(endpoint=endpoint)))
        trace.set_tracer_provider(provider)
    except Exception:
        pass
    _tracer = trace.get_tracer(SERVICE_NAME)
    return True


def attribute_value(value: Any) -> Any:
    """Span attributes accept str, bool, int and float only."""
    if isinstance(value, Enum):
        return attribute_value(value.value)
    if isinstance(value, (str, bool, int, float)):
        return value
    if hasattr(value, "item"):
        # numpy scalars
        return value.item()
    return str(value)


@contextmanager
def span(name: str, attributes: Optional[Dict[str, Any]] = None) -> Iterator[Optional[Any]]:
    if not tracing_enabled():
        yield None
        return
    tracer = _tracer or trace.get_tracer(SERVICE_NAME)
    with tracer.start_as_current_span(name) as sp:
        for k, v in (attributes or {}).items():
            sp.set_attribute(k, attribute_value(v))
        yield sp
