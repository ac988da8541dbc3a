"""
Heatmap providers: where a scene's activation rasters come from.

Real Grad-CAM output arrives as files named by the manifest (``files``);
``synthetic`` renders a scene from the SynthSpec embedded in the entry.
External tooling can register its own provider under a new name.
"""
from __future__ import annotations
from typing import Dict, Optional, Protocol

from rgbdg.core.scene_model import Mode, Scene
from rgbdg.core.synth import SynthSpec, generate
from rgbdg.services.scene_io import ManifestEntry, load_scene
from rgbdg.utils.env_setup import get_logger
from rgbdg.utils.errors import SchemaViolationError


class HeatmapProvider(Protocol):
    name: str

    def provide(self, entry: ManifestEntry, mode: Mode, base_dir: Optional[str] = None) -> Scene:
        ...


class FileProvider:
    name = "files"

    def provide(self, entry: ManifestEntry, mode: Mode, base_dir: Optional[str] = None) -> Scene:
        return load_scene(entry, mode, base_dir)


class SyntheticProvider:
    name = "synthetic"

    def provide(self, entry: ManifestEntry, mode: Mode, base_dir: Optional[str] = None) -> Scene:
        if not entry.synth:
            raise SchemaViolationError("synthetic provider needs a 'synth' spec", f"{entry.scene_id}.synth")
        spec = SynthSpec.parse({**entry.synth, "scene_id": entry.scene_id})
        scene = generate(spec)
        # the manifest stays authoritative for labels
        return scene.model_copy(update={
            "expression": entry.expression or scene.expression,
            "category": entry.category,
        })


class ProviderRegistry:
    _registry: Dict[str, type] = {}
    _logger = get_logger("ProviderRegistry")

    @classmethod
    def register(cls, name: str, provider_cls: type):
        cls._registry[name] = provider_cls
        cls._logger.debug(f"Registered provider: {name} -> {provider_cls!r}")

    @classmethod
    def get(cls, name: str) -> Optional[type]:
        return cls._registry.get(name)


ProviderRegistry.register(FileProvider.name, FileProvider)
ProviderRegistry.register(SyntheticProvider.name, SyntheticProvider)


def get_provider(name: str) -> HeatmapProvider:
    provider_cls = ProviderRegistry.get(name)
    if provider_cls is None:
        raise SchemaViolationError(f"unknown provider {name!r}", "provider")
    return provider_cls()
