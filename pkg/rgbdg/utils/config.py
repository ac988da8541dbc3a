from __future__ import annotations
import os
from typing import Optional
from pydantic import BaseModel, Field


class Settings(BaseModel):
    """Run defaults read from the environment (after .env is loaded).

    RGBDG_DATA_DIR is read by ``resolve_data_path`` on every call and
    RGBDG_LOG_LEVEL once, by ``env_setup``.
    """
    workers: int = Field(default=1, ge=1)
    metrics_file: Optional[str] = None

    @classmethod
    def from_env(cls) -> "Settings":
        return cls(
            workers=int(os.getenv("RGBDG_WORKERS", "1")),
            metrics_file=os.getenv("RGBDG_METRICS_FILE") or None,
        )


def resolve_data_path(path: str, base_dir: Optional[str] = None) -> str:
    """Resolve a possibly relative path.

    Absolute paths are returned as-is. Relative paths are joined to ``base_dir``
    when given (manifest-relative entries), otherwise to RGBDG_DATA_DIR when set.
    """
    if os.path.isabs(path):
        return path
    if base_dir is not None:
        return os.path.normpath(os.path.join(base_dir, path))
    data_dir = os.getenv("RGBDG_DATA_DIR")
    if data_dir:
        return os.path.normpath(os.path.join(data_dir, path))
    return path
