import logging


def get_logger(name: str = "rgbdg"):
    return logging.getLogger(name)


def set_level(level: str | int) -> None:
    """Change the root level after startup (used by the CLI --verbose flag)."""
    logging.getLogger().setLevel(level.upper() if isinstance(level, str) else level)
