"""Defines helper functions for the packaged config files."""

from pathlib import Path

ARTIFACTS_DIR = Path(__file__).parent.resolve()


def builtin_names() -> list[str]:
    return sorted(path.stem for path in ARTIFACTS_DIR.glob("*.yaml"))
