"""Bundled data files: canonical model, gain schedule, motions, gait library."""

from pathlib import Path


def assets_dir() -> Path:
    return Path(__file__).parent


def motions_dir() -> Path:
    return Path(__file__).parent / "motions"
