"""Learns valid instruments from multi-environment data and estimates causal effects with them."""

__version__ = "0.1.0"

from pathlib import Path

ROOT_DIR = Path(__file__).parent
