"""Retinal fundus classification pipeline (C++ core)."""

from ._core import *  # noqa: F401,F403
from ._core import ConfigError, DimensionError, IoError, NumericError

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
