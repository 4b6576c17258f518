"""Gated networks in the path basis: forwards, path features, kernels."""

from ._core import *  # noqa: F401,F403

__all__ = [name for name in dir() if not name.startswith("_")]
