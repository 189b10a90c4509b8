"""Bregman-divergence geometry and a synthetic weak-to-strong generalization
harness: divergences and their duality, forward projections onto convex
hulls, approximation bounds for k-sparse mixtures, and a pipeline measuring
how the strong model's gain over its weak supervisor tracks their misfit."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"
