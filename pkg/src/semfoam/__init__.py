"""Semantic foam: a Voronoi-cell volumetric radiance field with per-cell
semantic identity encodings, trained by differentiable rendering."""

__version__ = "0.1.0"
