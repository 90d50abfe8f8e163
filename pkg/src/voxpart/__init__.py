"""voxpart: weakly-supervised discovery of 3D shape parts from shape-level tags."""

__version__ = "0.1.0"
