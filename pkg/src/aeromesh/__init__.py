"""Aerial-scene reconstruction toolkit.

Partition a COLMAP sparse model into spatial sub-regions, assign each
region the views that best observe it, fuse multi-view depth maps under
geometric consistency, extract per-region TSDF meshes, stitch them, and
evaluate the result against ground truth.
"""

__version__ = "0.1.0"
