"""Deterministic point-set primitives.

Clouds are ``(n, 3)`` float64 arrays; row order is meaningful (it carries the
sample-slot identity that joint sampling relies on), so nothing here reorders
its input.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from pic3d import kernels

FPS = "fps"
RS = "rs"


class DegenerateCloudError(ValueError):
    pass


def as_cloud(points) -> np.ndarray:
    pc = np.asarray(points, dtype=np.float64)
    if pc.ndim != 2 or pc.shape[1] != 3 or pc.shape[0] < 1:
        raise ValueError(f"expected a non-empty (n, 3) cloud, got shape {pc.shape}")
    if not np.isfinite(pc).all():
        raise ValueError("cloud has non-finite coordinates")
    return pc


def normalize(pc) -> np.ndarray:
    """Center on the centroid and scale so the farthest point sits on the unit sphere."""
    pc = as_cloud(pc)
    centered = pc - pc.mean(axis=0)
    scale = np.sqrt((centered ** 2).sum(axis=1)).max()
    if not scale > 1e-12:
        raise DegenerateCloudError("degenerate cloud")
    return centered / scale


def sample_centers(pc, k: int, strategy: str = FPS, seed: int = 0) -> np.ndarray:
    """Pick ``k`` distinct indices: farthest-first from index 0, or seeded uniform."""
    pc = as_cloud(pc)
    n = len(pc)
    if not 1 <= k <= n:
        raise ValueError(f"cannot sample {k} centers from {n} points")
    if strategy == FPS:
        return kernels.fps(pc, k, 0)
    if strategy == RS:
        rng = np.random.default_rng(seed)
        return rng.choice(n, size=k, replace=False).astype(np.int64)
    raise ValueError(f"unknown sampling strategy {strategy!r}")


def knn_group(pc, centers, m: int, return_index: bool = False):
    """Group the ``m`` nearest points (self included) around each center index.

    Patches come back in absolute coordinates, sorted by ascending distance,
    equal distances by ascending point index.
    """
    pc = as_cloud(pc)
    centers = np.asarray(centers, dtype=np.int64)
    if not 1 <= m <= len(pc):
        raise ValueError(f"patch size {m} invalid for {len(pc)} points")
    if centers.size and (centers.min() < 0 or centers.max() >= len(pc)):
        raise IndexError("center index out of range")
    idx = kernels.knn(pc, pc[centers], m)
    patches = pc[idx]
    return (patches, idx) if return_index else patches


def nearest_sq(a, b):
    """Squared distance from each point of ``a`` to its nearest point in ``b``, and that point's index."""
    return kernels.nearest(as_cloud(a), as_cloud(b))


def chamfer(p, g, norm: str = "l2") -> float:
    """Symmetric Chamfer distance, sum of both directions divided by ``|P| + |G|``.

    ``l2`` sums squared nearest-neighbour distances, ``l1`` plain Euclidean ones.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    g = np.asarray(g, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0 or len(g) == 0:
        raise ValueError("chamfer of an empty set")
    d_pg, _ = kernels.nearest(p, g)
    d_gp, _ = kernels.nearest(g, p)
    if norm == "l1":
        d_pg, d_gp = np.sqrt(d_pg), np.sqrt(d_gp)
    elif norm != "l2":
        raise ValueError(f"unknown chamfer norm {norm!r}")
    return float((d_pg.sum() + d_gp.sum()) / (len(p) + len(g)))


@dataclass(frozen=True)
class Rotation:
    axis: tuple[float, float, float]
    angle: float

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=np.float64)
        n = np.linalg.norm(a)
        if not n > 0:
            raise ValueError("rotation axis must be non-zero")
        # leave unit axes untouched so serialized rotations round-trip bit-exactly
        if abs(n - 1.0) > 1e-12:
            a = a / n
        object.__setattr__(self, "axis", tuple(float(v) for v in a))
        if not 0.0 <= self.angle <= math.pi + 1e-12:
            raise ValueError(f"rotation angle {self.angle} outside [0, pi]")

    @classmethod
    def identity(cls) -> Rotation:
        return cls((0.0, 0.0, 1.0), 0.0)

    @classmethod
    def random(cls, rng: np.random.Generator, max_angle: float) -> Rotation:
        axis = rng.normal(size=3)
        while np.linalg.norm(axis) < 1e-9:
            axis = rng.normal(size=3)
        return cls(tuple(axis), float(rng.uniform(0.0, max_angle)))

    def matrix(self) -> np.ndarray:
        """Rodrigues' formula."""
        x, y, z = self.axis
        c, s = math.cos(self.angle), math.sin(self.angle)
        t = 1.0 - c
        return np.array([
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ])

    def inverse(self) -> Rotation:
        return Rotation(tuple(-v for v in self.axis), self.angle)

    def to_dict(self) -> dict:
        return {"axis": list(self.axis), "angle": self.angle}

    @classmethod
    def from_dict(cls, d: dict) -> Rotation:
        return cls(tuple(d["axis"]), float(d["angle"]))


def apply_matrix(pc, mat) -> np.ndarray:
    return as_cloud(pc) @ np.asarray(mat, dtype=np.float64).T


def rotate(pc, r: Rotation) -> np.ndarray:
    return apply_matrix(pc, r.matrix())
