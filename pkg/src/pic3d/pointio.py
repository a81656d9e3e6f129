"""Point-cloud and label file formats.

``.xyz``: text, one ``x y z`` per line. ``.f32``: raw little-endian float32
triples, no header. Label files are text with one integer per line.
"""
from pathlib import Path

import numpy as np


def load_cloud(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".f32":
        raw = np.fromfile(path, dtype="<f4")
        if raw.size % 3:
            raise ValueError(f"{path}: float count {raw.size} not divisible by 3")
        return raw.reshape(-1, 3).astype(np.float64)
    if path.suffix == ".xyz":
        pts = np.loadtxt(path, dtype=np.float64, ndmin=2)
        if pts.size == 0:
            return pts.reshape(0, 3)
        if pts.shape[1] != 3:
            raise ValueError(f"{path}: expected 3 columns, got {pts.shape[1]}")
        return pts
    raise ValueError(f"{path}: unsupported point-cloud extension {path.suffix!r}")


def save_cloud(path, points) -> None:
    path = Path(path)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if path.suffix == ".f32":
        pts.astype("<f4").tofile(path)
    elif path.suffix == ".xyz":
        with open(path, "w") as fh:
            for x, y, z in pts:
                fh.write(f"{x:.8f} {y:.8f} {z:.8f}\n")
    else:
        raise ValueError(f"{path}: unsupported point-cloud extension {path.suffix!r}")


def load_labels(path) -> np.ndarray:
    return np.loadtxt(path, dtype=np.int64, ndmin=1)


def save_labels(path, labels) -> None:
    with open(path, "w") as fh:
        for v in np.asarray(labels, dtype=np.int64):
            fh.write(f"{int(v)}\n")
