"""Synthetic part-labelled objects used as a stand-in source corpus.

Each category is a handful of primitives (boxes, cylinders, cones, disks),
one part label per primitive group, with per-instance random proportions.
None of them is symmetric under the upside-down flip, so registration
targets are distinguishable from their inputs.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from pic3d import pointio

CATEGORIES = ("table", "chair", "lamp", "airplane", "mug")


def _box(rng, n, center, size):
    """Uniform samples on the surface of an axis-aligned box."""
    size = np.asarray(size, dtype=np.float64)
    areas = np.array([size[1] * size[2], size[0] * size[2], size[0] * size[1]])
    face_axis = rng.choice(3, size=n, p=areas / areas.sum())
    pts = (rng.random((n, 3)) - 0.5) * size
    side = rng.choice([-0.5, 0.5], size=n)
    pts[np.arange(n), face_axis] = side * size[face_axis]
    return pts + center


def _cylinder(rng, n, center, radius, height, axis=1, caps=(True, True)):
    side_area = 2 * math.pi * radius * height
    cap_area = math.pi * radius ** 2
    weights = np.array([side_area, cap_area * caps[0], cap_area * caps[1]])
    which = rng.choice(3, size=n, p=weights / weights.sum())
    theta = rng.uniform(0, 2 * math.pi, n)
    r = np.where(which == 0, radius, radius * np.sqrt(rng.random(n)))
    h = np.where(which == 0, rng.uniform(-0.5, 0.5, n) * height,
                 np.where(which == 1, -0.5 * height, 0.5 * height))
    local = np.stack([r * np.cos(theta), h, r * np.sin(theta)], axis=1)
    return _orient(local, axis) + center


def _cone(rng, n, center, r_bottom, r_top, height, axis=1):
    t = rng.random(n)
    theta = rng.uniform(0, 2 * math.pi, n)
    r = r_bottom + (r_top - r_bottom) * t
    local = np.stack([r * np.cos(theta), (t - 0.5) * height, r * np.sin(theta)], axis=1)
    return _orient(local, axis) + center


def _orient(local, axis):
    # local frames are built along y
    if axis == 1:
        return local
    if axis == 0:
        return local[:, [1, 0, 2]]
    return local[:, [0, 2, 1]]


def _split(n, weights):
    w = np.asarray(weights, dtype=np.float64)
    counts = np.floor(n * w / w.sum()).astype(int)
    counts[0] += n - counts.sum()
    return counts


def make_object(category: str, rng: np.random.Generator, n: int = 2048):
    """Return ``(points, labels)`` for one random instance of ``category``."""
    u = lambda lo, hi: float(rng.uniform(lo, hi))  # noqa: E731
    parts = []
    if category == "table":
        w, d, h = u(1.0, 1.6), u(0.6, 1.0), u(0.6, 0.9)
        c = _split(n, [3, 1])
        parts.append((_box(rng, c[0], (0, h, 0), (w, 0.06, d)), 0))
        legs = [_box(rng, c[1] // 4 + (i < c[1] % 4), (sx * (w / 2 - 0.05), h / 2, sz * (d / 2 - 0.05)),
                     (0.06, h, 0.06)) for i, (sx, sz) in enumerate([(-1, -1), (-1, 1), (1, -1), (1, 1)])]
        parts.append((np.concatenate(legs), 1))
    elif category == "chair":
        s, h, b = u(0.5, 0.7), u(0.4, 0.55), u(0.5, 0.8)
        c = _split(n, [2, 2, 1])
        parts.append((_box(rng, c[0], (0, h, 0), (s, 0.06, s)), 0))
        parts.append((_box(rng, c[1], (0, h + b / 2, -s / 2), (s, b, 0.06)), 1))
        legs = [_box(rng, c[2] // 4 + (i < c[2] % 4), (sx * (s / 2 - 0.03), h / 2, sz * (s / 2 - 0.03)),
                     (0.05, h, 0.05)) for i, (sx, sz) in enumerate([(-1, -1), (-1, 1), (1, -1), (1, 1)])]
        parts.append((np.concatenate(legs), 2))
    elif category == "lamp":
        pole = u(0.8, 1.4)
        c = _split(n, [2, 1, 3])
        parts.append((_cylinder(rng, c[0], (0, 0.02, 0), u(0.25, 0.4), 0.04), 0))
        parts.append((_cylinder(rng, c[1], (0, pole / 2, 0), 0.03, pole, caps=(False, False)), 1))
        parts.append((_cone(rng, c[2], (0, pole, 0), u(0.3, 0.45), u(0.1, 0.2), u(0.25, 0.4)), 2))
    elif category == "airplane":
        length, span = u(1.6, 2.2), u(1.4, 2.2)
        c = _split(n, [3, 3, 1])
        parts.append((_cylinder(rng, c[0], (0, 0, 0), u(0.1, 0.16), length, axis=0), 0))
        parts.append((_box(rng, c[1], (u(-0.1, 0.2), 0, 0), (u(0.3, 0.45), 0.03, span)), 1))
        fin = u(0.25, 0.4)
        parts.append((_box(rng, c[2], (-length / 2 + 0.12, fin / 2 + 0.08, 0), (0.2, fin, 0.03)), 2))
    elif category == "mug":
        r, h = u(0.3, 0.45), u(0.6, 1.0)
        c = _split(n, [4, 1])
        parts.append((_cylinder(rng, c[0], (0, h / 2, 0), r, h, caps=(True, False)), 0))
        theta = rng.uniform(-0.5 * math.pi, 0.5 * math.pi, c[1])
        hr = u(0.15, 0.25)
        handle = np.stack([r + hr * np.cos(theta), h * 0.6 + hr * np.sin(theta),
                           rng.uniform(-0.03, 0.03, c[1])], axis=1)
        parts.append((handle, 1))
    else:
        raise ValueError(f"unknown category {category!r}")
    pts = np.concatenate([p for p, _ in parts])
    labels = np.concatenate([np.full(len(p), lab, dtype=np.int64) for p, lab in parts])
    # random yaw keeps the up axis meaningful
    yaw = rng.uniform(0, 2 * math.pi)
    c, s = math.cos(yaw), math.sin(yaw)
    pts = pts @ np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]]).T
    perm = rng.permutation(len(pts))
    return pts[perm], labels[perm]


def write_corpus(out_dir, count: int, seed: int = 0, n: int = 2048,
                 categories=CATEGORIES, fmt: str = ".xyz") -> list[Path]:
    """Write ``count`` labelled objects as ``<out>/<category>/<category>_<i>.xyz`` + ``.labels``."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    written = []
    for i in range(count):
        cat = categories[i % len(categories)]
        pts, labels = make_object(cat, rng, n)
        d = out_dir / cat
        d.mkdir(parents=True, exist_ok=True)
        path = d / f"{cat}_{i:04d}{fmt}"
        pointio.save_cloud(path, pts)
        pointio.save_labels(path.with_suffix(".labels"), labels)
        written.append(path)
    return written
