"""Input/target pair generators for the four in-context tasks, plus prompt selection.

Every generator keeps ``len(input) == len(target)`` and index alignment: slot
``i`` of the input and slot ``i`` of the target describe the same surface
point. Joint sampling depends on that alignment.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from pic3d import geometry as G
from pic3d.geometry import Rotation

RECONSTRUCTION = "reconstruction"
DENOISING = "denoising"
REGISTRATION = "registration"
SEGMENTATION = "segmentation"
TASKS = (RECONSTRUCTION, DENOISING, REGISTRATION, SEGMENTATION)
CD_TASKS = TASKS[:3]
LEVELS = (1, 2, 3, 4, 5)

RECON_SEEDS = {1: 512, 2: 256, 3: 128, 4: 64, 5: 32}
NOISE_PER_LEVEL = 100
NOISE_STD = 0.5
ROT_DEG_PER_LEVEL = 36.0
# registration targets are the clean cloud turned upside down (180 deg about x)
FLIP_SIGNS = np.array([1.0, -1.0, -1.0])

JITTER_STD = 0.01
AUG_MAX_DEG = 15.0
AUG_SCALE = (0.8, 1.2)

RANDOM, CLASS_AWARE, CD_AWARE, FEA_AWARE = "random", "class_aware", "cd_aware", "fea_aware"
STRATEGIES = (RANDOM, CLASS_AWARE, CD_AWARE, FEA_AWARE)


@dataclass
class TaskSample:
    input: np.ndarray
    target: np.ndarray
    task: str
    level: int
    class_label: str
    sample_id: str
    labels: Optional[np.ndarray] = None
    rotation: Optional[Rotation] = None


@dataclass(frozen=True)
class PromptPair:
    prompt: TaskSample
    query: TaskSample


@dataclass
class LabelCodebook:
    entries: np.ndarray
    parts: list = field(default_factory=list)  # (class, local part) per global id

    @property
    def size(self) -> int:
        return len(self.entries)

    def encode(self, labels) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= self.size):
            raise ValueError(f"label id out of codebook range [0, {self.size})")
        return self.entries[labels]

    def decode(self, points) -> np.ndarray:
        """Nearest entry per point; equal distances resolve to the lowest id."""
        _, idx = G.nearest_sq(points, self.entries)
        return idx


def derive_seed(*parts) -> int:
    h = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


def _check_level(level):
    if level not in LEVELS:
        raise ValueError(f"level must be in 1..5, got {level}")


def flip(pc) -> np.ndarray:
    return np.asarray(pc, dtype=np.float64) * FLIP_SIGNS


def gen_reconstruction(clean, level: int, seed: int = 0, **meta) -> TaskSample:
    """Quantize the cloud onto ``RECON_SEEDS[level]`` farthest-point seeds."""
    _check_level(level)
    clean = G.as_cloud(clean)
    seeds = clean[G.sample_centers(clean, RECON_SEEDS[level], G.FPS)]
    _, nearest = G.nearest_sq(clean, seeds)
    return _sample(seeds[nearest], clean, RECONSTRUCTION, level, meta)


def gen_denoising(clean, level: int, seed: int = 0, **meta) -> TaskSample:
    _check_level(level)
    clean = G.as_cloud(clean)
    rng = np.random.default_rng(seed)
    k = NOISE_PER_LEVEL * level
    if k > len(clean):
        raise ValueError(f"denoising level {level} needs at least {k} points, got {len(clean)}")
    slots = rng.choice(len(clean), size=k, replace=False)
    noisy = clean.copy()
    noisy[slots] = np.clip(rng.normal(0.0, NOISE_STD, size=(k, 3)), -1.0, 1.0)
    return _sample(noisy, clean, DENOISING, level, meta)


def max_rotation(level: int) -> float:
    return math.radians(ROT_DEG_PER_LEVEL * level)


def gen_registration(clean, level: int, seed: int = 0,
                     rotation_override: Optional[Rotation] = None, **meta) -> TaskSample:
    _check_level(level)
    clean = G.as_cloud(clean)
    if rotation_override is None:
        r = Rotation.random(np.random.default_rng(seed), max_rotation(level))
    else:
        r = rotation_override
    s = _sample(G.rotate(clean, r), flip(clean), REGISTRATION, level, meta)
    s.rotation = r
    return s


def gen_segmentation(points, labels, codebook: LabelCodebook, **meta) -> TaskSample:
    points = G.as_cloud(points)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (len(points),):
        raise ValueError("need exactly one label per point")
    s = _sample(points, codebook.encode(labels), SEGMENTATION, 0, meta)
    s.labels = labels.copy()
    return s


def _sample(inp, tgt, task, level, meta) -> TaskSample:
    return TaskSample(
        input=inp, target=tgt, task=task, level=level,
        class_label=meta.get("class_label", "object"),
        sample_id=meta.get("sample_id", f"{task}-L{level}"),
    )


def augment(points, rng: np.random.Generator) -> np.ndarray:
    """Jitter, small random rotation and uniform scaling. Point order is kept."""
    pts = G.as_cloud(points) + rng.normal(0.0, JITTER_STD, size=np.shape(points))
    pts = G.rotate(pts, Rotation.random(rng, math.radians(AUG_MAX_DEG)))
    return pts * rng.uniform(*AUG_SCALE)


def build_codebook(size: int, parts: Sequence = ()) -> LabelCodebook:
    """First ``size`` sites of the 4x4x4 lattice over [-1, 1]^3, x slowest, z fastest."""
    if not 1 <= size <= 64:
        raise ValueError(f"codebook size must be in 1..64, got {size}")
    ticks = np.linspace(-1.0, 1.0, 4)
    lattice = np.array([(x, y, z) for x in ticks for y in ticks for z in ticks])
    return LabelCodebook(lattice[:size].copy(), list(parts))


def synchronize(prompt: TaskSample, rotation: Rotation) -> TaskSample:
    """Re-render a registration prompt under the query's rotation."""
    clean = flip(prompt.target)
    return replace(prompt, input=G.rotate(clean, rotation), rotation=rotation)


def select_prompt(query: TaskSample, pool: Sequence[TaskSample], strategy: str = RANDOM,
                  seed: int = 0, feature_fn: Optional[Callable] = None) -> PromptPair:
    """Pick a same-task prompt for ``query`` out of ``pool``.

    ``cd_aware`` compares inputs as the model will see them, so registration
    candidates are synchronized to the query rotation before scoring.
    ``fea_aware`` needs a caller-supplied ``feature_fn(cloud) -> vector``.
    """
    cands = [s for s in pool if s.task == query.task and s.sample_id != query.sample_id]
    if not cands:
        raise ValueError(f"no prompt candidates for task {query.task!r}")

    sync = query.task == REGISTRATION and query.rotation is not None

    def view(s):
        return synchronize(s, query.rotation) if sync else s

    rng = np.random.default_rng(seed)
    if strategy == RANDOM:
        chosen = cands[rng.integers(len(cands))]
    elif strategy == CLASS_AWARE:
        same = [s for s in cands if s.class_label == query.class_label]
        pick_from = same or cands
        chosen = pick_from[rng.integers(len(pick_from))]
    elif strategy == CD_AWARE:
        scores = [G.chamfer(view(s).input, query.input) for s in cands]
        chosen = cands[int(np.argmin(scores))]
    elif strategy == FEA_AWARE:
        if feature_fn is None:
            raise ValueError("fea_aware selection needs a feature_fn")
        fq = np.asarray(feature_fn(query.input), dtype=np.float64)
        scores = [np.linalg.norm(np.asarray(feature_fn(view(s).input)) - fq) for s in cands]
        chosen = cands[int(np.argmin(scores))]
    else:
        raise ValueError(f"unknown prompt strategy {strategy!r}")
    return PromptPair(view(chosen), query)
