"""Joint sampling of aligned input/target patch sequences, and token masks.

Token layout shared by both model variants, ``N`` tokens per block::

    [prompt-input | prompt-target | query-input | query-target]

PIC-Sep reads the two input blocks and the two target blocks as parallel
streams; PIC-Cat reads all four as one sequence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from pic3d import geometry as G

SEP, CAT = "sep", "cat"
TRAIN, INFER = "train", "infer"
PROMPT_INPUT, PROMPT_TARGET, QUERY_INPUT, QUERY_TARGET = range(4)


@dataclass
class PatchBatch:
    center_indices: np.ndarray  # (N,), used for both clouds
    input_patches: np.ndarray   # (N, M, 3), relative to input_centers
    target_patches: np.ndarray  # (N, M, 3), relative to target_centers
    input_centers: np.ndarray   # (N, 3)
    target_centers: np.ndarray  # (N, 3)
    input_knn: np.ndarray       # (N, M) point indices into the input cloud
    target_knn: np.ndarray

    @property
    def n_patches(self) -> int:
        return len(self.center_indices)

    def target_absolute(self) -> np.ndarray:
        return self.target_patches + self.target_centers[:, None, :]

    def input_absolute(self) -> np.ndarray:
        return self.input_patches + self.input_centers[:, None, :]


def joint_sample(inp, target, n_centers: int, m: int, strategy: str = G.FPS, seed: int = 0) -> PatchBatch:
    """Sample centers on the input only and reuse the same indices for the target.

    Each cloud is then grouped around its own copy of the centers, so the
    target's geometry never influences which slots become tokens.
    """
    inp, target = G.as_cloud(inp), G.as_cloud(target)
    if len(inp) != len(target):
        raise ValueError(f"input has {len(inp)} points but target has {len(target)}")
    if n_centers > len(inp) or m > len(inp):
        raise ValueError(f"N={n_centers}, M={m} too large for {len(inp)} points")
    idx = G.sample_centers(inp, n_centers, strategy, seed)
    ip, iknn = G.knn_group(inp, idx, m, return_index=True)
    tp, tknn = G.knn_group(target, idx, m, return_index=True)
    ic, tc = inp[idx], target[idx]
    return PatchBatch(idx, ip - ic[:, None], tp - tc[:, None], ic, tc, iknn, tknn)


def query_batch(inp, n_centers: int, m: int, strategy: str = G.FPS, seed: int = 0) -> PatchBatch:
    """Patch a query whose target is unknown: target slots mirror the input centers, contents zero."""
    b = joint_sample(inp, inp, n_centers, m, strategy, seed)
    b.target_patches = np.zeros_like(b.target_patches)
    b.target_centers = b.input_centers.copy()
    return b


@dataclass
class MaskPlan:
    masked: np.ndarray  # bool over the 4N token layout
    mode: str

    @property
    def positions(self) -> np.ndarray:
        return np.flatnonzero(self.masked)


def mask_count(ratio: float, maskable: int) -> int:
    # epsilon guards products like 0.29 * 100 = 28.999999999999996
    return int(math.floor(ratio * maskable + 1e-9))


def make_mask(variant: str, n_tokens: int, ratio: float, mode: str = TRAIN, seed: int = 0,
              rng: np.random.Generator | None = None) -> MaskPlan:
    """Mask plan over the 4N layout for ``n_tokens`` patches per block."""
    if not 0 <= ratio < 1:
        raise ValueError(f"mask ratio must be in [0, 1), got {ratio}")
    if variant not in (SEP, CAT):
        raise ValueError(f"unknown variant {variant!r}")
    n = n_tokens
    masked = np.zeros(4 * n, dtype=bool)
    if mode == INFER:
        masked[QUERY_TARGET * n:] = True
        return MaskPlan(masked, mode)
    if mode != TRAIN:
        raise ValueError(f"unknown mask mode {mode!r}")
    if variant == SEP:
        pool = np.concatenate([np.arange(n, 2 * n), np.arange(3 * n, 4 * n)])
    else:
        pool = np.arange(4 * n)
    rng = rng if rng is not None else np.random.default_rng(seed)
    masked[rng.choice(pool, size=mask_count(ratio, len(pool)), replace=False)] = True
    return MaskPlan(masked, mode)
