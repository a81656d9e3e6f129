"""Masked point modeling transformer in two layouts, PIC-Sep and PIC-Cat.

Both consume the 4N token layout from :mod:`pic3d.tokenization`. A masked
token never sees its own patch: its content is the shared learned mask
embedding and its positional source is the center of the *aligned input*
patch, which joint sampling guarantees to exist and to be leak-free.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from pic3d.tokenization import CAT, SEP, MaskPlan, PatchBatch

CKPT_FORMAT = "pic3d-ckpt/1"


@dataclass
class ModelConfig:
    variant: str = SEP
    dim: int = 384
    enc_depth: int = 6
    dec_depth: int = 6
    heads: int = 6
    merge_block: int = 3
    n_patches: int = 64
    patch_size: int = 32
    embed_hidden: int = 128
    mlp_ratio: float = 4.0
    role_embedding: bool = False

    def __post_init__(self):
        if self.variant not in (SEP, CAT):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.variant == SEP and not 0 <= self.merge_block <= self.enc_depth:
            raise ValueError(f"merge_block {self.merge_block} exceeds enc_depth {self.enc_depth}")

    @classmethod
    def desk(cls, **kw) -> ModelConfig:
        base = dict(dim=128, enc_depth=3, dec_depth=3, heads=4, merge_block=3, embed_hidden=32)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class PatchEmbed(nn.Module):
    """Mini point encoder: shared per-point MLP, max-pool, second MLP with the pooled feature, max-pool."""

    def __init__(self, hidden, dim):
        super().__init__()
        self.first = nn.Sequential(nn.Linear(3, hidden), nn.GELU(), nn.Linear(hidden, 2 * hidden))
        self.second = nn.Sequential(nn.Linear(4 * hidden, 4 * hidden), nn.GELU(), nn.Linear(4 * hidden, dim))

    def forward(self, patches):  # (..., M, 3) -> (..., dim)
        f = self.first(patches)
        g = f.max(dim=-2, keepdim=True).values.expand_as(f)
        return self.second(torch.cat([g, f], dim=-1)).max(dim=-2).values


class Attention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        B, T, C = x.shape
        q, k, v = self.qkv(x).reshape(B, T, 3, self.heads, C // self.heads).permute(2, 0, 3, 1, 4)
        out = F.scaled_dot_product_attention(q, k, v)
        return self.proj(out.transpose(1, 2).reshape(B, T, C))


class Block(nn.Module):
    def __init__(self, dim, heads, mlp_ratio):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class PICModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.dim
        self.patch_embed = PatchEmbed(cfg.embed_hidden, d)
        # learned positional map; fixed sine-cosine codes are a poor fit for unordered patches
        self.pos_embed = nn.Sequential(nn.Linear(3, d), nn.GELU(), nn.Linear(d, d))
        self.mask_token = nn.Parameter(torch.zeros(d))
        if cfg.role_embedding:
            self.role = nn.Parameter(torch.zeros(4, d))
        self.encoder = nn.ModuleList(Block(d, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.enc_depth))
        self.decoder = nn.ModuleList(Block(d, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.dec_depth))
        self.norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, cfg.patch_size * 3)
        self.apply(_init_weights)
        nn.init.normal_(self.mask_token, std=0.02)
        if cfg.role_embedding:
            nn.init.normal_(self.role, std=0.02)

    def embed_patch(self, patches):
        return self.patch_embed(patches)

    def embed_position(self, centers):
        return self.pos_embed(centers)

    def decode_head(self, features, aligned_centers):
        """Linear map to M offsets, each added to the aligned input center."""
        out = self.head(features).unflatten(-1, (self.cfg.patch_size, 3))
        return out + aligned_centers.unsqueeze(-2)

    def _tokens(self, t):
        masked = t["masked"]
        # masked patches are zeroed before embedding and their embedding discarded
        patches = t["patches"] * (~masked)[..., None, None]
        x = self.embed_patch(patches)
        x = torch.where(masked[..., None], self.mask_token.to(x.dtype), x)
        pos_src = torch.where(masked[..., None], t["aligned"], t["centers"])
        pos = self.embed_position(pos_src)
        if self.cfg.role_embedding:
            n = self.cfg.n_patches
            x = x + self.role.repeat_interleave(n, dim=0)[: x.shape[1]]
        return x, pos

    def features(self, t):
        """Per-layout-position features after the final norm, ``(B, 4N, dim)`` for cat, ``(B, 2N, dim)`` for sep."""
        x, pos = self._tokens(t)
        if self.cfg.variant == CAT:
            for blk in [*self.encoder, *self.decoder]:
                x = blk(x + pos)
            return self.norm(x)
        n = x.shape[1] // 4
        xi, xt = torch.cat([x[:, :n], x[:, 2 * n:3 * n]], 1), torch.cat([x[:, n:2 * n], x[:, 3 * n:]], 1)
        pi, pt = torch.cat([pos[:, :n], pos[:, 2 * n:3 * n]], 1), torch.cat([pos[:, n:2 * n], pos[:, 3 * n:]], 1)
        m = self.cfg.merge_block
        for blk in self.encoder[:m]:
            xi, xt = blk(xi + pi), blk(xt + pt)
        f = 0.5 * (xi + xt)
        for blk in [*self.encoder[m:], *self.decoder]:
            f = blk(f + pi)
        return self.norm(f)

    def forward(self, t):
        """Predicted absolute patches ``(B, K, M, 3)`` at ``t["positions"]`` (B, K) of the 4N layout."""
        feats = self.features(t)
        pos = t["positions"]
        n = t["patches"].shape[1] // 4
        if self.cfg.variant == SEP:
            is_target = ((pos >= n) & (pos < 2 * n)) | (pos >= 3 * n)
            if not bool(is_target.all()):
                raise ValueError("PIC-Sep can only predict target tokens")
            fidx = torch.where(pos < 2 * n, pos - n, pos - 2 * n)
        else:
            fidx = pos
        f = torch.gather(feats, 1, fidx[..., None].expand(-1, -1, feats.shape[-1]))
        aligned = torch.gather(t["aligned"], 1, pos[..., None].expand(-1, -1, 3))
        return self.decode_head(f, aligned)


def _init_weights(m):
    if isinstance(m, nn.Linear):
        nn.init.trunc_normal_(m.weight, std=0.02)
        nn.init.zeros_(m.bias)
    elif isinstance(m, nn.LayerNorm):
        nn.init.ones_(m.weight)
        nn.init.zeros_(m.bias)


def build_model(cfg: ModelConfig, seed: int = 0) -> PICModel:
    torch.manual_seed(seed)
    return PICModel(cfg)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def build_tokens(pairs: Sequence[tuple[PatchBatch, PatchBatch]], masks: Sequence[MaskPlan],
                 dtype=torch.float32) -> dict:
    """Stack (prompt, query) patch batches and their masks into model tensors.

    Also returns ``gt``: absolute ground-truth patches at the masked positions,
    for the loss. For an inference query the ``gt`` rows are meaningless.
    """
    patches, centers, aligned, gt, masked, positions = [], [], [], [], [], []
    for (p, q), mask in zip(pairs, masks):
        blocks_p = [p.input_patches, p.target_patches, q.input_patches, q.target_patches]
        blocks_c = [p.input_centers, p.target_centers, q.input_centers, q.target_centers]
        blocks_a = [p.input_centers, p.input_centers, q.input_centers, q.input_centers]
        pt = np.concatenate(blocks_p)
        ct = np.concatenate(blocks_c)
        patches.append(pt)
        centers.append(ct)
        aligned.append(np.concatenate(blocks_a))
        pos = mask.positions
        positions.append(pos)
        masked.append(mask.masked)
        gt.append(pt[pos] + ct[pos][:, None, :])
    counts = {len(x) for x in positions}
    if len(counts) != 1:
        raise ValueError("every element of a batch must mask the same number of tokens")
    as_t = lambda a: torch.as_tensor(np.stack(a), dtype=dtype)  # noqa: E731
    return {
        "patches": as_t(patches), "centers": as_t(centers), "aligned": as_t(aligned),
        "masked": torch.as_tensor(np.stack(masked)),
        "positions": torch.as_tensor(np.stack(positions), dtype=torch.long),
        "gt": as_t(gt),
    }


def save_checkpoint(path, cfg: ModelConfig, arrays: dict, seed: int = 0, step: int = 0,
                    extra: dict | None = None) -> None:
    """One JSON header line, then each array's little-endian float32 bytes in header order."""
    names = list(arrays)
    header = {
        "format": CKPT_FORMAT, "config": cfg.to_dict(), "seed": seed, "step": step,
        "extra": extra or {},
        "arrays": [{"name": k, "shape": list(np.shape(arrays[k]))} for k in names],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for k in names:
            fh.write(np.ascontiguousarray(arrays[k], dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != CKPT_FORMAT:
            raise ValueError(f"{path}: not a {CKPT_FORMAT} checkpoint")
        arrays = {}
        for spec in header["arrays"]:
            count = int(np.prod(spec["shape"], dtype=np.int64))
            buf = fh.read(4 * count)
            if len(buf) != 4 * count:
                raise ValueError(f"{path}: truncated at array {spec['name']}")
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f4").reshape(spec["shape"]).copy()
    return header, arrays


def model_arrays(model: nn.Module) -> dict:
    return {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}


def load_model(path) -> tuple[PICModel, dict]:
    header, arrays = load_checkpoint(path)
    cfg = ModelConfig(**header["config"])
    model = PICModel(cfg)
    state = model.state_dict()
    missing = set(state) - set(arrays)
    if missing:
        raise ValueError(f"checkpoint/config mismatch: missing {sorted(missing)[:3]}")
    for k in state:
        if tuple(state[k].shape) != arrays[k].shape:
            raise ValueError(f"checkpoint/config mismatch for {k}: {arrays[k].shape} vs {tuple(state[k].shape)}")
    model.load_state_dict({k: torch.from_numpy(arrays[k]) for k in state})
    model.eval()
    return model, header
