"""Run configuration: defaults, JSON loading, strict key and type checking."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from pic3d.model import ModelConfig
from pic3d.taskgen import TASKS
from pic3d.tokenization import CAT, SEP

DEFAULT_MASK_RATIO = {SEP: 0.7, CAT: 0.6}
LOSSES = ("l2", "l1", "l1+l2")


@dataclass
class RunConfig:
    n_points: int = 1024
    n_patches: int = 64
    patch_size: int = 32
    mask_ratio: Optional[float] = None  # None -> 0.7 for sep, 0.6 for cat
    variant: str = SEP
    dim: int = 384
    enc_depth: int = 6
    dec_depth: int = 6
    heads: int = 6
    merge_block: int = 3
    embed_hidden: int = 128
    role_embedding: bool = False
    lr: float = 1e-3
    weight_decay: float = 0.05
    warmup_frac: float = 0.05
    epochs: int = 300
    batch_size: int = 8
    max_steps: int = 0  # 0 -> epochs * steps_per_epoch
    loss: str = "l2"
    sampling: str = "fps"
    cat_loss_scope: str = "all"  # or "query_target"
    tasks: list = field(default_factory=lambda: list(TASKS))
    ckpt_every: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.mask_ratio is None:
            self.mask_ratio = DEFAULT_MASK_RATIO.get(self.variant, 0.7)
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.cat_loss_scope not in ("all", "query_target"):
            raise ValueError(f"bad cat_loss_scope {self.cat_loss_scope!r}")
        if not 0 <= self.mask_ratio < 1:
            raise ValueError(f"mask_ratio must be in [0, 1), got {self.mask_ratio}")
        if set(self.tasks) - set(TASKS):
            raise ValueError(f"unknown tasks in {self.tasks}")
        self.model_config()  # validates architecture fields

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            variant=self.variant, dim=self.dim, enc_depth=self.enc_depth, dec_depth=self.dec_depth,
            heads=self.heads, merge_block=self.merge_block, n_patches=self.n_patches,
            patch_size=self.patch_size, embed_hidden=self.embed_hidden,
            role_embedding=self.role_embedding,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def desk(cls, **kw) -> RunConfig:
        base = dict(dim=128, enc_depth=3, dec_depth=3, heads=4, merge_block=3, embed_hidden=32)
        base.update(kw)
        return cls(**base)


def _check_type(name, value, annotation):
    expected = {
        "int": int, "float": (int, float), "str": str, "bool": bool, "list": list,
        "Optional[float]": (int, float, type(None)),
    }[annotation]
    ok = isinstance(value, expected)
    if isinstance(value, bool) and annotation in ("int", "float", "Optional[float]"):
        ok = False
    if not ok:
        raise TypeError(f"config key {name!r}: expected {annotation}, got {type(value).__name__}")


def config_from_dict(d: dict) -> RunConfig:
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    for k, v in d.items():
        if k not in fields:
            raise KeyError(f"unknown key {k!r} in config")
        _check_type(k, v, fields[k].type)
    return RunConfig(**d)


def parse_config(path=None, **overrides) -> RunConfig:
    """Load a JSON config (empty or missing file means all defaults).

    The ``PIC_SEED`` environment variable supplies the seed when neither the
    file nor ``overrides`` set one.
    """
    data = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        text = path.read_text().strip()
        if text:
            data = json.loads(text)
            if not isinstance(data, dict):
                raise TypeError("config file must hold a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    if "seed" not in data and os.environ.get("PIC_SEED"):
        data["seed"] = int(os.environ["PIC_SEED"])
    return config_from_dict(data)
