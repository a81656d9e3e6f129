"""Masked-patch Chamfer objective and the training loop.

Training is single-writer: one :class:`Trainer` owns the parameters and
optimizer moments, and each call to :meth:`Trainer.train_step` is a pure
function of (serialized state, batch).
"""
from __future__ import annotations

import collections
import logging
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from pic3d import taskgen as T
from pic3d.config import RunConfig
from pic3d.model import PICModel, build_model, build_tokens, load_checkpoint, save_checkpoint
from pic3d.tokenization import CAT, QUERY_TARGET, TRAIN, joint_sample, make_mask

log = logging.getLogger(__name__)


def patch_chamfer(pred, gt, norm: str = "l2"):
    """Per-patch Chamfer, same reduction as :func:`pic3d.geometry.chamfer`. Shapes (..., M, 3)."""
    diff = pred.unsqueeze(-2) - gt.unsqueeze(-3)
    d2 = (diff * diff).sum(-1)  # (..., Mp, Mg)
    a, b = d2.min(dim=-1).values, d2.min(dim=-2).values
    denom = pred.shape[-2] + gt.shape[-2]

    def reduce(x, y):
        return (x.sum(-1) + y.sum(-1)) / denom

    if norm == "l2":
        return reduce(a, b)
    # clamp keeps sqrt differentiable at exact matches
    l1 = reduce(a.clamp_min(1e-12).sqrt(), b.clamp_min(1e-12).sqrt())
    if norm == "l1":
        return l1
    if norm == "l1+l2":
        return l1 + reduce(a, b)
    raise ValueError(f"unknown loss {norm!r}")


def masked_loss(pred, gt, norm: str = "l2", weights=None):
    """Mean per-patch Chamfer over the masked tokens; ``pred``/``gt`` are (B, K, M, 3)."""
    if pred.shape[1] == 0:
        raise ValueError("no masked tokens to score")
    cd = patch_chamfer(pred, gt, norm)
    if weights is None:
        return cd.mean()
    if not float(weights.sum()) > 0:
        raise ValueError("no masked tokens to score")
    return (cd * weights).sum() / weights.sum()


def warmup_steps(total_steps: int, warmup_frac: float) -> int:
    return int(math.floor(warmup_frac * total_steps + 1e-9))


def lr_at(step: int, total_steps: int, base_lr: float = 1e-3, warmup_frac: float = 0.05) -> float:
    """Linear warmup to ``base_lr``, then cosine decay to zero at ``total_steps``."""
    warm = warmup_steps(total_steps, warmup_frac)
    if step < warm:
        return base_lr * step / warm
    if total_steps <= warm:
        return base_lr
    t = (step - warm) / (total_steps - warm)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * min(t, 1.0)))


def task_mix(tasks: Sequence[str]) -> str:
    c = collections.Counter(tasks)
    return "/".join(f"{t[:3]}:{c[t]}" for t in T.TASKS if c[t])


class PairSampler:
    """Draws (prompt, query) pairs: task uniform, query uniform within task, random prompt."""

    def __init__(self, samples: Sequence[T.TaskSample], tasks: Sequence[str]):
        self.by_task = {t: [s for s in samples if s.task == t] for t in tasks}
        self.by_task = {t: v for t, v in self.by_task.items() if len(v) >= 2}
        if not self.by_task:
            raise ValueError("training set needs at least two samples of some task")
        self.tasks = sorted(self.by_task, key=T.TASKS.index)
        self.samples = list(samples)

    def draw(self, rng: np.random.Generator, batch_size: int) -> list[T.PromptPair]:
        out = []
        for _ in range(batch_size):
            task = self.tasks[rng.integers(len(self.tasks))]
            pool = self.by_task[task]
            query = pool[rng.integers(len(pool))]
            out.append(T.select_prompt(query, pool, T.RANDOM, seed=int(rng.integers(2 ** 63))))
        return out


class Trainer:
    def __init__(self, cfg: RunConfig, n_train: int = 1, model: Optional[PICModel] = None,
                 dtype=torch.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.model = model if model is not None else build_model(cfg.model_config(), cfg.seed)
        self.model.to(dtype)
        self.opt = torch.optim.AdamW(self.model.parameters(), lr=cfg.lr,
                                     weight_decay=cfg.weight_decay, betas=(0.9, 0.999))
        self.rng = np.random.default_rng(cfg.seed)
        self.step = 0
        self.steps_per_epoch = max(1, math.ceil(n_train / cfg.batch_size))
        self.total_steps = cfg.max_steps or cfg.epochs * self.steps_per_epoch

    @property
    def epoch(self) -> int:
        return self.step // self.steps_per_epoch

    def make_batch(self, pairs: Sequence[T.PromptPair], mode: str = TRAIN) -> dict:
        cfg = self.cfg
        patches, masks = [], []
        for pair in pairs:
            seeds = self.rng.integers(2 ** 63, size=3)
            pb = joint_sample(pair.prompt.input, pair.prompt.target, cfg.n_patches, cfg.patch_size,
                              cfg.sampling, int(seeds[0]))
            qb = joint_sample(pair.query.input, pair.query.target, cfg.n_patches, cfg.patch_size,
                              cfg.sampling, int(seeds[1]))
            patches.append((pb, qb))
            masks.append(make_mask(cfg.variant, cfg.n_patches, cfg.mask_ratio, mode, int(seeds[2])))
        return build_tokens(patches, masks, self.dtype)

    def loss(self, tokens: dict):
        pred = self.model(tokens)
        weights = None
        if self.cfg.variant == CAT and self.cfg.cat_loss_scope == "query_target":
            weights = (tokens["positions"] >= QUERY_TARGET * self.cfg.n_patches).to(pred.dtype)
        return masked_loss(pred, tokens["gt"], self.cfg.loss, weights)

    def train_step(self, pairs: Sequence[T.PromptPair]) -> float:
        lr = lr_at(self.step, self.total_steps, self.cfg.lr, self.cfg.warmup_frac)
        for g in self.opt.param_groups:
            g["lr"] = lr
        tokens = self.make_batch(pairs)
        self.model.train()
        loss = self.loss(tokens)
        if not torch.isfinite(loss):
            raise FloatingPointError(
                f"non-finite loss {loss.item()} at step {self.step} (lr={lr}, "
                f"tasks={task_mix([p.query.task for p in pairs])})")
        self.opt.zero_grad(set_to_none=True)
        loss.backward()
        self.opt.step()
        self.step += 1
        self.last_lr = lr
        return float(loss.item())

    # -- persistence -------------------------------------------------------

    def state_arrays(self) -> dict:
        arrays = {k: v.detach().cpu().numpy() for k, v in self.model.state_dict().items()}
        names = dict(zip(map(id, self.model.parameters()), (n for n, _ in self.model.named_parameters())))
        for p, st in self.opt.state.items():
            n = names[id(p)]
            arrays[f"optim.exp_avg.{n}"] = st["exp_avg"].detach().cpu().numpy()
            arrays[f"optim.exp_avg_sq.{n}"] = st["exp_avg_sq"].detach().cpu().numpy()
        return arrays

    def save(self, path) -> None:
        adam_steps = {int(st["step"]) for st in self.opt.state.values()}
        extra = {
            "run_config": self.cfg.to_dict(),
            "epoch": self.epoch,
            "total_steps": self.total_steps,
            "steps_per_epoch": self.steps_per_epoch,
            "adam_step": max(adam_steps) if adam_steps else 0,
            "rng": self.rng.bit_generator.state,
        }
        save_checkpoint(path, self.cfg.model_config(), self.state_arrays(), self.cfg.seed, self.step, extra)

    @classmethod
    def load(cls, path, n_train: int = 1) -> Trainer:
        header, arrays = load_checkpoint(path)
        extra = header["extra"]
        cfg = RunConfig(**extra["run_config"])
        tr = cls(cfg, n_train)
        tr.model.load_state_dict({k: torch.from_numpy(arrays[k]) for k in tr.model.state_dict()})
        adam_step = extra.get("adam_step", 0)
        if adam_step:
            for n, p in tr.model.named_parameters():
                tr.opt.state[p] = {
                    "step": torch.tensor(float(adam_step)),
                    "exp_avg": torch.from_numpy(arrays[f"optim.exp_avg.{n}"]).clone(),
                    "exp_avg_sq": torch.from_numpy(arrays[f"optim.exp_avg_sq.{n}"]).clone(),
                }
        tr.step = header["step"]
        tr.steps_per_epoch = extra["steps_per_epoch"]
        tr.total_steps = extra["total_steps"]
        tr.rng.bit_generator.state = extra["rng"]
        return tr


def train(cfg: RunConfig, samples: Sequence[T.TaskSample], out_path, log_path=None,
          steps: Optional[int] = None) -> Trainer:
    """Run the loop, logging ``step, epoch, task_mix, lr, loss`` per step."""
    out_path = Path(out_path)
    log_path = Path(log_path) if log_path else out_path.with_suffix(".log")
    sampler = PairSampler(samples, cfg.tasks)
    tr = Trainer(cfg, len(samples))
    n_steps = steps if steps is not None else tr.total_steps
    with open(log_path, "w") as fh:
        for _ in range(n_steps):
            pairs = sampler.draw(tr.rng, cfg.batch_size)
            epoch = tr.epoch
            loss = tr.train_step(pairs)
            fh.write(f"{tr.step - 1}, {epoch}, {task_mix([p.query.task for p in pairs])}, "
                     f"{tr.last_lr!r}, {loss!r}\n")
            fh.flush()
            if tr.step % tr.steps_per_epoch == 0 and (tr.epoch % cfg.ckpt_every == 0):
                tr.save(out_path)
    tr.save(out_path)
    log.info("trained %d steps, final loss %.6f", n_steps, loss if n_steps else float("nan"))
    return tr
