"""Benchmark construction from a folder of source clouds, and manifest loading.

Source layout: ``<source>/<class>/<name>.xyz`` (or ``.f32``), with an optional
``<name>.labels`` file of per-point local part ids enabling segmentation.
Output: per-sample ``.f32`` files under ``samples/`` and a ``manifest.json``
whose bytes depend only on (source files, config, seed).
"""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from pic3d import geometry as G
from pic3d import pointio
from pic3d import taskgen as T
from pic3d.geometry import Rotation

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
FORMAT = "pic3d-manifest/1"
SPLITS = ("train", "val", "test")


@dataclass
class DataConfig:
    n_points: int = 1024
    tasks: list = field(default_factory=lambda: list(T.TASKS))
    levels: list = field(default_factory=lambda: list(T.LEVELS))
    draws_per_task: int = 1
    split_fractions: list = field(default_factory=lambda: [0.8, 0.1, 0.1])
    codebook_size: int = 50
    seg_augment: int = 0

    def __post_init__(self):
        unknown = set(self.tasks) - set(T.TASKS)
        if unknown:
            raise ValueError(f"unknown tasks {sorted(unknown)}")
        if len(self.split_fractions) != 3 or abs(sum(self.split_fractions) - 1) > 1e-9:
            raise ValueError("split_fractions must be three numbers summing to 1")

    @classmethod
    def from_dict(cls, d: dict) -> DataConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        bad = set(d) - names
        if bad:
            raise ValueError(f"unknown key(s) in data config: {', '.join(sorted(bad))}")
        return cls(**d)


@dataclass
class _Source:
    key: str
    class_label: str
    points: np.ndarray
    local_labels: Optional[np.ndarray]


def _scan(source_dir: Path) -> list[Path]:
    return sorted(p for p in source_dir.rglob("*") if p.suffix in (".xyz", ".f32") and p.is_file())


def _load_sources(source_dir: Path, cfg: DataConfig, seed: int) -> list[_Source]:
    out = []
    for path in _scan(source_dir):
        rel = path.relative_to(source_dir)
        cls = rel.parent.as_posix() if rel.parent != Path(".") else "object"
        key = rel.with_suffix("").as_posix()
        try:
            pts = pointio.load_cloud(path)
            lab_path = path.with_suffix(".labels")
            labels = pointio.load_labels(lab_path) if lab_path.exists() else None
            if labels is not None and len(labels) != len(pts):
                raise ValueError(f"{len(labels)} labels for {len(pts)} points")
            if len(pts) < cfg.n_points:
                raise ValueError(f"only {len(pts)} points, need {cfg.n_points}")
            rng = np.random.default_rng(T.derive_seed(seed, "subsample", key))
            keep = np.sort(rng.choice(len(pts), size=cfg.n_points, replace=False))
            pts = G.normalize(pts[keep])
            labels = labels[keep] if labels is not None else None
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", path, exc)
            continue
        out.append(_Source(key, cls, pts, labels))
    return out


def _split_of(key: str, seed: int, fractions) -> str:
    u = T.derive_seed(seed, "split", key) / 2.0 ** 64
    edges = np.cumsum(fractions)
    for name, edge in zip(SPLITS, edges):
        if u < edge:
            return name
    return SPLITS[-1]


def _safe(sample_id: str) -> str:
    return sample_id.replace("/", "__").replace(":", "_")


def build_dataset(source_dir, out_dir, config: Optional[DataConfig] = None, seed: int = 0) -> dict:
    cfg = config or DataConfig()
    source_dir, out_dir = Path(source_dir), Path(out_dir)
    if not source_dir.is_dir():
        raise FileNotFoundError(f"source directory not found: {source_dir}")
    sources = _load_sources(source_dir, cfg, seed)
    if not sources:
        raise ValueError(f"no readable point clouds under {source_dir}")

    parts = sorted({(s.class_label, int(lab)) for s in sources if s.local_labels is not None
                    for lab in np.unique(s.local_labels)})
    if len(parts) > cfg.codebook_size:
        raise ValueError(f"{len(parts)} distinct parts exceed codebook size {cfg.codebook_size}")
    codebook = T.build_codebook(cfg.codebook_size, parts)
    global_id = {p: i for i, p in enumerate(parts)}

    sample_dir = out_dir / "samples"
    sample_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for src in sources:
        split = _split_of(src.key, seed, cfg.split_fractions)
        for task in cfg.tasks:
            if task == T.SEGMENTATION and src.local_labels is None:
                continue
            n_draws = cfg.draws_per_task + (cfg.seg_augment if task == T.SEGMENTATION else 0)
            for d in range(n_draws):
                sid = f"{src.key}:{task}:{d}"
                s = _generate(src, task, sid, d, seed, cfg, codebook, global_id)
                entries.append(_write_sample(s, split, sample_dir, out_dir))

    manifest = {
        "format": FORMAT,
        "seed": seed,
        "config": dataclasses.asdict(cfg),
        "codebook": {"size": codebook.size, "parts": [list(p) for p in parts]},
        "entries": entries,
    }
    (out_dir / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    log.info("wrote %d samples from %d sources to %s", len(entries), len(sources), out_dir)
    return manifest


def _generate(src: _Source, task, sid, draw, seed, cfg, codebook, global_id) -> T.TaskSample:
    rng = np.random.default_rng(T.derive_seed(seed, sid))
    meta = dict(class_label=src.class_label, sample_id=sid)
    if task == T.SEGMENTATION:
        labels = np.array([global_id[(src.class_label, int(v))] for v in src.local_labels])
        pts = src.points if draw == 0 else T.augment(src.points, rng)
        return T.gen_segmentation(pts, labels, codebook, **meta)
    level = int(rng.choice(cfg.levels))
    sub_seed = int(rng.integers(2 ** 63))
    gen = {T.RECONSTRUCTION: T.gen_reconstruction, T.DENOISING: T.gen_denoising,
           T.REGISTRATION: T.gen_registration}[task]
    return gen(src.points, level, sub_seed, **meta)


def _write_sample(s: T.TaskSample, split, sample_dir: Path, root: Path) -> dict:
    stem = sample_dir / _safe(s.sample_id)
    inp, tgt = stem.with_name(stem.name + ".input.f32"), stem.with_name(stem.name + ".target.f32")
    pointio.save_cloud(inp, s.input)
    pointio.save_cloud(tgt, s.target)
    entry = {
        "sample_id": s.sample_id, "task": s.task, "level": s.level, "class": s.class_label,
        "input_path": inp.relative_to(root).as_posix(),
        "target_path": tgt.relative_to(root).as_posix(),
        "split": split,
    }
    if s.labels is not None:
        lab = stem.with_name(stem.name + ".labels")
        pointio.save_labels(lab, s.labels)
        entry["labels_path"] = lab.relative_to(root).as_posix()
    if s.rotation is not None:
        entry["rotation"] = s.rotation.to_dict()
    return entry


def load_manifest(data_dir) -> dict:
    path = Path(data_dir) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    return json.loads(path.read_text())


def codebook_from_manifest(manifest: dict) -> T.LabelCodebook:
    cb = manifest["codebook"]
    return T.build_codebook(cb["size"], [tuple(p) for p in cb["parts"]])


def load_entry(data_dir, entry: dict) -> T.TaskSample:
    root = Path(data_dir)
    s = T.TaskSample(
        input=pointio.load_cloud(root / entry["input_path"]),
        target=pointio.load_cloud(root / entry["target_path"]),
        task=entry["task"], level=entry["level"], class_label=entry["class"],
        sample_id=entry["sample_id"],
    )
    if "labels_path" in entry:
        s.labels = pointio.load_labels(root / entry["labels_path"])
    if "rotation" in entry:
        s.rotation = Rotation.from_dict(entry["rotation"])
    return s


def load_split(data_dir, split: Optional[str] = None, tasks=None) -> list[T.TaskSample]:
    manifest = load_manifest(data_dir)
    return [load_entry(data_dir, e) for e in manifest["entries"]
            if (split is None or e["split"] == split) and (tasks is None or e["task"] in tasks)]
