import numpy as np
import torch

from pic3d import geometry as G
from pic3d import shapes
from pic3d import taskgen as T
from pic3d.model import ModelConfig, build_model, build_tokens
from pic3d.tokenization import TRAIN, joint_sample, make_mask, query_batch

TINY = dict(dim=16, enc_depth=1, dec_depth=1, heads=2, merge_block=1, n_patches=4, patch_size=4,
            embed_hidden=4)


def tiny_model(variant="sep", seed=0, **kw):
    return build_model(ModelConfig(variant=variant, **{**TINY, **kw}), seed)


def random_pairs(n_pairs, n_points=64, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_pairs):
        pts, _ = shapes.make_object(shapes.CATEGORIES[i % 5], rng, n_points)
        clean = G.normalize(pts)
        p = T.gen_registration(clean, 1, seed=i)
        pts2, _ = shapes.make_object(shapes.CATEGORIES[i % 5], rng, n_points)
        q = T.gen_registration(G.normalize(pts2), 1, seed=i + 100)
        out.append((p, q))
    return out


def tokens_for(model, pairs, mode=TRAIN, seed=0, dtype=torch.float32, ratio=None):
    cfg = model.cfg
    ratio = (0.7 if cfg.variant == "sep" else 0.6) if ratio is None else ratio
    batches, masks = [], []
    for i, (p, q) in enumerate(pairs):
        pb = joint_sample(p.input, p.target, cfg.n_patches, cfg.patch_size)
        qb = (joint_sample(q.input, q.target, cfg.n_patches, cfg.patch_size) if mode == TRAIN
              else query_batch(q.input, cfg.n_patches, cfg.patch_size))
        batches.append((pb, qb))
        masks.append(make_mask(cfg.variant, cfg.n_patches, ratio, mode, seed + i))
    return build_tokens(batches, masks, dtype)


def scramble_masked(tokens, rng):
    """Replace every masked token's patch and own center with random coordinates."""
    t = {k: v.clone() for k, v in tokens.items()}
    m = t["masked"]
    noise_p = torch.as_tensor(rng.normal(size=t["patches"].shape) * 3, dtype=t["patches"].dtype)
    noise_c = torch.as_tensor(rng.normal(size=t["centers"].shape) * 3, dtype=t["centers"].dtype)
    t["patches"] = torch.where(m[..., None, None], noise_p, t["patches"])
    t["centers"] = torch.where(m[..., None], noise_c, t["centers"])
    return t


def clean_objects(n, seed, n_points=1024):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        cat = shapes.CATEGORIES[i % len(shapes.CATEGORIES)]
        pts, labels = shapes.make_object(cat, rng, n_points)
        out.append((cat, G.normalize(pts), labels))
    return out


def overfit_samples():
    """32 fixed samples: 8 objects, one per task each."""
    codebook = T.build_codebook(50)
    out = []
    for i, (cat, clean, labels) in enumerate(clean_objects(8, seed=31)):
        kw = dict(class_label=cat)
        lv = 1 + i % 5
        out += [
            T.gen_reconstruction(clean, lv, sample_id=f"o{i}r", **kw),
            T.gen_denoising(clean, lv, seed=i, sample_id=f"o{i}d", **kw),
            T.gen_registration(clean, lv, seed=i, sample_id=f"o{i}g", **kw),
            T.gen_segmentation(clean, labels, codebook, sample_id=f"o{i}s", **kw),
        ]
    return out, codebook


def masked_cd(trainer, pairs, seed=0):
    """Mean masked-patch Chamfer over a fixed batch: fixed sampling seeds and masks."""
    from pic3d.train import masked_loss

    cfg = trainer.cfg
    batches, masks = [], []
    for i, pair in enumerate(pairs):
        batches.append((joint_sample(pair.prompt.input, pair.prompt.target, cfg.n_patches, cfg.patch_size),
                        joint_sample(pair.query.input, pair.query.target, cfg.n_patches, cfg.patch_size)))
        masks.append(make_mask(cfg.variant, cfg.n_patches, cfg.mask_ratio, TRAIN, seed + i))
    tokens = build_tokens(batches, masks)
    trainer.model.eval()
    with torch.no_grad():
        return masked_loss(trainer.model(tokens), tokens["gt"]).item()
