import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

OVERFIT_STEPS = 300


@pytest.fixture(scope="session")
def overfit():
    """Desk PIC-Sep trained on the 32 fixed samples, with masked CD before and after."""
    from pic3d import taskgen as T
    from pic3d.config import RunConfig
    from pic3d.train import PairSampler, Trainer

    from helpers import masked_cd, overfit_samples

    samples, codebook = overfit_samples()
    cfg = RunConfig.desk(batch_size=8, max_steps=OVERFIT_STEPS, tasks=list(T.TASKS), seed=0)
    tr = Trainer(cfg, len(samples))
    sampler = PairSampler(samples, cfg.tasks)
    by_task = {t: [s for s in samples if s.task == t] for t in T.TASKS}
    fixed = [T.select_prompt(q, by_task[q.task], T.RANDOM, seed=i) for i, q in enumerate(samples)]
    t0 = time.time()
    initial = masked_cd(tr, fixed)
    for _ in range(OVERFIT_STEPS):
        tr.train_step(sampler.draw(tr.rng, cfg.batch_size))
    final = masked_cd(tr, fixed)
    return dict(trainer=tr, samples=samples, codebook=codebook, initial=initial, final=final,
                seconds=time.time() - t0)
