# %% [markdown]
# # Meta-learned sparse initializations, end to end
#
# 1. meta-learn a dense SIREN over a set of images,
# 2. alternate global magnitude pruning with meta-retraining,
# 3. compare the sparse init against random pruning and a narrow net trained
#    from scratch, each fitted for 100 steps on held-out images.
#
# Step counts are cut well below the desk preset so this runs in a few minutes.

# %%
import logging

import numpy as np

from sparseinr import config as C
from sparseinr.evaluation import dense_narrow_width_for, evaluate
from sparseinr.models import Mask, init, prunable_count, surviving_count
from sparseinr.optim import run_meta
from sparseinr.pruning import run_meta_sparse_inr
from sparseinr.signals import synth_set

logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = C.preset("desk")
meta = cfg.meta.replace(outer_steps=1500, retrain_steps=300)
arch = cfg.arch
data = synth_set(seed=0, n=10, size=32)


def score(a, p, m):
    return evaluate(a, p, m, data, split="val", n_signals=10, budget=100, lr=1e-3).mean_psnr


# %% [markdown]
# Dense meta-learning. Compare the meta-learned init with a plain init under
# the same 100-step fitting budget.

# %%
mask = Mask.ones(arch)
theta0 = init(arch, np.float32)
dense = run_meta(arch, theta0, mask, data, meta, meta.outer_steps).params
print(f"plain init  {score(arch, theta0, mask):.2f} dB")
print(f"meta init   {score(arch, dense, mask):.2f} dB")

# %% [markdown]
# Prune 20% of the survivors per round until a third remain. The random
# variant starts from the same dense weights.

# %%
sched = cfg.prune.schedule(prunable_count(arch))
print("survivor schedule:", sched.survivors(prunable_count(arch)))
_, _, trace = run_meta_sparse_inr(arch, data, meta, sched, "magnitude", params=dense)
_, _, rtrace = run_meta_sparse_inr(arch, data, meta, sched, "random", params=dense)

# %%
last, rlast = trace.rounds[-1], rtrace.rounds[-1]
count = surviving_count(last.mask, arch)
width = dense_narrow_width_for(cfg.eval.widths, arch, count)
narrow = arch.replace(width=width)
print(f"{count} surviving params; dense-narrow match is width {width}")
print(f"magnitude-pruned meta init  {score(arch, last.params, last.mask):.2f} dB")
print(f"randomly pruned meta init   {score(arch, rlast.params, rlast.mask):.2f} dB")
print(f"narrow net from scratch     {score(narrow, init(narrow, np.float32), Mask.ones(narrow)):.2f} dB")
