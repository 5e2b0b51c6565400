# %% [markdown]
# # Winning tickets on a single image
#
# Iterative magnitude pruning with rewinding: train, drop 20% of the
# surviving weights, rewind survivors to their initial values, repeat. We
# compare each ticket's best PSNR with a dense network of roughly the same
# size trained the same way.

# %%
import dataclasses

from sparseinr import config as C
from sparseinr.experiments import ticket_comparison
from sparseinr.models import prunable_count
from sparseinr.signals import synth_set

cfg = C.preset("desk_ticket")
cfg = cfg.replace(ticket=dataclasses.replace(cfg.ticket, train_steps=500))
signal = synth_set(seed=0, n=2, size=64).train[0]

# %%
res = ticket_comparison(cfg, signal)
d = prunable_count(cfg.arch)
for k, (n, peak) in enumerate(zip(res.ticket_survivors, res.ticket_peak)):
    print(f"round {k}: {n:>6} weights ({n / d:5.1%})  peak {peak:6.2f} dB")
print(f"dense-narrow width {res.narrow_width} ({res.narrow_params} params): "
      f"peak {res.narrow_peak:6.2f} dB")
