"""Sparse implicit neural representations from meta-learned, pruned MLPs.

The package is plain numpy: hand-written forward and backward passes for
SIREN and Fourier-feature networks, second-order MAML, global magnitude
pruning with meta-retraining, and a fixed-budget evaluation harness.
"""
from .models import ArchSpec, Mask, forward, init
from .signals import DataError, Signal, SignalSet, synth_set

__all__ = ["ArchSpec", "DataError", "Mask", "Signal", "SignalSet", "forward", "init",
           "synth_set"]
__version__ = "0.1.0"
