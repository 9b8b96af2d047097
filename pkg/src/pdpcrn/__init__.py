"""Multi-channel speech enhancement with parallel dual-path conv-recurrent nets.

From-scratch stack: reverse-mode autodiff tensors, the network layers
built on them, room simulation and mixture synthesis, an STFT front end,
training, objective metrics, and compute profiling, wired together by a
command-line interface.
"""

__version__ = "0.1.0"
