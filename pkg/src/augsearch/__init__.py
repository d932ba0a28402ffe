"""Differentiable search for data-augmentation policies.

Learns a per-epoch total augmentation probability and a categorical
distribution over discrete ops by one-step meta-gradient descent, and replays
the resulting schedule during final training.
"""

__version__ = "0.1.0"
