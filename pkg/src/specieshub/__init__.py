"""Autotuning knowledge hub for computational species.

Continuously explores compiler optimization spaces for shared program
pieces, keeps only Pareto-winning solutions per (species, dataset,
platform, compiler) key, clusters species by their winning optimization,
predicts optimizations for unseen species from features, and emits
adaptive multi-version dispatchers. A coordinator/worker protocol spreads
the measurement work across volunteered machines.
"""

__version__ = "0.1.0"
