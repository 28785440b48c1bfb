"""Road-network inference from GPS trajectories.

Offline batch pipeline (clustering + sparsification), an online streaming
variant, synthetic ground-truth generation, and map quality scoring.
"""

__version__ = "0.1.0"
