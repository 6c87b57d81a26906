"""Event-triggered control over a shared OFDMA downlink, with a cascade
double actor-critic learner and a model-based comparator."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
