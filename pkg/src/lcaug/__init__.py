"""Low-cost augmentation search toolkit.

Deterministic image transforms, a 12-sub-policy stochastic augmentation
engine, lesion-grouped cross-validation search over a probability ladder,
a weighted-loss reference classifier, and balanced-accuracy metrics.
"""

from .image import ImageU8, load_ppm, save_ppm
from .kernels import BACKEND as KERNEL_BACKEND
from .policy import LcaPolicy, lca_default, probability_ladder, search_space_size

__version__ = "0.1.0"

__all__ = [
    "ImageU8",
    "load_ppm",
    "save_ppm",
    "LcaPolicy",
    "lca_default",
    "probability_ladder",
    "search_space_size",
    "KERNEL_BACKEND",
    "__version__",
]
