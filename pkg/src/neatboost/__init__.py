"""Tissue classification from transillumination-style grayscale images.

Structural descriptors -> two neuroevolution-tuned base learners
(histogram gradient boosting + gated attention MLP) -> weighted
probability fusion tuned by a Nelder-Mead simplex search.
"""

from . import analysis, fusion, gbdt, imaging, mlp, neat, pipeline
from .seeding import derive_rng, derive_seed

__version__ = "0.1.0"

__all__ = [
    "analysis", "fusion", "gbdt", "imaging", "mlp", "neat", "pipeline",
    "derive_rng", "derive_seed", "__version__",
]
