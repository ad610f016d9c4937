"""Diffusion-guided sequential recommender with stability routing,
Thompson-sampling redundancy removal, and counterfactual re-weighting."""

__version__ = "0.1.0"

from driftrec.config import ModelConfig, load_config
from driftrec.rng import seeded_rng

__all__ = ["ModelConfig", "load_config", "seeded_rng", "__version__"]
