"""TRUST: language-guided unsupervised domain adaptation in embedding space.

Pipeline: caption-derived pseudo-labels -> similarity-based reliability
weights -> reweighted classification + soft-contrastive training of a
small vision model, all deterministic under a single seed.
"""

__version__ = "0.1.0"

from .errors import TrustError

__all__ = ["TrustError", "__version__"]
