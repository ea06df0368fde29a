"""Out-of-domain intent detection with max-softmax scoring, entropy
regularization and latent-space pseudo-OOD generation."""

__version__ = "0.1.0"
