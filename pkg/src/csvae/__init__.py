"""Power-constrained compressive sensing with VAE-based recovery."""

__version__ = "0.1.0"
