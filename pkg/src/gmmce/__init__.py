"""GMM channel estimation trained on noisy, sparsely observed pilot data."""

__version__ = "0.1.0"
