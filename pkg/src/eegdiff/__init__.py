"""eegdiff: desk-scale EEG-conditioned latent diffusion with embedding metrics."""

__version__ = "0.1.0"
