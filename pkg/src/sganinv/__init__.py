"""Spatial GAN simulation of categorical subsurface fields and latent-space inversion."""

__version__ = "0.1.0"
