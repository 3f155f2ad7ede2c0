"""Diffusion recommender with classifier-free guidance, written on top of numpy."""

__version__ = "0.1.0"
