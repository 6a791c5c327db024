"""Desk-scale streaming video latent diffusion engine."""

__version__ = "0.1.0"

from . import cache, conditioning, dit, fileio, flow, planner, streamer, tensorops, vae  # noqa: F401
