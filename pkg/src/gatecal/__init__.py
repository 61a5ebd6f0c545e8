"""gatecal: reward-driven gate calibration of a toy flow-matching
diffusion transformer, optimized with a from-scratch CMA-ES."""

__version__ = "0.1.0"
