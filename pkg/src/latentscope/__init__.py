"""Latent-space validation for a denoising VAE on synthetic chirps.

Train a convolutional VAE with a mixture prior, fit per-dimension Bayesian
Gaussian mixtures to clean-input latents, sample them with HMC, and compare
the samples against noisy-input latents with two-sample KS tests.
"""

from . import hmc, mixture, nn, signalgen, stats, vae

__all__ = ["hmc", "mixture", "nn", "signalgen", "stats", "vae"]
__version__ = "0.1.0"
