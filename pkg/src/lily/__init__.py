"""Latent causal dynamics toolkit.

Generates temporally causal latent processes under modular distribution
shifts, audits identifiability conditions numerically, estimates the latent
dynamics with a sequential VAE whose prior comes from learned inverse
transitions, and corrects new-domain shifts from a few samples.
"""

__version__ = "0.1.0"
