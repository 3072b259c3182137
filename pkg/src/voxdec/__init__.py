"""voxdec: a self-contained sandbox where simulated brain activity is decoded
back into images and captions through ridge regression and a dual-conditioned
latent diffusion model, with every stage checkable against the generating
ground truth."""

__version__ = "0.1.0"
