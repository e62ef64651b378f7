"""splatcast: forecasting dynamic Gaussian-splat scenes with a latent ODE.

Pipeline: a synthetic scene with analytic motion produces ground-truth
trajectories and rendered frames; an interpolation model (canonical Gaussians
plus a deformation MLP) is fit inside the observed window and frozen; dynamic
sampling slices its trajectories into context/target pairs; a Transformer
encoder, latent ODE, and decoder learn to extrapolate them; predictions are
rendered and scored against the analytic ground truth beyond the window.
"""

__version__ = "0.1.0"
