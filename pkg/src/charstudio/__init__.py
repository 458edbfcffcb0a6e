"""Two-stage character GAN engine: silhouettes from noise, then colorization.

Subpackages cover the training engine (tensor autodiff, layer zoo, losses and
optimizers), Frechet-distance evaluation, dataset tooling, checkpointing, and
the studio HTTP service used by the browser UI.
"""

__version__ = "0.1.0"
