"""Generative compressed sensing with coherence-adapted Fourier sampling.

Modules: ``generator`` (ReLU generative networks), ``measurement``
(subsampled Fourier operators), ``coherence`` (local coherences and sampling
distributions), ``riptest`` (sample-complexity rates and Gen-RIP checks),
``recovery`` (latent-space solvers and error bounds), ``latentprior``
(GMM latent prior), ``darcy`` (dataset), ``training`` (autoencoders),
``pipeline``/``cli`` (experiments).
"""

__version__ = "0.1.0"
