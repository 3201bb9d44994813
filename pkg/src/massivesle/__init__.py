"""Lattice Monte Carlo for massive SLE4, massive CLE4, massive GFFs and
massive Brownian loop soups, with the exponential-weight change of measure
connecting the massless and massive objects and dense Gaussian / spectral
oracles cross-checking every construction."""

LAMBDA = 0.6266570686577501  # sqrt(pi / 8), the level-line height

__version__ = "0.1.0"
