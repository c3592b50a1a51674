"""Piecewise-linear construction with a closed-form optimal MAE."""

import math

import numpy as np

CENTERS = np.array([[-6.0, 0.0], [0.0, 6.0], [6.0, 0.0]])
SLOPES = np.array([[4.0, -3.0], [-5.0, 2.0], [3.0, 5.0]])
INTERCEPTS = np.array([10.0, -20.0, 5.0])


def piecewise_linear(n_rows=600, sigma=0.5, seed=0, spread=1.0):
    """Rows split evenly over three well separated Gaussian blobs; inside blob s
    the target is ``SLOPES[s] . x + INTERCEPTS[s]`` plus N(0, sigma^2) noise."""
    rng = np.random.default_rng(seed)
    segment = np.arange(n_rows) % 3
    X = CENTERS[segment] + rng.normal(0, spread, (n_rows, 2))
    clean = np.einsum("ij,ij->i", X, SLOPES[segment]) + INTERCEPTS[segment]
    return X, clean + rng.normal(0, sigma, n_rows), segment


def bayes_mae(sigma):
    return sigma * math.sqrt(2 / math.pi)
