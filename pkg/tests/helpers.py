"""Shared builders for synthetic populations used across test modules."""

import numpy as np

from wdlearn.erm import CylinderSubspace
from wdlearn.measures import DiscreteMeasure, GroundSpace


def dirichlet_population(ground, size, seed, alpha=1.0):
    rng = np.random.default_rng(seed)
    alphas = np.full(ground.size, alpha)
    return [DiscreteMeasure(ground, rng.dirichlet(alphas)) for _ in range(size)]


def smooth_feature_subspace(ground, n_features, seed, include_constant=True):
    """Raw subspace spanned by bounded smooth profiles of the coordinates."""
    rng = np.random.default_rng(seed)
    x = ground.points
    scale = max(np.abs(x).max(), 1.0)
    feats = []
    if include_constant:
        feats.append(np.ones(ground.size))
    for _ in range(n_features - len(feats)):
        freq = rng.uniform(0.5, 2.0, size=ground.dim)
        phase = rng.uniform(0, 2 * np.pi)
        feats.append(np.sin((x / scale) @ freq * np.pi + phase))
    return CylinderSubspace(ground, np.array(feats))


def grid_population(shape=(6,), size=200, seed=0, alpha=0.8):
    ground = GroundSpace.grid(shape)
    return ground, dirichlet_population(ground, size, seed, alpha)
