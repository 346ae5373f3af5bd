"""Shared model builders for the test suite."""

import numpy as np

from mkvdro.model import Additive, FunctionFamily as F, ModelSpec


def ou(a=1.0, sigma=0.2, T=1.0):
    return ModelSpec.mean_reversion(a, sigma, T)


def tanh_vol(a=1.0, T=1.0):
    return ModelSpec.mean_reversion(a, F.tanh_saturated(0.2, 0.05, 1.0), T)


def _smooth(rng, scale):
    kind = rng.choice(["constant", "affine", "tanh_saturated"])
    if kind == "constant":
        return F.constant(rng.uniform(-scale, scale))
    if kind == "affine":
        return F.affine(rng.uniform(-scale, scale), rng.uniform(-scale, scale))
    return F.tanh_saturated(rng.uniform(-scale, scale), rng.uniform(-scale, scale),
                            rng.uniform(0.5, 2.0))


def random_spec(rng, T=1.0):
    """Random admissible spec with genuine drift and diffusion interaction.

    ``q`` slopes are kept bounded (constant or tanh) and the diffusion stays
    away from zero so that paths are well behaved.
    """
    drift = Additive(_smooth(rng, 1.0),
                     F.tanh_saturated(rng.uniform(-1, 1), rng.uniform(-0.5, 0.5),
                                      rng.uniform(0.5, 2.0)))
    diff = Additive(F.tanh_saturated(rng.uniform(0.15, 0.3), rng.uniform(-0.1, 0.1),
                                     rng.uniform(0.5, 2.0)),
                    F.constant(rng.uniform(-0.1, 0.1)))
    g0 = rng.choice([F.identity(), F.tanh_saturated(0.0, 1.0, 1.0), F.affine(0.3, 0.7)])
    g1 = rng.choice([F.identity(), F.tanh_saturated(0.1, 0.5, 1.5)])
    return ModelSpec(drift, g0, diff, g1, T)


def random_bounded_spec(rng, T=1.0):
    """Random spec whose derivative bounds are all finite."""
    drift = Additive(_smooth(rng, 1.0), F.constant(rng.uniform(-1, 1)))
    diff = Additive(F.tanh_saturated(rng.uniform(0.15, 0.3), rng.uniform(-0.2, 0.2),
                                     rng.uniform(0.5, 2.0)),
                    F.constant(rng.uniform(-0.1, 0.1)))
    g0 = rng.choice([F.identity(), F.tanh_saturated(0.0, 1.0, 1.0)])
    g1 = F.tanh_saturated(0.1, 0.5, 1.5)
    return ModelSpec(drift, g0, diff, g1, T)


def norm_n(v):
    return float(np.sqrt(np.mean(np.asarray(v) ** 2)))


def inner_n(u, v):
    return float(np.mean(np.asarray(u) * np.asarray(v)))
