"""Seeded random parameter draws for property checks."""

from __future__ import annotations

import math

import numpy as np

from .growth import Haldane, Monod
from .model import ModelParams, reference_params


def operating_draw(rng: np.random.Generator, base: ModelParams | None = None) -> ModelParams:
    """Random operating point around ``base`` kinetics.

    ``D`` is log-uniform on [0.01, 2], ``r`` uniform on [0.05, 0.95] and both
    inputs uniform on (0, 20].
    """
    base = base or reference_params()
    D = math.exp(rng.uniform(math.log(0.01), math.log(2.0)))
    r = rng.uniform(0.05, 0.95)
    s1 = 20.0 * (1.0 - rng.random())
    s2 = 20.0 * (1.0 - rng.random())
    return base.replace(D=D, r=r, s1_in=s1, s2_in=s2)


def kinetics_draw(rng: np.random.Generator) -> ModelParams:
    """Operating draw with yields, alpha and growth constants randomized too."""
    k2 = rng.uniform(0.5, 1.5)
    base = ModelParams(
        mu1=Monod(m=rng.uniform(0.5, 2.0), K=rng.uniform(0.2, 3.0)),
        mu2=Haldane(m=rng.uniform(0.5, 2.0), K=rng.uniform(0.2, 3.0), KI=rng.uniform(1.0, 20.0)),
        k1=k2 + rng.uniform(0.3, 3.0),
        k2=k2,
        k3=rng.uniform(0.3, 3.0),
        alpha=rng.uniform(0.2, 0.95),
        D=1.0,
        r=0.5,
        s1_in=1.0,
        s2_in=1.0,
    )
    return operating_draw(rng, base)


def state_in_omega(rng: np.random.Generator, p: ModelParams, scale: float = 1.0) -> np.ndarray:
    """Random nonnegative state whose mass totals are ``scale`` times a
    uniform fraction of the invariant-region bounds."""
    total = p.s1_in + p.s2_in
    weights = np.array([1.0, p.k1 - p.k2, 1.0, p.k3])
    x = np.empty(8)
    for j, bound in enumerate((total / p.alpha, total / p.alpha**2)):
        share = rng.dirichlet(np.ones(4)) * rng.uniform(0.0, 1.0) * bound * scale
        x[4 * j : 4 * j + 4] = share / weights
    return x
