"""Seeded configuration suites shared by the unit and acceptance tests."""
import numpy as np

from bora.adapters import AdapterConfig
from bora.grad import random_params
from bora.rand_init import splitmix64

GEOMETRIES = [
    (8, 8, 2, 2), (16, 16, 2, 2), (16, 16, 4, 4), (12, 18, 3, 3), (24, 24, 4, 3),
    (32, 16, 2, 8), (20, 30, 5, 5), (64, 64, 8, 4), (6, 9, 1, 3), (48, 32, 4, 16),
]


def bora_suite(count=50, transform="norm-exp"):
    """``count`` seeded (config, params) pairs cycling through ``GEOMETRIES``."""
    out = []
    for seed in range(count):
        m, n, r, b = GEOMETRIES[seed % len(GEOMETRIES)]
        config = AdapterConfig(m, n, r, b, variant="bora", sigma_transform=transform,
                               alpha=float(r + seed % 3))
        out.append((config, random_params(config, seed)))
    return out


def as_variant(config, variant):
    b = 1 if variant == "lora" else config.b
    return AdapterConfig(config.m, config.n, config.r, b, variant=variant, alpha=config.alpha)


def rng_for(seed):
    return np.random.default_rng(splitmix64(seed)[1])
