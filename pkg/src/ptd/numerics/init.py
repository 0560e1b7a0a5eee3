"""Parameter initialisers."""
import numpy as np


def uniform_init(rng: np.random.Generator, shape, scale: float = 0.08) -> np.ndarray:
    """Uniform in (-scale, scale); the default for recurrent and dense weights."""
    return rng.uniform(-scale, scale, size=shape)


def kaiming_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """He-scaled normal for ReLU convolution filters."""
    return rng.standard_normal(size=shape) * np.sqrt(2.0 / fan_in)
