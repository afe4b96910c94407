import numpy as np
import pytest

from transducer_distill.lattice import Lattice


def random_lattice(rng: np.random.Generator, T: int, U: int, K: int) -> Lattice:
    """Random normalized lattice of shape T x (U+1) x (K+1)."""
    logits = rng.normal(size=(T, U + 1, K + 1))
    logp = logits - np.log(np.sum(np.exp(logits), axis=-1, keepdims=True))
    return Lattice(logp)


def uniform_lattice(T: int, U: int, K: int) -> Lattice:
    return Lattice(np.full((T, U + 1, K + 1), -np.log(K + 1)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240)
