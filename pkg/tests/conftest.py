import numpy as np
import pytest

from csplab import codeclm as clm


def tiny_model_config(**overrides):
    """A fully-exercised toy: every vocab id and position row gets gradient."""
    base = dict(n_layers=2, model_dim=8, inner_dim=16, n_heads=2,
                text_vocab=4, speech_vocab=6, max_seq_len=10)
    base.update(overrides)
    return clm.ModelConfig(**base)


def tiny_batch():
    text = np.array([[0, 1, 2], [3, 0, 1]])
    speech = np.array([[0, 1, 2, 3, 4, 5], [5, 4, 3, 2, 1, 0]])
    return text, speech


def planted_dataset(n_layers, j_star, n=240, d=16, t=10, n_spk=4, n_emo=3,
                    seed=0, amp=3.0):
    """Fake backbone captures: layer j_star linearly encodes both labels,
    every other layer is pure noise."""
    rng = np.random.default_rng(seed)
    data = []
    for _ in range(n):
        ys = int(rng.integers(n_spk))
        ye = int(rng.integers(n_emo))
        stack = rng.normal(size=(n_layers, t, d))
        sig = np.zeros(d)
        sig[ys] = amp
        sig[n_spk + ye] = amp
        stack[j_star] = sig + 0.3 * rng.normal(size=(t, d))
        data.append((stack, ys, ye))
    return data


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
