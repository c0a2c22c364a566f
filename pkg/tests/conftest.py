import warnings

import numpy as np
import pytest
import torch

from specnet.config import TrainConfig
from specnet.dom import RawPage
from specnet.synth import generate_split
from specnet.train import train

torch.set_num_threads(1)


def as_pages(synth_pages):
    return [RawPage(p.html, p.domain, p.label, f"synth-{i}") for i, p in enumerate(synth_pages)]


@pytest.fixture(scope="session")
def small_corpus():
    split = generate_split((24, 12, 12), n_templates=24, noise=0.2, seed=5, overlap=0.5)
    return {k: as_pages(v) for k, v in split.items()}


@pytest.fixture(scope="session")
def small_bundle(small_corpus):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = TrainConfig(epochs=2, patience=2, seed=1)
    return train(cfg, small_corpus["train"], small_corpus["val"])


@pytest.fixture
def rng():
    return np.random.default_rng(0)
