import numpy as np
import pytest

from lolprf.core import Document, VectorRepr
from lolprf.index import build_matrix
from lolprf.reformulator import ReformulatorConfig, init_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_dense_corpus(rng):
    docs = [Document(f"d{i:02d}", (), VectorRepr.dense(rng.normal(size=6))) for i in range(30)]
    return docs


@pytest.fixture
def small_matrix(small_dense_corpus):
    return build_matrix(small_dense_corpus)


@pytest.fixture
def tiny_model():
    cfg = ReformulatorConfig(kind="dense", input_dim=6, width=8, n_heads=2, ffn_width=16, max_depth=5)
    return init_params(cfg, 7)
