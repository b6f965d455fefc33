import os
import re
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from dpllm.data import Dataset
from dpllm.model import ModelParams, init_params

settings.register_profile("dpllm", deadline=None, max_examples=50)
settings.load_profile("dpllm")

REPO = Path(__file__).resolve().parents[1]


def data_root() -> Path:
    return Path(os.environ.get("DPLLM_DATA_DIR", REPO / "data"))


def random_model(rng, K=3, M=3, D=6, P=4, beta=None, scale=0.5, projected=True):
    beta = float(rng.uniform(0.2, 3.0)) if beta is None else beta
    params = init_params(K, M, D, P if projected else None, beta, seed=int(rng.integers(2**31)),
                         projection_seed=int(rng.integers(2**62)))
    return ModelParams(
        K, M, D, params.proj_dim, beta,
        rng.normal(0, scale, size=params.filters.shape),
        rng.normal(0, scale, size=params.biases.shape),
        params.projection_seed, projected,
    )


def onehot(k, K):
    y = np.zeros(K)
    y[k] = 1
    return y


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def blobs():
    """Four well separated Gaussian blobs in 10 dimensions; train and test halves."""
    r = np.random.default_rng(7)
    centers = r.normal(0, 3, size=(4, 10))
    labels = r.integers(0, 4, size=2000)
    X = centers[labels] + r.normal(size=(2000, 10))
    full = Dataset(X, labels, 4)
    return full.subset(np.arange(1600)), full.subset(np.arange(1600, 2000))


@pytest.fixture(scope="session")
def digits():
    """scikit-learn's 8x8 digits scaled to [0, 1], split 1400 / rest."""
    from sklearn.datasets import load_digits

    d = load_digits()
    X = d.data / 16.0
    perm = np.random.default_rng(0).permutation(len(X))
    full = Dataset(X[perm], d.target[perm].astype(np.int64), 10, image_shape=(8, 8))
    return full.subset(np.arange(1400)), full.subset(np.arange(1400, len(X)))


# --- acceptance summary -----------------------------------------------------

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


def _criterion_order(line):
    label = re.search(r"criterion (\d+)(\w*)", line)
    return int(label.group(1)), label.group(2)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=_criterion_order):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """``criterion(label, ok, detail)`` prints one PASS/FAIL line and asserts ``ok``."""

    def record(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {label}: {detail}"
        request.config.stash[_ACCEPTANCE].append(line)
        print(line)
        if not ok:
            pytest.fail(line, pytrace=False)

    return record
