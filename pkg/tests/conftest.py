import numpy as np
import pytest

from lwrobust.data import Corpus, Document
from lwrobust.models import LinearModel, LwanModel
from lwrobust.objectives import BatchView

ACCEPTANCE_LINES: list[str] = []


def random_targets(rng, n, L, p=0.35):
    y = (rng.random((n, L)) < p).astype(np.float64)
    y[np.arange(n), rng.integers(0, L, n)] = 1.0
    return y


def linear_batch(rng, n=6, L=4, d=3):
    x = rng.standard_normal((n, d))
    return BatchView(np.arange(n), x, random_targets(rng, n, L))


def lwan_batch(rng, n=4, L=3, V=7, T=5):
    lengths = rng.integers(1, T + 1, n)
    tokens = np.zeros((n, T), dtype=np.int64)
    for i, t in enumerate(lengths):
        tokens[i, :t] = rng.integers(0, V, t)
    return BatchView(np.arange(n), (tokens, lengths), random_targets(rng, n, L))


def feature_corpus(label_sets, L, d=2, rng=None, times=None):
    rng = rng or np.random.default_rng(0)
    docs = []
    for i, labels in enumerate(label_sets):
        t = float(i if times is None else times[i])
        docs.append(Document(f"d{i:04d}", t, tuple(labels), features=rng.standard_normal(d)))
    return Corpus(docs, L, "feature")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=[0, 16], ids=["h0", "h16"])
def linear_model(request):
    return LinearModel(3, 4, request.param)


@pytest.fixture
def lwan_model():
    return LwanModel(7, 3, e=4, k=3)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
