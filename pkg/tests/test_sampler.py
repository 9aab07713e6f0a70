import math

import numpy as np
import pytest

from conftest import feature_corpus
from lwrobust.sampler import (GROUP_BALANCED, SamplerConfig, epoch_batches, group_balanced_batches,
                              iter_batch_views, standard_batches)


def long_tail_corpus(rng, L, n, s=1.2):
    w = np.arange(1, L + 1, dtype=float) ** -s
    w /= w.sum()
    sets = []
    for i in range(n):
        k = 1 + int(rng.random() < 0.4)
        sets.append(tuple(sorted(set(rng.choice(L, size=k, p=w).tolist()))))
    # make every label present at least once
    for l in range(L):
        sets[l] = tuple(sorted(set(sets[l]) | {l}))
    return feature_corpus(sets, L, rng=rng)


def labels_in(corpus, idx):
    return set().union(*(corpus.documents[i].labels for i in idx))


def test_standard_chunking_and_partition():
    cfg = SamplerConfig(batch_size=4, seed=1)
    batches = standard_batches(range(10), cfg, 1)
    assert [len(b) for b in batches] == [4, 4, 2]
    assert sorted(np.concatenate(batches).tolist()) == list(range(10))
    again = standard_batches(range(10), cfg, 1)
    assert all(np.array_equal(a, b) for a, b in zip(batches, again))
    assert not all(np.array_equal(a, b) for a, b in zip(batches, standard_batches(range(10), cfg, 2)))


def test_every_group_in_every_batch_for_small_label_sets(rng):
    c = long_tail_corpus(rng, 16, 400)
    cfg = SamplerConfig(64, 4, 3, GROUP_BALANCED)
    for batch in epoch_batches(c, range(400), cfg, 1):
        assert len(batch) == 64
        assert labels_in(c, batch) == set(range(16))


def test_hundred_labels_one_per_group(rng):
    c = long_tail_corpus(rng, 100, 800)
    cfg = SamplerConfig(64, 1, 3, GROUP_BALANCED)
    batches = epoch_batches(c, range(800), cfg, 1)
    assert len(batches) == math.ceil(800 / 64)
    for a, b in zip(batches[:-1], batches[1:]):
        assert len(labels_in(c, a)) >= 64
        assert len(labels_in(c, np.concatenate([a, b]))) >= 100


def test_single_label_dataset_draws_from_whole_pool():
    c = feature_corpus([(0,)] * 20, 1)
    cfg = SamplerConfig(8, 2, 0, GROUP_BALANCED)
    drawn = np.concatenate([b for e in range(1, 30) for b in epoch_batches(c, range(20), cfg, e)])
    counts = np.bincount(drawn, minlength=20)
    assert counts.min() > 0
    assert counts.max() < 3 * counts.mean()


def test_absent_labels_warn_and_are_skipped():
    c = feature_corpus([(0,), (1,), (0, 1)], 3)
    cfg = SamplerConfig(4, 1, 0, GROUP_BALANCED)
    with pytest.warns(RuntimeWarning, match="1 label"):
        batches = group_balanced_batches([0, 1, 2], [d.labels for d in c.documents], cfg, 1, 3)
    assert all(2 not in labels_in(c, b) for b in batches)


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(10, 3, 0, GROUP_BALANCED)
    with pytest.raises(ValueError):
        SamplerConfig(strategy="stratified")


def check_sampler_properties(corpus_seed):
    """Determinism, coverage window, membership and oversampling on one random long-tail corpus."""
    rng = np.random.default_rng(corpus_seed)
    L = int(rng.integers(3, 40))
    n = int(rng.integers(2 * L, 8 * L))
    c = long_tail_corpus(rng, L, n)
    train = sorted(rng.choice(n, size=n - n // 5, replace=False).tolist()) + list(range(L))
    train = sorted(set(train))
    n_per = int(rng.choice([1, 2, 4]))
    cfg = SamplerConfig(32, n_per, int(rng.integers(1 << 30)), GROUP_BALANCED)
    b1 = epoch_batches(c, train, cfg, 3)
    b2 = epoch_batches(c, train, cfg, 3)
    assert all(np.array_equal(a, b) for a, b in zip(b1, b2))
    assert set(np.concatenate(b1).tolist()) <= set(train)
    window = math.ceil(L * n_per / cfg.batch_size)
    for start in range(len(b1) - window + 1):
        assert labels_in(c, np.concatenate(b1[start:start + window])) == set(range(L))
    for view in iter_batch_views(c, train, cfg, 3):
        for g, members in enumerate(view.group_members):
            expect = [i for i, doc in enumerate(view.indices) if g in c.documents[doc].labels]
            assert members.tolist() == expect
    # the rarest label is drawn more often than under plain shuffling
    rarest = int(np.argmin(c.targets(train).sum(axis=0)))
    count = lambda strategy: sum(
        c.targets(b)[:, rarest].sum()
        for e in range(10)
        for b in epoch_batches(c, train, SamplerConfig(cfg.batch_size, n_per if strategy == GROUP_BALANCED else 1,
                                                       cfg.seed, strategy), e))
    assert count(GROUP_BALANCED) > count("standard")


@pytest.mark.parametrize("corpus_seed", range(5))
def test_sampler_properties_on_random_corpora(corpus_seed):
    check_sampler_properties(corpus_seed)
