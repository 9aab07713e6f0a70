import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import linear_batch, lwan_batch, random_targets
from lwrobust import diffcore as dc
from lwrobust.models import LinearModel
from lwrobust.objectives import (OBJECTIVES, BatchView, DroState, ObjectiveConfig, bce_instance,
                                 coral, coral_penalty, dro_diagnostics, dro_weighted_loss, erm,
                                 group_dro, group_losses, group_uniform, irm, lwdro_v1, lwdro_v2,
                                 spectral_decoupling, vrex)

EPS = 1e-7


def logit_batch(logits, targets):
    """Batch for an identity model whose logits equal the inputs."""
    logits = np.asarray(logits, dtype=float)
    L = logits.shape[1]
    model = LinearModel(L, L)
    theta = model.layout.pack({"W2": np.eye(L), "b2": np.zeros(L)})
    return model, theta, BatchView(np.arange(len(logits)), logits, targets)


def value(fn, model, theta, batch, *args):
    tape = dc.Tape()
    out = fn(model, tape.leaf(theta), batch, *args)
    out = out[0] if isinstance(out, tuple) else out
    return float(out.value)


def bce_rows_oracle(z, y):
    p = np.clip(1 / (1 + np.exp(-z)), EPS, 1 - EPS)
    return np.mean(-y * np.log(p) - (1 - y) * np.log(1 - p), axis=1)


def group_oracle(z, y):
    rows = bce_rows_oracle(z, y)
    out = {}
    for g in range(y.shape[1]):
        members = [i for i in range(len(y)) if y[i, g] > 0.5]
        if members:
            out[g] = sum(rows[i] for i in members) / len(members)
    return out


# -- bce / erm --------------------------------------------------------------------

def test_bce_instance_examples():
    assert bce_instance([EPS, 1 - EPS], [0, 1]) < 1e-6
    assert bce_instance([0.5, 0.5, 0.5], [1, 0, 1]) == pytest.approx(math.log(2))
    assert bce_instance([0.9, 0.1], [1, 0]) == pytest.approx(-(math.log(0.9) * 2) / 2)
    assert bce_instance([0.9, 0.1], [1, 0]) == pytest.approx(0.105361, abs=1e-6)
    with pytest.raises(ValueError):
        bce_instance([0.5], [1, 0])


def test_erm_examples(rng):
    z = np.tile(rng.standard_normal(3), (4, 1))
    y = np.tile([1.0, 0.0, 1.0], (4, 1))
    m, th, b = logit_batch(z, y)
    assert value(erm, m, th, b) == pytest.approx(bce_instance(1 / (1 + np.exp(-z[0])), y[0]), abs=1e-15)
    z, y = rng.standard_normal((6, 4)), random_targets(rng, 6, 4)
    m, th, b = logit_batch(z, y)
    assert abs(value(erm, m, th, b) - bce_rows_oracle(z, y).mean()) < 1e-12


def test_group_losses_membership(rng):
    z, y = rng.standard_normal((7, 5)), random_targets(rng, 7, 5, p=0.3)
    y[:, 4] = 0
    m, th, b = logit_batch(z, y)
    tape = dc.Tape()
    losses, mask = group_losses(m, tape.leaf(th), b)
    expect = group_oracle(z, y)
    assert not mask[4] and losses.value[4] == 0.0
    for g, v in expect.items():
        assert abs(losses.value[g] - v) < 1e-12


def test_group_uniform_examples(rng):
    # single-label instances, equal-size groups: group mean equals instance mean
    y = np.eye(3)[[0, 0, 1, 1, 2, 2]]
    z = rng.standard_normal((6, 3))
    m, th, b = logit_batch(z, y)
    assert abs(value(group_uniform, m, th, b) - value(erm, m, th, b)) < 1e-12
    y1 = np.zeros((3, 3))
    y1[:, 1] = 1
    m, th, b = logit_batch(z[:3], y1)
    assert abs(value(group_uniform, m, th, b) - group_oracle(z[:3], y1)[1]) < 1e-12
    z, y = rng.standard_normal((8, 4)), random_targets(rng, 8, 4)
    m, th, b = logit_batch(z, y)
    gu = value(group_uniform, m, th, b)
    assert abs(gu - np.mean(list(group_oracle(z, y).values()))) < 1e-12
    assert abs(gu - value(erm, m, th, b)) > 1e-9


# -- group DRO ----------------------------------------------------------------------

def test_dro_equal_losses_keep_uniform():
    z = np.zeros((2, 2))
    y = np.eye(2)
    m, th, b = logit_batch(z, y)
    tape = dc.Tape()
    loss, state = group_dro(m, tape.leaf(th), b, DroState.uniform(2), ObjectiveConfig(dro_eta=1.0))
    np.testing.assert_allclose(state.weights, [0.5, 0.5])
    assert float(loss.value) == pytest.approx(math.log(2))


def test_dro_closed_form_update():
    # one badly and one well predicted instance, each alone in its group
    m, th, b = logit_batch(np.array([[-30.0, -30.0], [30.0, -30.0]]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    tape = dc.Tape()
    losses, _ = group_losses(m, tape.leaf(th), b)
    l0, l1 = losses.value
    _, state = group_dro(m, dc.Tape().leaf(th), b, DroState.uniform(2), ObjectiveConfig(dro_eta=1.0))
    u = np.array([math.exp(l0), math.exp(l1)]) / 2
    np.testing.assert_allclose(state.weights, u / u.sum(), rtol=1e-12)
    # losses (1, 0) and eta = 1 give the textbook weights
    w = np.array([math.e, 1.0]) / (math.e + 1)
    np.testing.assert_allclose(w, [0.7311, 0.2689], atol=1e-4)


def test_dro_absent_groups_degenerate(rng):
    L = 10
    state = DroState.uniform(L)
    for _ in range(200):
        y = np.zeros((4, L))
        y[np.arange(4), rng.integers(0, 3, 4)] = 1  # only labels 0..2 ever appear
        m, th, b = logit_batch(rng.standard_normal((4, L)), y)
        _, state = group_dro(m, dc.Tape().leaf(th), b, state, ObjectiveConfig(dro_eta=0.5))
    assert state.weights[3:].max() < 0.1 * state.weights[:3].min()
    assert dro_diagnostics(state)["min_max_ratio"] < 0.1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dro_stays_on_simplex(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(2, 7))
    state = DroState.uniform(L)
    for _ in range(50):
        z, y = rng.standard_normal((5, L)) * 3, random_targets(rng, 5, L, p=0.2)
        m, th, b = logit_batch(z, y)
        _, state = group_dro(m, dc.Tape().leaf(th), b, state, ObjectiveConfig(dro_eta=float(rng.uniform(0.01, 5))))
        assert abs(state.weights.sum() - 1) <= 1e-9 and np.all(state.weights >= 0)


def test_dro_state_validation():
    with pytest.raises(ValueError):
        DroState(np.array([0.7, 0.7]))
    m, th, b = logit_batch(np.zeros((1, 2)), np.ones((1, 2)))
    with pytest.raises(ValueError):
        group_dro(m, dc.Tape().leaf(th), b, DroState.uniform(3), ObjectiveConfig())


# -- penalties ------------------------------------------------------------------------

def test_vrex_examples(rng):
    z, y = rng.standard_normal((6, 3)), random_targets(rng, 6, 3)
    m, th, b = logit_batch(z, y)
    assert value(vrex, m, th, b, ObjectiveConfig(lam=0)) == value(erm, m, th, b)
    losses = np.array(list(group_oracle(z, y).values()))
    expect = bce_rows_oracle(z, y).mean() + 2.0 * np.var(losses)
    assert abs(value(vrex, m, th, b, ObjectiveConfig(lam=2.0)) - expect) < 1e-12
    tape = dc.Tape()
    assert float(dc.variance(tape.leaf(np.array([0.0, 2.0]))).value) == 1.0


def test_irm_closed_form(rng):
    z, y = rng.standard_normal((7, 4)) * 2, random_targets(rng, 7, 4)
    m, th, b = logit_batch(z, y)
    sig = 1 / (1 + np.exp(-z))
    per_instance = np.mean(z * (sig - y), axis=1)
    groups = group_oracle(z, y)
    pens = [np.mean(per_instance[y[:, g] > 0.5]) ** 2 for g in groups]
    expect = np.mean([groups[g] + p for g, p in zip(groups, pens)])
    assert abs(value(irm, m, th, b, ObjectiveConfig(lam=1.0)) - expect) < 1e-10


def test_irm_saturated_group_has_no_penalty():
    z = np.array([[40.0, -40.0], [40.0, -40.0]])
    y = np.array([[1.0, 0.0], [1.0, 0.0]])
    m, th, b = logit_batch(z, y)
    assert value(irm, m, th, b, ObjectiveConfig(lam=1.0)) < 1e-6


def test_coral_examples(rng):
    x, y = rng.standard_normal((8, 3)), random_targets(rng, 8, 4)
    model = LinearModel(3, 4)
    th = model.init_params(0).values
    b = BatchView(np.arange(8), x, y)
    assert value(coral, model, th, b, ObjectiveConfig(lam=0)) == value(erm, model, th, b)
    # identical member sets give zero penalty
    y2 = np.zeros((5, 2))
    y2[:, :] = 1
    tape = dc.Tape()
    assert float(coral_penalty(tape.const(x[:5]), BatchView(np.arange(5), x[:5], y2)).value) == 0.0


def test_coral_matches_statistics_oracle(rng):
    x = rng.standard_normal((9, 3))
    y = random_targets(rng, 9, 3, p=0.5)
    b = BatchView(np.arange(9), x, y)
    present = [g for g in range(3) if y[:, g].sum() > 0]
    stats = []
    for g in present:
        rows = x[y[:, g] > 0.5]
        cov = np.cov(rows, rowvar=False) if len(rows) > 1 else np.zeros((3, 3))
        stats.append((cov, rows.mean(axis=0)))
    expect = np.mean([np.sum((c1 - c2) ** 2) + np.sum((m1 - m2) ** 2)
                      for (c1, m1), (c2, m2) in zip(stats[:-1], stats[1:])])
    tape = dc.Tape()
    assert abs(float(coral_penalty(tape.const(x), b).value) - expect) < 1e-10


def test_sd_examples(rng):
    m, th, b = logit_batch(np.array([[1.0, -2.0]]), np.array([[1.0, 0.0]]))
    base = value(erm, m, th, b)
    assert value(spectral_decoupling, m, th, b, ObjectiveConfig(lam=1.0)) - base == pytest.approx(2.5)
    assert value(spectral_decoupling, m, th, b, ObjectiveConfig(lam=0.0)) == base
    m, th, b = logit_batch(np.zeros((2, 3)), random_targets(rng, 2, 3))
    assert value(spectral_decoupling, m, th, b, ObjectiveConfig(lam=3.0)) == value(erm, m, th, b)


def test_lwdro_v1_composition(rng):
    z, y = rng.standard_normal((6, 4)), random_targets(rng, 6, 4)
    m, th, b = logit_batch(z, y)
    expect = np.mean(list(group_oracle(z, y).values())) + 0.3 * np.mean(z ** 2)
    assert abs(value(lwdro_v1, m, th, b, ObjectiveConfig(lam=0.3)) - expect) < 1e-12


# -- reduction lattice -----------------------------------------------------------------

def lattice_gaps(rng, model=None):
    """Largest absolute gap for every lambda = 0 reduction on one random batch."""
    model = model or LinearModel(3, 4, 5)
    b = linear_batch(rng, n=6, L=4, d=3)
    th = model.init_params(int(rng.integers(1 << 30))).values * 3
    v = lambda fn, *a: value(fn, model, th, b, *a)
    zero = ObjectiveConfig(lam=0, lam1=0, lam2=0)
    lam1, lam2 = float(rng.uniform(0.1, 3)), float(rng.uniform(0.1, 3))
    e, gu = v(erm), v(group_uniform)
    return {
        "vrex=erm": abs(v(vrex, zero) - e),
        "coral=erm": abs(v(coral, zero) - e),
        "sd=erm": abs(v(spectral_decoupling, zero) - e),
        "irm=gu": abs(v(irm, zero) - gu),
        "v1=gu": abs(v(lwdro_v1, zero) - gu),
        "v2=gu": abs(v(lwdro_v2, zero) - gu),
        "v2(l2=0)=irm": abs(v(lwdro_v2, ObjectiveConfig(lam1=lam1, lam2=0)) - v(irm, ObjectiveConfig(lam=lam1))),
        "v2(l1=0)=v1": abs(v(lwdro_v2, ObjectiveConfig(lam1=0, lam2=lam2)) - v(lwdro_v1, ObjectiveConfig(lam=lam2))),
    }


def test_reduction_lattice(rng):
    for _ in range(20):
        gaps = lattice_gaps(rng)
        assert max(gaps.values()) <= 1e-12, gaps


def test_single_label_equal_groups_v1_equals_erm(rng):
    y = np.eye(2)[[0, 1, 0, 1]]
    m, th, b = logit_batch(rng.standard_normal((4, 2)), y)
    assert abs(value(lwdro_v1, m, th, b, ObjectiveConfig(lam=0)) - value(erm, m, th, b)) < 1e-12


# -- gradients ------------------------------------------------------------------------

def fd_objective(name, model, batch, cfg, state):
    if name == "group_dro":
        # the DRO step differentiates the weighted loss with weights held fixed
        _, new = group_dro(model, dc.Tape().leaf(model.init_params(0).values), batch, state, cfg)
        return lambda th: dro_weighted_loss(model, th, batch, new.weights)
    fn = OBJECTIVES[name]
    return lambda th: fn(model, th, batch, cfg, state)[0]


@pytest.mark.parametrize("name", sorted(OBJECTIVES))
def test_gradients_linear(name, linear_model, rng):
    cfg = ObjectiveConfig(lam=0.7, lam1=0.5, lam2=0.3, dro_eta=0.5)
    tol = 1e-3 if name in ("irm", "lwdro_v2") else 1e-4
    for _ in range(2):
        b = linear_batch(rng)
        th = linear_model.init_params(int(rng.integers(1 << 30)))
        f = fd_objective(name, linear_model, b, cfg, DroState.uniform(4))
        assert dc.finite_difference_check(f, th) < tol


@pytest.mark.parametrize("name", sorted(set(OBJECTIVES) - {"coral"}))
def test_gradients_lwan(name, lwan_model, rng):
    cfg = ObjectiveConfig(lam=0.7, lam1=0.5, lam2=0.3, dro_eta=0.5)
    tol = 1e-3 if name in ("irm", "lwdro_v2") else 1e-4
    b = lwan_batch(rng)
    th = lwan_model.init_params(int(rng.integers(1 << 30)))
    f = fd_objective(name, lwan_model, b, cfg, DroState.uniform(3))
    assert dc.finite_difference_check(f, th) < tol


def test_irm_large_lambda_gradient(rng):
    model = LinearModel(3, 4)
    b = linear_batch(rng)
    f = lambda th: irm(model, th, b, ObjectiveConfig(lam=10.0))
    assert dc.finite_difference_check(f, model.init_params(4)) < 1e-3


# -- permutation invariance -------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(OBJECTIVES))
def test_batch_order_invariance(name, rng):
    model = LinearModel(3, 4, 3)
    b = linear_batch(rng, n=7)
    perm = rng.permutation(7)
    pb = BatchView(b.indices[perm], b.inputs[perm], b.targets[perm])
    th = model.init_params(1).values
    cfg = ObjectiveConfig(lam=0.5, dro_eta=0.3)
    fn = OBJECTIVES[name]
    a = float(fn(model, dc.Tape().leaf(th), b, cfg, DroState.uniform(4))[0].value)
    c = float(fn(model, dc.Tape().leaf(th), pb, cfg, DroState.uniform(4))[0].value)
    assert abs(a - c) <= 1e-12
