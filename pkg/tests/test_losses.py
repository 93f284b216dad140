import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contda.losses import (
    HyperParams,
    adaptation_objective,
    entropy_loss,
    eqdiv_loss,
    label_smoothing_ce,
    label_smoothing_ce_and_grad,
    mixup_ce_loss,
    total_objective,
    uniform_prior,
)
from contda.netcore import softmax

# hand evaluations of the closed forms
LS_EXAMPLE = 0.34261268688518637      # -0.95 ln 0.75 - 0.05 ln 0.25
KL_EXAMPLE = 0.14384103622589042      # 0.5 ln 2 + 0.5 ln(2/3)
MIXUP_EXAMPLE = 0.9830564281864164    # -0.5 ln 0.7 - 0.5 ln 0.2

dists = st.integers(2, 6).flatmap(
    lambda c: st.lists(st.lists(st.floats(0.0, 1.0), min_size=c, max_size=c)
                       .filter(lambda r: sum(r) > 1e-3), min_size=1, max_size=8))


def _normalize(rows):
    a = np.asarray(rows, dtype=np.float64)
    return a / a.sum(axis=1, keepdims=True)


def test_hyperparam_defaults():
    hp = HyperParams()
    assert (hp.gamma1, hp.gamma2, hp.rho) == (1.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        HyperParams(rho=0.0)
    with pytest.raises(ValueError):
        HyperParams(gamma1=-1.0)


def test_uniform_prior():
    q = uniform_prior(7)
    assert np.all(q == q[0]) and abs(q.sum() - 1.0) < 1e-15


def test_label_smoothing_examples():
    assert label_smoothing_ce(np.zeros((3, 4)), [0, 1, 3], 0.0) == pytest.approx(math.log(4), abs=1e-15)
    onehot = np.array([[800.0, 0.0, 0.0]])
    assert label_smoothing_ce(onehot, [0], 0.0) == pytest.approx(0.0, abs=1e-15)
    got = label_smoothing_ce(np.array([[math.log(3.0), 0.0]]), [0], 0.1)
    assert got == pytest.approx(LS_EXAMPLE, abs=1e-14)
    with pytest.raises(IndexError):
        label_smoothing_ce(np.zeros((2, 3)), [0, 3], 0.1)


def test_label_smoothing_gradient_finite_difference(rng):
    z = rng.normal(size=(5, 4))
    y = rng.integers(0, 4, size=5)
    _, g = label_smoothing_ce_and_grad(z, y, 0.1)
    h = 1e-6
    for i in range(5):
        for k in range(4):
            zp, zm = z.copy(), z.copy()
            zp[i, k] += h
            zm[i, k] -= h
            num = (label_smoothing_ce(zp, y, 0.1) - label_smoothing_ce(zm, y, 0.1)) / (2 * h)
            assert abs(num - g[i, k]) < 1e-8


def test_entropy_examples():
    assert entropy_loss(np.eye(3)) == 0.0
    assert entropy_loss(np.full((2, 4), 0.25)) == pytest.approx(math.log(4), abs=1e-15)
    assert entropy_loss(np.array([[0.5, 0.5]])) == pytest.approx(math.log(2), abs=1e-15)


def test_eqdiv_examples():
    assert eqdiv_loss(np.full(5, 0.2)) == pytest.approx(0.0, abs=1e-15)
    assert eqdiv_loss(np.array([0.25, 0.75])) == pytest.approx(KL_EXAMPLE, abs=1e-15)
    assert eqdiv_loss(np.array([0.75, 0.25])) == pytest.approx(KL_EXAMPLE, abs=1e-15)
    # a zero component is floored, not infinite
    assert np.isfinite(eqdiv_loss(np.array([1.0, 0.0])))


def test_mixup_examples():
    p = np.array([[0.7, 0.2, 0.1]])
    assert mixup_ce_loss(p, [0], [1], [0.5]) == pytest.approx(MIXUP_EXAMPLE, abs=1e-14)
    u = np.full((3, 4), 0.25)
    assert mixup_ce_loss(u, [0, 1, 2], [3, 3, 0], [0.1, 0.5, 0.9]) == pytest.approx(math.log(4), abs=1e-14)
    q = _normalize(np.random.default_rng(0).uniform(size=(4, 3)))
    ya = [0, 2, 1, 1]
    plain = -np.mean(np.log(q[np.arange(4), ya]))
    assert mixup_ce_loss(q, ya, [1, 1, 1, 1], np.ones(4)) == pytest.approx(plain, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(dists)
def test_entropy_and_eqdiv_bounds(rows):
    p = _normalize(rows)
    C = p.shape[1]
    h = entropy_loss(p)
    assert -1e-12 <= h <= math.log(C) + 1e-12
    d = eqdiv_loss(p.mean(axis=0))
    assert d >= -1e-12
    if np.allclose(p.mean(axis=0), 1.0 / C, atol=1e-9, rtol=0):
        assert abs(d) < 1e-10


@settings(max_examples=100, deadline=None)
@given(dists, st.randoms(use_true_random=False))
def test_mixup_symmetry(rows, rnd):
    p = _normalize(rows)
    n, C = p.shape
    ya = [rnd.randrange(C) for _ in range(n)]
    yb = [rnd.randrange(C) for _ in range(n)]
    lam = np.array([rnd.random() for _ in range(n)])
    assert mixup_ce_loss(p, ya, yb, lam) == pytest.approx(mixup_ce_loss(p, yb, ya, 1.0 - lam), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.permutations([0.1, 0.2, 0.3, 0.4]))
def test_eqdiv_permutation_symmetry(perm):
    assert eqdiv_loss(np.array(perm)) == pytest.approx(eqdiv_loss(np.array([0.1, 0.2, 0.3, 0.4])), abs=1e-15)


def _batch(seed, n=10, C=4):
    r = np.random.default_rng(seed)
    z = r.normal(size=(n, C)) * 2
    return z, r.integers(0, C, n), r.integers(0, C, n), r.uniform(size=n)


def test_total_objective_degenerate_weights():
    z, ya, yb, lam = _batch(1)
    p = softmax(z)
    assert total_objective(p, ya, yb, lam, HyperParams(gamma1=0.0, gamma2=0.0)) == entropy_loss(p)


def test_total_objective_global_optimum_shape():
    p = np.eye(4)
    ya = np.arange(4)
    assert total_objective(p, ya, ya, np.ones(4), HyperParams()) == pytest.approx(0.0, abs=1e-15)


def test_total_objective_component_sum():
    z, ya, yb, lam = _batch(2)
    p = softmax(z)
    # components recomputed from the formulas directly
    ent = -np.mean(np.sum(p * np.log(p), axis=1))
    qhat = p.mean(axis=0)
    div = np.sum(0.25 * np.log(0.25 / qhat))
    mix = np.mean(-lam * np.log(p[np.arange(10), ya]) - (1 - lam) * np.log(p[np.arange(10), yb]))
    assert total_objective(p, ya, yb, lam, HyperParams()) == pytest.approx(ent + div + 0.5 * mix, abs=1e-13)


@pytest.mark.parametrize("g1,g2", [(0, 0), (1, 0), (0, 1), (1, 0.5)])
def test_total_objective_is_linear_in_weights(g1, g2):
    z, ya, yb, lam = _batch(3)
    p = softmax(z)
    ent = total_objective(p, ya, yb, lam, HyperParams(gamma1=0, gamma2=0))
    div = total_objective(p, ya, yb, lam, HyperParams(gamma1=1, gamma2=0)) - ent
    mix = total_objective(p, ya, yb, lam, HyperParams(gamma1=0, gamma2=1)) - ent
    got = total_objective(p, ya, yb, lam, HyperParams(gamma1=g1, gamma2=g2))
    assert got == pytest.approx(ent + g1 * div + g2 * mix, abs=1e-13)


@pytest.mark.parametrize("seed", range(5))
def test_logit_objective_agrees_with_probability_objective(seed):
    z, ya, yb, lam = _batch(seed)
    hp = HyperParams()
    parts, _ = adaptation_objective(z, ya, yb, lam, hp)
    p = softmax(z)
    assert parts.total == pytest.approx(total_objective(p, ya, yb, lam, hp), abs=1e-12)
    assert parts.ent == pytest.approx(entropy_loss(p), abs=1e-12)
    assert parts.eqdiv == pytest.approx(eqdiv_loss(p.mean(axis=0)), abs=1e-12)
    assert parts.mixup == pytest.approx(mixup_ce_loss(p, ya, yb, lam), abs=1e-12)


@pytest.mark.parametrize("hp", [HyperParams(), HyperParams(gamma1=0.0, gamma2=0.0),
                                HyperParams(gamma1=2.0, gamma2=0.0), HyperParams(gamma1=0.0, gamma2=1.0)])
def test_objective_logit_gradient_finite_difference(hp):
    z, ya, yb, lam = _batch(7, n=6, C=3)
    _, g = adaptation_objective(z, ya, yb, lam, hp)
    h = 1e-6
    for i in range(6):
        for k in range(3):
            zp, zm = z.copy(), z.copy()
            zp[i, k] += h
            zm[i, k] -= h
            num = (adaptation_objective(zp, ya, yb, lam, hp)[0].total
                   - adaptation_objective(zm, ya, yb, lam, hp)[0].total) / (2 * h)
            assert abs(num - g[i, k]) < 1e-8
