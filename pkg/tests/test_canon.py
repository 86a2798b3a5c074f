import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import ortho_group

from ggfa.canon import (
    canonical_rotation,
    canonicalize,
    communalities,
    communalities_from_norms,
    contribution_ratios,
    pca_limit_scores,
    rotate,
    verify_identifiability_conditions,
)
from ggfa.core import ModelParams, posterior, sample
from ggfa.fit import log_likelihood


def well_separated(rng, p_x=3, q=3, p_z=2, c=1.3):
    """Random canonical model whose eigengaps and column sums clear 1e-6."""
    while True:
        cm = canonicalize(ModelParams.random(p_x, q, p_z, rng, c=c))
        w = cm.omega_sq
        sums = cm.params.M.sum(axis=0)
        if np.all(-np.diff(w) > 1e-3 * w[0]) and np.all(np.abs(sums) > 1e-3) and w[-1] > 1e-3:
            return cm


def check_canonical(cm):
    M = cm.params.M
    gram = M.T @ M
    off = gram - np.diag(np.diag(gram))
    assert np.max(np.abs(off), initial=0.0) <= 1e-8 * max(1.0, gram.max())
    assert np.all(np.diff(cm.omega_sq) <= 0)
    np.testing.assert_allclose(np.diag(gram), cm.omega_sq, rtol=1e-9, atol=1e-12)
    assert np.all(M.sum(axis=0) >= -1e-9)
    assert abs(cm.P.sum() - 1.0) <= 1e-12
    assert np.all(np.diff(cm.C) >= 0) and abs(cm.C[-1] - 1.0) <= 1e-12
    R = cm.rotation
    assert np.max(np.abs(R.T @ R - np.eye(R.shape[0]))) <= 1e-10


def test_canonical_invariants_random(rng):
    for _ in range(50):
        p_x, q = int(rng.integers(0, 4)), int(rng.integers(1, 4))
        p = ModelParams.random(p_x, q, int(rng.integers(1, p_x + q + 1)), rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            check_canonical(canonicalize(p))


def test_observables_and_likelihood_preserved(rng):
    for _ in range(10):
        p = ModelParams.random(3, 3, 3, rng)
        cm = canonicalize(p)
        for a, b in ((p.M @ p.M.T, cm.params.M @ cm.params.M.T), (p.sigma_x, cm.params.sigma_x),
                     (p.WGt, cm.params.WGt), (p.G @ p.G.T, cm.params.G @ cm.params.G.T)):
            np.testing.assert_allclose(a, b, atol=1e-10)
        d = sample(p, 100, 1)
        a, b = log_likelihood(d, p), log_likelihood(d, cm.params)
        assert abs(a - b) <= 1e-10 * abs(a)


def test_idempotent_and_already_canonical(rng):
    cm = well_separated(rng)
    again = canonicalize(cm.params)
    np.testing.assert_allclose(again.rotation, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(again.params.W_hat, cm.params.W_hat, atol=1e-12)
    np.testing.assert_allclose(again.params.G_hat, cm.params.G_hat, atol=1e-12)


def test_single_column_sign_rule():
    p = ModelParams([0.0, 0.0], [1.0, 1.0], [0.0], 0.8, [[-1.0], [-1.0]], [[1.0]])
    cm = canonicalize(p)
    np.testing.assert_array_equal(cm.rotation, [[-1.0]])
    np.testing.assert_allclose(cm.params.W_hat, -p.W_hat)
    np.testing.assert_allclose(cm.params.G_hat, -p.G_hat)


def test_rotation_round_trip_100_trials(rng):
    worst = 0.0
    for _ in range(100):
        cm = well_separated(rng, p_z=int(rng.integers(2, 4)), p_x=3, q=3)
        R = ortho_group.rvs(cm.params.p_z, random_state=rng)
        back = canonicalize(rotate(cm.params, R))
        worst = max(worst, np.max(np.abs(back.params.M - cm.params.M)))
    assert worst <= 1e-8


def test_degenerate_and_zero_sum_flagged():
    # two orthogonal columns with identical energy: degenerate eigenvalues
    s = 1 / math.sqrt(2)
    W = [[1, 0], [0, 1]]
    G = [[s, s], [s, -s]]
    p = ModelParams([0, 0], [1, 1], [0, 0], 1.0, W, G)
    with pytest.warns(RuntimeWarning):
        cm = canonicalize(p)
    assert not cm.unique
    # one column summing to exactly zero
    p = ModelParams([0.0], [1.0], [0.0], 1.0, [[1.0]], [[-1.0]])
    with pytest.warns(RuntimeWarning):
        cm = canonicalize(p)
    assert not cm.unique
    assert cm.params.M[np.argmax(np.abs(cm.params.M[:, 0])), 0] > 0


def test_contribution_ratios_examples(rng):
    P, C = contribution_ratios([3.0, 1.0])
    np.testing.assert_allclose(P, [0.75, 0.25])
    np.testing.assert_allclose(C, [0.75, 1.0])
    P, _ = contribution_ratios([2.0] * 4)
    np.testing.assert_allclose(P, 0.25)
    P, _ = contribution_ratios(rng.exponential(size=7))
    assert abs(P.sum() - 1) <= 1e-12
    with pytest.raises(ValueError):
        contribution_ratios([0.0, 0.0])


def test_communalities_examples(rng):
    assert abs(communalities_from_norms([1.0])[0] - math.sqrt(0.5)) < 1e-15
    assert communalities_from_norms([0.0])[0] == 0.0
    assert abs(communalities_from_norms([1e4])[0] - 1.0) <= 1e-8
    p = ModelParams.random(4, 2, 2, rng, c=0.7)
    np.testing.assert_allclose(communalities(p), math.sqrt(0.49 / 1.49), rtol=1e-12)


def test_pca_limit_exact_case(rng):
    c = 2.0
    p = ModelParams([0, 0], np.full(2, 1 / (1 + c**2)), [], c, np.eye(2), np.zeros((0, 2)))
    np.testing.assert_allclose(np.diag(p.sigma_x), 1.0)
    x = rng.normal(size=2)
    np.testing.assert_allclose(pca_limit_scores(p, x), p.mu_z + np.eye(2).T @ x, atol=1e-14)


def test_pca_limit_convergence(rng):
    for _ in range(20):
        p = ModelParams.random(4, 0, 2, rng, c=1e3)
        x = p.mu_x + rng.normal(size=4) * np.sqrt(np.diag(p.sigma_x))
        post = posterior(p, x, [])
        lim = pca_limit_scores(p, x)
        assert np.max(np.abs(post.m - lim)) <= 1e-3 * np.max(np.abs(lim))
        assert np.max(np.abs(post.cov)) <= 1e-5
    with pytest.raises(ValueError):
        pca_limit_scores(ModelParams.random(2, 1, 1, rng), [0.0, 0.0])


def test_identifiability_report(rng):
    cm = well_separated(rng)
    rep = verify_identifiability_conditions(cm.params)
    assert rep.all_ok
    assert abs(rep.smallest_eigenvalue + cm.params.c**2) <= 1e-8
    flipped = rotate(cm.params, np.diag([-1.0, 1.0]))
    assert not verify_identifiability_conditions(flipped).sign_rule
    full = canonicalize(ModelParams.random(2, 1, 3, rng)).params
    rep = verify_identifiability_conditions(full)
    assert rep.smallest_eigenvalue is None and rep.smallest_eigenvalue_ok is None


def test_canonical_rotation_direct(rng):
    M = rng.normal(size=(6, 3))
    R, evals, _ = canonical_rotation(M)
    D = (M @ R).T @ (M @ R)
    np.testing.assert_allclose(D, np.diag(evals), atol=1e-10)


@given(seed=st.integers(0, 2**31 - 1), p_z=st.integers(1, 3))
def test_property_gauge_invariance(seed, p_z):
    rng = np.random.default_rng(seed)
    cm = well_separated(rng, p_x=2, q=3, p_z=p_z)
    R = ortho_group.rvs(p_z, random_state=rng) if p_z > 1 else np.array([[-1.0]])
    back = canonicalize(rotate(cm.params, R))
    np.testing.assert_allclose(back.params.M, cm.params.M, atol=1e-7)
    check_canonical(back)
