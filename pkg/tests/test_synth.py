import math

import numpy as np
import pytest

from ggfa.canon import canonicalize, verify_identifiability_conditions
from ggfa.fit import FitConfig
from ggfa.synth import (
    MODELS,
    SamplingDistSpec,
    SynthSpec,
    gen_correlation_matrix,
    gen_mixed_dataset,
    gram_schmidt,
    iter_mixed_datasets,
    param_names,
    param_vector,
    planted_truth,
    run_reproducibility_experiment,
    run_sampling_distribution,
)


def test_gram_schmidt_orthonormal(rng):
    Q = gram_schmidt(rng.normal(size=(6, 6)))
    np.testing.assert_allclose(Q.T @ Q, np.eye(6), atol=1e-12)
    with pytest.raises(np.linalg.LinAlgError):
        gram_schmidt(np.ones((3, 2)))


def test_correlation_matrices_valid(rng):
    assert gen_correlation_matrix(1, rng).tolist() == [[1.0]]
    for _ in range(1000):
        R = gen_correlation_matrix(10, rng)
        assert np.all(np.diag(R) == 1.0)
        np.testing.assert_array_equal(R, R.T)
        assert np.linalg.eigvalsh(R)[0] > 0


def test_mixed_dataset_filters_and_marginals():
    spec = SynthSpec(n_datasets=8, seed=3)
    for _, (d, truth) in iter_mixed_datasets(spec):
        assert (d.schema.p_x, d.schema.q, d.n) == (5, 5, 1000)
        ym = d.y.mean(axis=0)
        assert np.all((ym > 0) & (ym < 1))
        R = np.corrcoef(np.hstack([d.x, d.y]), rowvar=False)
        assert np.abs(R[:5, 5:]).max() > 0.5
        assert np.abs(R[5:, 5:] - np.eye(5)).max() > 0.5
        u = truth.quantiles
        se = np.sqrt(u * (1 - u) / d.n)
        assert np.all(np.abs(ym - (1 - u)) <= 4 * se)


def test_median_split():
    spec = SynthSpec(n=4000, min_xy_corr=0.0, min_yy_corr=0.0)
    d, truth = gen_mixed_dataset(spec, 1, quantiles=0.5)
    np.testing.assert_allclose(truth.thresholds, 0.0, atol=1e-15)
    assert np.all(np.abs(d.y.mean(axis=0) - 0.5) <= 3 / (2 * math.sqrt(d.n)))


def test_generation_deterministic():
    spec = SynthSpec(n_datasets=2, seed=9)
    a = [d for _, (d, _) in iter_mixed_datasets(spec)]
    b = [d for _, (d, _) in iter_mixed_datasets(spec)]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.x, y.x)
        np.testing.assert_array_equal(x.y, y.y)


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(p_cont=0, p_bin=0)
    with pytest.raises(ValueError):
        SynthSpec(min_xy_corr=1.0)
    with pytest.raises(ValueError):
        SynthSpec(gamma_rate=0.0)
    assert SamplingDistSpec(planted_truth(2, 2, 1, 1.0)).sizes == (1000, 3000, 9000)
    with pytest.raises(ValueError):
        SamplingDistSpec(planted_truth(2, 2, 1, 1.0), sizes=(3000, 1000))


def test_planted_truth_is_canonical():
    t = planted_truth(4, 3, 2, 1.5, seed=2)
    assert verify_identifiability_conditions(t).all_ok
    np.testing.assert_allclose(canonicalize(t).params.M, t.M, atol=1e-12)


def test_reproducibility_table_shape():
    spec = SynthSpec(n=400, n_datasets=2, seed=1)
    rep = run_reproducibility_experiment(spec, (1, 2), FitConfig(n_restarts=1, max_iters=200), full_dims=4)
    accepted = len({r["dataset"] for r in rep.summary} | {f["dataset"] for f in rep.failures if f["model"]})
    assert len(rep.summary) + len([f for f in rep.failures if f["model"] in MODELS]) == accepted * 2 * len(MODELS)
    pair_types = {r["pair_type"] for r in rep.pairs}
    assert pair_types <= {"cont-cont", "cont-bin", "bin-bin"}
    for r in rep.summary:
        assert r["r2"] <= 1.0


def test_proposed_r2_nondecreasing_on_average(repro_report):
    means = [repro_report.mean_r2("proposed", p_z) for p_z in (1, 2, 3)]
    assert means[0] <= means[1] <= means[2]


def test_sampling_distribution_deterministic():
    truth = planted_truth(2, 2, 1, 1.2, seed=4)
    spec = SamplingDistSpec(truth, sizes=(200, 400), replicates=2, seed=5, config=FitConfig(n_restarts=1))
    a = run_sampling_distribution(spec)
    b = run_sampling_distribution(spec)
    for n in spec.sizes:
        np.testing.assert_array_equal(a.estimates[n], b.estimates[n])
    assert a.names == param_names(2, 2, 1)
    np.testing.assert_array_equal(a.truth, param_vector(canonicalize(truth).params))


def test_sampling_rmse_shrinks(sampling_result):
    res = sampling_result
    rmse = [np.sqrt(np.nanmean((res.estimates[n] - res.truth) ** 2, axis=0)) for n in res.sizes]
    assert np.all(rmse[-1] < rmse[0])
