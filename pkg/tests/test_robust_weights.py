import math

import numpy as np
import pytest

from robust_huber.dataset import ContaminationSpec, Dataset, GeneratorSpec, make_instance, n_outliers
from robust_huber.robust_weights import (
    RobustWeightConfig,
    RobustWeightResult,
    certificate,
    filter_update,
    robust_scale_sq,
    robust_weights,
)
from robust_huber.simplex import WeightVector, is_member, project, uniform
from robust_huber.spectral import top_eigenpair, weighted_second_moment


def gaussian_ds(n, d, seed, mu=None):
    return make_instance(GeneratorSpec(mu=mu), None, n, d, np.zeros(d), seed).dataset


def check_structure(res: RobustWeightResult, ds: Dataset, eps: float):
    assert is_member(res.w.w, eps)
    assert res.w.n_small() <= 2 * n_outliers(eps, ds.n)
    np.testing.assert_allclose(res.mu_w, res.w.w @ ds.X, atol=1e-10)


def test_config_validation():
    with pytest.raises(ValueError):
        RobustWeightConfig(eps=1 / 3)
    with pytest.raises(ValueError):
        RobustWeightConfig(eps=-0.1)
    with pytest.raises(ValueError):
        RobustWeightConfig(mode="diagonal")
    with pytest.raises(ValueError):
        RobustWeightConfig(c_term=0.0)
    with pytest.raises(ValueError):
        RobustWeightConfig(max_outer=0)
    cfg = RobustWeightConfig(eps=0.1)
    assert cfg.c == 2.0
    assert cfg.outer_budget(1) == 12
    assert cfg.outer_budget(10) == 4 * 4 + 8
    assert RobustWeightConfig(mode="bounded_cov").c == 9.0


def test_thresholds():
    ds = gaussian_ds(400, 4, 0)
    cfg = RobustWeightConfig(eps=0.1)
    assert cfg.threshold(ds) == pytest.approx(1 + 2 * (0.1 * math.log(10) + math.sqrt(4 / 400)))
    cfg = RobustWeightConfig(eps=0.1, mode="bounded_cov", sigma_c_sq=2.0)
    assert cfg.threshold(ds) == pytest.approx(18.0)
    cfg = RobustWeightConfig(eps=0.1, mode="bounded_cov")
    assert cfg.threshold(ds) == pytest.approx(9 * robust_scale_sq(ds.X))


def test_robust_scale_of_gaussian():
    X = np.random.default_rng(0).normal(size=(20_000, 3)) * 2.0
    assert robust_scale_sq(X) == pytest.approx(4.0, rel=0.05)


def test_clean_data_keeps_uniform_weights():
    ds = gaussian_ds(2000, 5, 1, mu=np.arange(5.0))
    res = robust_weights(ds, RobustWeightConfig(eps=0.0))
    assert res.terminated_by == "certificate"
    assert res.outer_iters == 1
    np.testing.assert_allclose(res.mu_w, ds.X.mean(axis=0), atol=1e-8)
    check_structure(res, ds, 0.0)


def test_hand_example_single_outlier():
    ds = Dataset(y=np.zeros(5), X=np.array([[0.0], [0.0], [0.0], [0.0], [100.0]]))
    res = robust_weights(ds, RobustWeightConfig(eps=0.2, c_term=2.0))
    assert res.w.w[4] < 1 / (2 * 5)
    assert abs(res.mu_w[0]) <= 1.0
    assert res.terminated_by == "certificate"
    check_structure(res, ds, 0.2)


def test_empty_or_bad_input():
    ds = gaussian_ds(50, 2, 0)
    with pytest.raises(ValueError):
        robust_weights(ds, RobustWeightConfig(eps=0.4))


@pytest.mark.parametrize("attack", ["point_cluster", "leverage", "mean_shift"])
@pytest.mark.parametrize("mode", ["identity_cov", "bounded_cov"])
def test_structure_under_attacks(attack, mode):
    eps = 0.15
    inst = make_instance(
        GeneratorSpec(), ContaminationSpec(eps=eps, attack=attack, seed=2, magnitude=3.0), 600, 4, np.ones(4) / 2, 7
    )
    cfg = RobustWeightConfig(eps=eps, mode=mode, sigma_c_sq=1.0 if mode == "bounded_cov" else None)
    res = robust_weights(inst.dataset, cfg)
    check_structure(res, inst.dataset, eps)
    hist = np.minimum.accumulate(res.lambda_history)
    assert np.all(np.diff(hist) <= 0)
    if res.terminated_by == "certificate":
        assert certificate(inst.dataset, res, cfg)["lambda_max"] <= res.threshold + 1e-8


def test_cluster_attack_removed():
    eps = 0.1
    inst = make_instance(GeneratorSpec(), ContaminationSpec(eps=eps, attack="point_cluster", seed=0), 1000, 5,
                         np.zeros(5), 3)
    res = robust_weights(inst.dataset, RobustWeightConfig(eps=eps))
    assert res.terminated_by == "certificate"
    assert np.all(res.w.w[inst.outlier_idx] < 1e-12)
    assert np.linalg.norm(res.mu_w) < 0.3


def test_budget_flag_and_best_state():
    inst = make_instance(GeneratorSpec(), ContaminationSpec(eps=0.1, attack="point_cluster", seed=0), 500, 3,
                         np.zeros(3), 3)
    cfg = RobustWeightConfig(eps=0.1, max_outer=1, filter_rounds_per_outer=1, c_term=1e-6)
    res = robust_weights(inst.dataset, cfg)
    assert res.terminated_by == "budget"
    assert res.lambda_max == pytest.approx(min(res.lambda_history))
    check_structure(res, inst.dataset, 0.1)


def test_small_weight_bound_holds_on_random_members():
    # any member of the capped simplex obeys the bound, so projections of wild vectors do too
    rng = np.random.default_rng(0)
    for _ in range(2000):
        n = int(rng.integers(2, 40))
        eps = float(rng.choice([0.0, 0.05, 0.1, 0.2, 0.3]))
        w = project(rng.standard_cauchy(n), eps)
        assert w.n_small() <= 2 * n_outliers(eps, n)


def test_result_rejects_unknown_termination():
    w = uniform(5, 0.2)
    with pytest.raises(ValueError):
        RobustWeightResult(w=w, mu_w=np.zeros(1), nu_final=np.zeros(1), lambda_max=1.0, dual_cert=0.0,
                           outer_iters=1, terminated_by="timeout")


def test_result_json_fields():
    ds = gaussian_ds(100, 2, 0)
    doc = robust_weights(ds, RobustWeightConfig(eps=0.05)).to_dict()
    assert set(doc) == {"w", "mu_w", "lambda_max", "dual_cert", "outer_iters", "terminated_by"}


def test_filter_uniform_scores_keep_weights():
    X = np.array([[1.0], [-1.0], [1.0], [-1.0], [1.0], [-1.0]])
    ds = Dataset(y=np.zeros(6), X=X)
    w = uniform(6, 0.2)
    out = filter_update(ds, w, np.zeros(1), np.ones(1), 0.2)
    np.testing.assert_allclose(out.w, w.w, atol=1e-10)


def test_filter_zero_scores_return_same():
    ds = Dataset(y=np.zeros(4), X=np.zeros((4, 2)))
    w = uniform(4, 0.1)
    assert filter_update(ds, w, np.zeros(2), np.array([1.0, 0.0]), 0.1) is w


def test_filter_single_peak_zeroed():
    X = np.zeros((6, 1))
    X[3] = 5.0
    ds = Dataset(y=np.zeros(6), X=X)
    out = filter_update(ds, uniform(6, 0.2), np.zeros(1), np.ones(1), 0.2)
    assert out.w[3] == 0.0
    np.testing.assert_allclose(out.w[[0, 1, 2, 4, 5]], 0.2)


@pytest.mark.parametrize("seed", range(20))
def test_filter_decreases_top_direction_variance(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(6, 2)) * rng.uniform(0.5, 3.0)
    ds = Dataset(y=np.zeros(6), X=X)
    eps = 0.3
    w = WeightVector(project(rng.uniform(size=6), eps).w, eps)
    nu = X.mean(axis=0) + rng.normal(size=2) * 0.1
    M = weighted_second_moment(ds, w, nu).M
    v = top_eigenpair(M, tol=1e-12).vector
    out = filter_update(ds, w, nu, v, eps)
    assert is_member(out.w, eps)
    before = v @ M @ v
    after = v @ weighted_second_moment(ds, out, nu).M @ v
    s = ((X - nu) @ v) ** 2
    assert after <= before + 1e-9
    if np.var(s[w.w > 0]) > 1e-12:
        assert after < before


@pytest.mark.parametrize("seed", range(20))
def test_certificate_clean_gaussian(seed):
    ds = gaussian_ds(5000, 10, 100 + seed, mu=np.full(10, 3.0))
    cfg = RobustWeightConfig(eps=0.05, c_term=2.0)
    res = robust_weights(ds, cfg)
    rep = certificate(ds, res, cfg)
    assert rep["pass"]
    assert rep["lambda_max"] <= 1.5
    assert rep["dual_cert"] <= rep["lambda_max"] + 1e-9


def test_certificate_fails_on_inflated_coordinate():
    ds = gaussian_ds(500, 3, 0)
    X = ds.X.copy()
    X[:, 1] *= 1e6
    ds = Dataset(y=ds.y, X=X)
    w = uniform(500, 0.1)
    res = RobustWeightResult(w=w, mu_w=w.w @ X, nu_final=X.mean(axis=0), lambda_max=0.0, dual_cert=0.0,
                             outer_iters=0, terminated_by="budget")
    assert not certificate(ds, res, RobustWeightConfig(eps=0.1))["pass"]


def test_deterministic():
    inst = make_instance(GeneratorSpec(), ContaminationSpec(eps=0.1, attack="leverage", seed=1), 400, 3,
                         np.ones(3), 1)
    a = robust_weights(inst.dataset, RobustWeightConfig(eps=0.1, seed=4))
    b = robust_weights(inst.dataset, RobustWeightConfig(eps=0.1, seed=4))
    np.testing.assert_array_equal(a.w.w, b.w.w)
