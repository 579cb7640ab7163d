"""Tests for likelihoods, Frechet metrics, two-sample tests and residuals."""

import numpy as np
import pytest

from spdm import (
    AnalyticScoreField,
    FeatureSpec,
    FeatureStats,
    GaussianMixture,
    InvalidParams,
    NonPsd,
    ShapeMismatch,
    dataset_stats,
    delta_x0_gap,
    divergence,
    energy_distance_test,
    feature_map,
    fokker_planck_residual,
    frechet_distance,
    group_averaged_stats,
    inv_fid,
    log_density,
    make_c4_group,
    make_flip_group,
    make_point_group_2d,
    nll_grid,
    pf_ode_nll,
    symmetrize,
    vp_schedule,
)


def test_divergence_of_linear_field():
    a = np.array([[1.0, 2.0], [0.5, -3.0]])
    field = lambda x, t: x @ a.T
    x = np.array([0.3, -0.7])
    np.testing.assert_allclose(divergence(field, x, 0.0), np.trace(a), atol=1e-8)
    est = divergence(field, x, 0.0, mode="hutchinson", probes=256, seed=1)
    assert abs(est - np.trace(a)) < 0.5
    with pytest.raises(InvalidParams):
        divergence(field, x, 0.0, mode="bogus")


def test_nll_stationary_gaussian():
    # Unit Gaussian data under the variance-preserving flow: the PF-ODE
    # drift vanishes identically and the likelihood is the prior itself.
    s = vp_schedule()
    m = GaussianMixture(np.array([1.0]), np.array([[0.0, 0.0]]), np.array([1.0]))
    field = AnalyticScoreField(m, s)
    x0 = np.random.default_rng(0).standard_normal((20, 2))
    rep = pf_ode_nll(field, s, x0, nll_grid(s, 200))
    want = log_density(m, s, x0, 0.0)
    assert float(np.max(np.abs(rep.log_likelihood - want))) / 2 < 1e-2
    assert rep.steps == 200 and rep.div_mode == "exact_fd"


def test_nll_shifted_gaussian():
    # Non-stationary case: the flow now moves mass and the divergence
    # integral must reproduce the exact density.  The centered-prior
    # approximation contributes a bias of order alpha_T |mean|, which the
    # 1e-2 nats/dim tolerance absorbs.
    s = vp_schedule()
    m = GaussianMixture(np.array([1.0]), np.array([[0.8, -0.4]]), np.array([0.4]))
    field = AnalyticScoreField(m, s)
    x0 = m.sample(np.random.default_rng(1), 10)
    rep = pf_ode_nll(field, s, x0, nll_grid(s, 600))
    want = log_density(m, s, x0, 0.0)
    assert float(np.max(np.abs(rep.log_likelihood - want))) / 2 < 1e-2


def test_nll_hutchinson_close_to_exact():
    s = vp_schedule()
    m = GaussianMixture(np.array([1.0]), np.array([[0.5, 0.5]]), np.array([0.5]))
    field = AnalyticScoreField(m, s)
    x0 = np.array([[0.2, -0.1]])
    grid = nll_grid(s, 100)
    exact = pf_ode_nll(field, s, x0, grid)
    hutch = pf_ode_nll(field, s, x0, grid, div_mode="hutchinson", probes=128, seed=2)
    assert abs(float(exact.bits_per_dim[0]) - float(hutch.bits_per_dim[0])) < 0.05


def test_nll_dequant_offset_and_validation():
    s = vp_schedule()
    m = GaussianMixture(np.array([1.0]), np.array([[0.0, 0.0]]), np.array([1.0]))
    field = AnalyticScoreField(m, s)
    x0 = np.array([0.1, 0.2])
    grid = nll_grid(s, 20)
    base = pf_ode_nll(field, s, x0, grid)
    shifted = pf_ode_nll(field, s, x0, grid, dequant_offset=7.0)
    np.testing.assert_allclose(shifted.bits_per_dim, base.bits_per_dim + 7.0)
    with pytest.raises(InvalidParams):
        pf_ode_nll(field, s, x0, grid.reversed())


def test_nll_invariant_under_rotations():
    s = vp_schedule()
    base = GaussianMixture(np.array([1.0]), np.array([[1.0, 0.3]]), np.array([0.2]))
    g = make_point_group_2d(4)
    field = AnalyticScoreField(symmetrize(base, g), s)
    x0 = np.random.default_rng(3).standard_normal((5, 2))
    grid = nll_grid(s, 100)
    ref = pf_ode_nll(field, s, x0, grid).log_likelihood
    for k in g.elements:
        got = pf_ode_nll(field, s, k.apply(x0), grid).log_likelihood
        assert float(np.max(np.abs(got - ref))) < 1e-6


def test_feature_map_deterministic_and_bounded():
    spec = FeatureSpec(dim_in=4, dim_out=16)
    x = np.random.default_rng(4).standard_normal((10, 4))
    f = feature_map(x, spec)
    assert f.shape == (10, 16)
    np.testing.assert_array_equal(f, feature_map(x, spec))
    assert np.all(np.abs(f) < 1.0)
    with pytest.raises(ShapeMismatch):
        feature_map(np.zeros((3, 5)), spec)


def test_feature_stats_match_numpy():
    f = np.random.default_rng(5).standard_normal((50, 6))
    st = FeatureStats.from_features(f)
    np.testing.assert_allclose(st.mean, f.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(st.cov, np.cov(f, rowvar=False, ddof=0), atol=1e-12)
    assert st.count == 50
    np.testing.assert_allclose(st.cov, st.cov.T, atol=0)


def test_group_averaged_stats_equal_augmented_dataset():
    rng = np.random.default_rng(6)
    data = rng.standard_normal((40, 4, 4))
    g = make_flip_group("vertical", (4, 4))
    spec = FeatureSpec(dim_in=16, dim_out=12)
    avg = group_averaged_stats(data, g, spec)
    augmented = np.concatenate([k.apply(data) for k in g.elements])
    direct = dataset_stats(augmented, spec)
    np.testing.assert_allclose(avg.mean, direct.mean, atol=1e-12)
    np.testing.assert_allclose(avg.cov, direct.cov, atol=1e-12)
    assert avg.count == direct.count
    with pytest.raises(InvalidParams):
        group_averaged_stats(np.zeros((0, 4, 4)), g, spec)


def test_frechet_closed_forms():
    d = 5
    rng = np.random.default_rng(7)
    w = rng.standard_normal((d, d))
    cov = w @ w.T / d
    mu = rng.standard_normal(d)
    same = FeatureStats(mean=mu, cov=cov, count=1)
    assert frechet_distance(same, same) <= 1e-8
    shifted = FeatureStats(mean=mu + 2.0, cov=cov.copy(), count=1)
    np.testing.assert_allclose(frechet_distance(same, shifted), 4.0 * d, rtol=1e-8)
    iso_a = FeatureStats(mean=np.zeros(d), cov=4.0 * np.eye(d), count=1)
    iso_b = FeatureStats(mean=np.zeros(d), cov=9.0 * np.eye(d), count=1)
    np.testing.assert_allclose(frechet_distance(iso_a, iso_b), d * 1.0, rtol=1e-10)
    one_a = FeatureStats(mean=np.array([1.0]), cov=np.array([[4.0]]), count=1)
    one_b = FeatureStats(mean=np.array([3.0]), cov=np.array([[9.0]]), count=1)
    np.testing.assert_allclose(frechet_distance(one_a, one_b), 4.0 + 1.0, rtol=1e-10)


def test_frechet_error_cases():
    bad = FeatureStats(mean=np.zeros(2), cov=np.diag([1.0, -1.0]), count=1)
    ok = FeatureStats(mean=np.zeros(2), cov=np.eye(2), count=1)
    with pytest.raises(NonPsd):
        frechet_distance(bad, ok)
    other = FeatureStats(mean=np.zeros(3), cov=np.eye(3), count=1)
    with pytest.raises(ShapeMismatch):
        frechet_distance(ok, other)


def test_inv_fid_detects_asymmetry():
    rng = np.random.default_rng(8)
    g = make_point_group_2d(4)
    base = GaussianMixture(np.array([1.0]), np.array([[1.5, 0.0]]), np.array([0.1]))
    sym = symmetrize(base, g)
    spec = FeatureSpec(dim_in=2, dim_out=16)
    v_sym = inv_fid(sym.sample(rng, 2000), g, spec)
    v_one = inv_fid(base.sample(rng, 2000), g, spec)
    assert v_one > 10.0 * v_sym
    with pytest.raises(InvalidParams):
        inv_fid(np.zeros((4, 2)), make_point_group_2d(1), spec)


def test_delta_x0_gap():
    g = make_point_group_2d(4)
    inputs = np.random.default_rng(9).standard_normal((16, 2))
    radial = lambda x: np.tanh(np.linalg.norm(x)) * x
    assert delta_x0_gap(radial, inputs, g, np.random.default_rng(10)) <= 1e-15
    skew = lambda x: np.diag([2.0, 1.0]) @ x
    assert delta_x0_gap(skew, inputs, g, np.random.default_rng(11)) > 0.1


def test_energy_statistic_matches_brute_force():
    rng = np.random.default_rng(12)
    a = rng.standard_normal((40, 3))
    b = rng.standard_normal((35, 3)) + 0.3
    stat, _ = energy_distance_test(a, b, permutations=5, seed=0)

    def mean_dist(u, v):
        return float(np.mean(np.linalg.norm(u[:, None, :] - v[None, :, :], axis=2)))

    want = 2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b)
    # The blockwise distance matrix rounds differently from linalg.norm,
    # so agreement is to distance precision rather than bit-exact.
    np.testing.assert_allclose(stat, want, rtol=1e-6)


def test_energy_test_calibration():
    rng = np.random.default_rng(13)
    a = rng.standard_normal((300, 2))
    b = rng.standard_normal((300, 2))
    _, p_same = energy_distance_test(a, b, seed=1)
    assert p_same > 0.01
    _, p_diff = energy_distance_test(a, b + 1.0, seed=1)
    assert p_diff == pytest.approx(0.01)


def test_energy_test_validation():
    with pytest.raises(InvalidParams):
        energy_distance_test(np.zeros((0, 2)), np.zeros((3, 2)))
    with pytest.raises(ShapeMismatch):
        energy_distance_test(np.zeros((3, 2)), np.zeros((3, 3)))


def _gaussian_isotropic(var):
    def p(pts, t):
        sq = np.sum(pts**2, axis=-1)
        return np.exp(-0.5 * sq / var) / (2.0 * np.pi * var)
    return p


def test_fp_residual_stationary_ou():
    # f = -x with g^2 = 2 keeps the unit Gaussian stationary, so only
    # finite-difference error remains.
    axes = (np.linspace(-4, 4, 401), np.linspace(-4, 4, 401))
    res = fokker_planck_residual(
        lambda pts, t: _gaussian_isotropic(1.0)(pts, t),
        lambda pts, t: -pts, np.sqrt(2.0), 0.5, axes)
    assert res.max_abs < 1e-4
    assert res.rms <= res.max_abs
    assert res.residual.shape == (399, 399)


def test_fp_residual_heat_kernel():
    # Pure diffusion: variance grows linearly at rate g^2.
    def p(pts, t):
        return _gaussian_isotropic(0.5 + 2.0 * t)(pts, t)

    axes = (np.linspace(-4, 4, 401), np.linspace(-4, 4, 401))
    res = fokker_planck_residual(p, None, lambda t: np.sqrt(2.0), 0.3, axes)
    assert res.max_abs < 1e-4


def test_liouville_rotation_residual():
    # The rotation field (y, -x) transports any radial density to itself.
    axes = (np.linspace(-4, 4, 801), np.linspace(-4, 4, 801))
    res = fokker_planck_residual(
        lambda pts, t: _gaussian_isotropic(1.0)(pts, t),
        lambda pts, t: np.stack([pts[..., 1], -pts[..., 0]], axis=-1),
        0.0, 0.0, axes)
    assert res.max_abs < 5e-6


def test_fp_residual_validation():
    bad = (np.array([0.0, 0.1, 0.3]), np.linspace(0, 1, 5))
    with pytest.raises(InvalidParams):
        fokker_planck_residual(lambda pts, t: np.ones(pts.shape[:-1]),
                               None, 1.0, 0.0, bad)
