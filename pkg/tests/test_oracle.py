"""Tests for analytic mixture scores, symmetrization and bridge couplings."""

import numpy as np
import pytest

from spdm import (
    AnalyticScoreField,
    BridgeScoreField,
    DegenerateCoupling,
    GaussianCoupling,
    GaussianMixture,
    InvalidParams,
    TimeOutOfRange,
    bridge_conditional_params,
    bridge_kernel,
    bridge_score_oracle,
    diffused_score,
    log_density,
    make_c4_group,
    make_point_group_2d,
    symmetrize,
    ve_schedule,
    vp_schedule,
)


def two_component_mixture():
    return GaussianMixture(
        weights=np.array([0.6, 0.4]),
        means=np.array([[1.5, 0.0], [0.5, 1.0]]),
        variances=np.array([0.08, 0.12]),
    )


def test_mixture_validation():
    with pytest.raises(InvalidParams):
        GaussianMixture(np.array([0.5, 0.4]), np.zeros((2, 2)), np.ones(2))
    with pytest.raises(InvalidParams):
        GaussianMixture(np.array([1.0]), np.zeros((1, 2)), np.array([-1.0]))
    with pytest.raises(InvalidParams):
        GaussianMixture(np.array([0.5, 0.5]), np.zeros((3, 2)), np.ones(2))


def test_mixture_sampling_moments():
    m = GaussianMixture(np.array([1.0]), np.array([[2.0, -1.0]]), np.array([0.25]))
    draws = m.sample(np.random.default_rng(0), 100_000)
    np.testing.assert_allclose(draws.mean(axis=0), [2.0, -1.0], atol=0.01)
    np.testing.assert_allclose(draws.var(axis=0), 0.25, atol=0.01)


def test_symmetrize_orbit_of_point():
    base = GaussianMixture(np.array([1.0]), np.array([[1.0, 0.0]]), np.array([0.1]))
    sym = symmetrize(base, make_point_group_2d(4))
    assert len(sym.weights) == 4
    np.testing.assert_allclose(sym.weights, 0.25)
    got = {tuple(np.round(m, 12)) for m in sym.means}
    assert got == {(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)}


def test_symmetrize_is_idempotent_in_density():
    g = make_point_group_2d(4)
    once = symmetrize(two_component_mixture(), g)
    twice = symmetrize(once, g)
    s = vp_schedule()
    x = np.random.default_rng(1).standard_normal((100, 2))
    np.testing.assert_allclose(
        log_density(once, s, x, 0.3), log_density(twice, s, x, 0.3), atol=1e-12)


def test_symmetrized_density_is_invariant():
    g = make_point_group_2d(4, with_reflection=True)
    sym = symmetrize(two_component_mixture(), g)
    s = vp_schedule()
    x = np.random.default_rng(2).standard_normal((50, 2))
    for k in g.elements:
        np.testing.assert_allclose(
            log_density(sym, s, k.apply(x), 0.2),
            log_density(sym, s, x, 0.2), atol=1e-10)


def test_symmetrized_score_is_equivariant():
    g = make_point_group_2d(4)
    sym = symmetrize(two_component_mixture(), g)
    s = vp_schedule()
    x = np.random.default_rng(3).standard_normal((50, 2))
    worst_sym, worst_raw = 0.0, 0.0
    raw = two_component_mixture()
    for k in g.elements:
        gap = np.abs(diffused_score(sym, s, k.apply(x), 0.2)
                     - k.apply(diffused_score(sym, s, x, 0.2)))
        worst_sym = max(worst_sym, float(gap.max()))
        gap = np.abs(diffused_score(raw, s, k.apply(x), 0.2)
                     - k.apply(diffused_score(raw, s, x, 0.2)))
        worst_raw = max(worst_raw, float(gap.max()))
    assert worst_sym <= 1e-10
    assert worst_raw > 0.1


def test_score_is_gradient_of_log_density():
    m = two_component_mixture()
    rng = np.random.default_rng(4)
    eps = 1e-6
    for s in (vp_schedule(), ve_schedule()):
        for t in (0.0, 0.25, 0.7, 1.0):
            x = rng.standard_normal(2)
            score = diffused_score(m, s, x, t)
            for j in range(2):
                e = np.zeros(2)
                e[j] = eps
                fd = (log_density(m, s, x + e, t)
                      - log_density(m, s, x - e, t)) / (2 * eps)
                np.testing.assert_allclose(score[j], fd, rtol=1e-5, atol=1e-7)


def test_standard_normal_closed_forms():
    m = GaussianMixture(np.array([1.0]), np.array([[0.0, 0.0]]), np.array([1.0]))
    x = np.random.default_rng(5).standard_normal((20, 2))
    vp = vp_schedule()
    # A unit Gaussian is stationary for the variance-preserving chain.
    np.testing.assert_allclose(diffused_score(m, vp, x, 0.6), -x, atol=1e-12)
    ve = ve_schedule()
    var = 1.0 + float(ve.sigma2(0.6))
    np.testing.assert_allclose(diffused_score(m, ve, x, 0.6), -x / var, atol=1e-12)
    want = -0.5 * (x**2).sum(axis=1) - np.log(2.0 * np.pi)
    np.testing.assert_allclose(log_density(m, vp, x, 0.6), want, atol=1e-12)


def test_density_normalizes():
    m = two_component_mixture()
    s = vp_schedule()
    xs = np.linspace(-8.0, 8.0, 400)
    grid = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1).reshape(-1, 2)
    p = np.exp(log_density(m, s, grid, 0.5)).reshape(400, 400)
    h = xs[1] - xs[0]
    assert abs(np.trapezoid(np.trapezoid(p, dx=h), dx=h) - 1.0) < 1e-3


def test_batch_matches_single_point():
    m = two_component_mixture()
    s = vp_schedule()
    x = np.random.default_rng(6).standard_normal((10, 2))
    batched = diffused_score(m, s, x, 0.4)
    for i in range(10):
        np.testing.assert_array_equal(batched[i], diffused_score(m, s, x[i], 0.4))


def test_score_field_wrapper_and_time_range():
    m = two_component_mixture()
    s = vp_schedule()
    field = AnalyticScoreField(m, s)
    x = np.ones(2)
    np.testing.assert_array_equal(field(x, 0.3), diffused_score(m, s, x, 0.3))
    assert field.log_density(x, 0.3) == log_density(m, s, x, 0.3)
    with pytest.raises(TimeOutOfRange):
        diffused_score(m, s, x, 1.5)
    with pytest.raises(TimeOutOfRange):
        log_density(m, s, x, -0.1)


def test_grid_mixture_score():
    rng = np.random.default_rng(7)
    m = GaussianMixture(np.array([0.5, 0.5]),
                        rng.standard_normal((2, 4, 4)),
                        np.array([0.3, 0.5]))
    s = vp_schedule()
    x = rng.standard_normal((4, 4))
    score = diffused_score(m, s, x, 0.3)
    assert score.shape == (4, 4)
    g = make_c4_group((4, 4))
    sym = symmetrize(m, g)
    for k in g.elements:
        np.testing.assert_allclose(
            diffused_score(sym, s, k.apply(x), 0.3),
            k.apply(diffused_score(sym, s, x, 0.3)), atol=1e-10)


def test_coupling_validation_and_mean_map():
    with pytest.raises(InvalidParams):
        GaussianCoupling(matrix=1.0, noise_var=-0.5)
    c = GaussianCoupling(matrix=0.5, noise_var=0.0)
    np.testing.assert_array_equal(c.mean_map(np.array([2.0, 4.0])), [1.0, 2.0])
    c = GaussianCoupling(matrix=np.array([[0.0, 1.0], [1.0, 0.0]]), noise_var=0.1)
    np.testing.assert_array_equal(c.mean_map(np.array([2.0, 4.0])), [4.0, 2.0])


def test_bridge_conditional_params_monte_carlo():
    # Independent check: draw x_0 from the coupling, then x_t from the pinned
    # bridge, and compare empirical moments of the mixture of bridges.
    s = vp_schedule()
    coupling = GaussianCoupling(matrix=0.4, noise_var=0.09)
    x_T = np.array([1.0, -2.0])
    t = 0.45
    rng = np.random.default_rng(8)
    n = 100_000
    x0 = coupling.sample_x0(np.tile(x_T, (n, 1)), rng)
    bk = bridge_kernel(s, x0, x_T, t)
    draws = bk.mean + np.sqrt(bk.variance) * rng.standard_normal((n, 2))
    params = bridge_conditional_params(coupling, s, x_T, t)
    se = np.sqrt(params.variance / n)
    np.testing.assert_allclose(draws.mean(axis=0), params.mean, atol=5 * se)
    emp_var = draws.var(axis=0).mean()
    assert abs(emp_var - params.variance) < 5 * params.variance * np.sqrt(2.0 / n)


def test_bridge_score_matches_conditional_gradient():
    s = vp_schedule()
    coupling = GaussianCoupling(matrix=0.7, noise_var=0.05)
    rng = np.random.default_rng(9)
    x_t = rng.standard_normal(2)
    x_T = rng.standard_normal(2)
    t = 0.35
    params = bridge_conditional_params(coupling, s, x_T, t)
    eps = 1e-6

    def log_q(x):
        return -0.5 * np.sum((x - params.mean) ** 2) / params.variance

    score = bridge_score_oracle(coupling, s, x_t, x_T, t)
    for j in range(2):
        e = np.zeros(2)
        e[j] = eps
        fd = (log_q(x_t + e) - log_q(x_t - e)) / (2 * eps)
        np.testing.assert_allclose(score[j], fd, rtol=1e-5, atol=1e-8)


def test_bridge_score_equivariance_depends_on_coupling():
    s = vp_schedule()
    g = make_point_group_2d(4)
    rng = np.random.default_rng(10)
    x_t = rng.standard_normal(2)
    x_T = rng.standard_normal(2)
    commuting = GaussianCoupling(matrix=0.3, noise_var=0.02)
    skew = GaussianCoupling(matrix=np.diag([1.0, 0.5]), noise_var=0.02)
    worst_c, worst_s = 0.0, 0.0
    for k in g.elements:
        lhs = bridge_score_oracle(commuting, s, k.apply(x_t), k.apply(x_T), 0.4)
        rhs = k.apply(bridge_score_oracle(commuting, s, x_t, x_T, 0.4))
        worst_c = max(worst_c, float(np.max(np.abs(lhs - rhs))))
        lhs = bridge_score_oracle(skew, s, k.apply(x_t), k.apply(x_T), 0.4)
        rhs = k.apply(bridge_score_oracle(skew, s, x_t, x_T, 0.4))
        worst_s = max(worst_s, float(np.max(np.abs(lhs - rhs))))
    assert worst_c <= 1e-12
    assert worst_s > 0.1


def test_bridge_score_endpoint_behavior():
    s = vp_schedule()
    coupling = GaussianCoupling(matrix=1.0, noise_var=0.0)
    with pytest.raises(TimeOutOfRange):
        bridge_score_oracle(coupling, s, np.zeros(2), np.ones(2), 0.0)
    with pytest.raises(TimeOutOfRange):
        bridge_score_oracle(coupling, s, np.zeros(2), np.ones(2), s.T)
    # Deep in the t -> 0 limit a noiseless coupling collapses the conditional.
    with pytest.raises(DegenerateCoupling):
        bridge_score_oracle(coupling, s, np.zeros(2), np.ones(2), 1e-320)
    field = BridgeScoreField(coupling, s)
    np.testing.assert_array_equal(
        field(np.zeros(2), np.ones(2), 0.5),
        bridge_score_oracle(coupling, s, np.zeros(2), np.ones(2), 0.5))
