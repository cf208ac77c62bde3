import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from argmm import ar_gmm
from argmm._rng import complex_normal, derive_rng
from argmm.ar_gmm import (
    ArComponent,
    ArGmmModel,
    ConstraintSchedule,
    EmConfig,
    ar_autocovariance,
    bic,
    conditional_log_density,
    covariance_from_ar,
    e_step,
    fit,
    gs_inverse_covariance,
    log_likelihood,
    m_step_coefficients,
    m_step_variance,
    m_step_weights,
    parameter_count,
    parameter_count_ar_gmm,
    parameter_count_full_gmm,
    project_coefficients,
    regression_matrix,
    sample,
)
from argmm.errors import ConfigError, NumericalError
from argmm.signal_model import ar_poles, sample_ar_process


def random_stable(order, rng, radius=0.95):
    """AR coefficients whose poles are drawn uniformly inside ``radius``."""
    poles = radius * np.sqrt(rng.uniform(size=order)) * np.exp(2j * np.pi * rng.uniform(size=order))
    return -np.poly(poles)[1:] if order else np.zeros(0, dtype=complex)


def model_of(*comps, M=8, lambdas=None, enabled=True):
    comps = tuple(comps)
    lambdas = lambdas or (1.0,) * len(comps)
    return ArGmmModel(M, comps, ConstraintSchedule(lambdas, enabled))


def ar_data(a, sigma2, N, M, seed):
    rng = derive_rng(seed, "ar-data")
    return np.stack([sample_ar_process(a, sigma2, M, rng, burn_in=200) for _ in range(N)])


# ------------------------------------------------------------------ primitives


def test_regression_matrix_hand_example():
    A = regression_matrix(np.array([1, 2, 3, 4]), 2)
    np.testing.assert_array_equal(A, [[2, 1], [3, 2]])


def test_regression_matrix_order_zero():
    assert regression_matrix(np.arange(5.0), 0).shape == (5, 0)


def test_regression_matrix_loop_oracle():
    rng = derive_rng(0, "reg")
    x, a = complex_normal(rng, 8), complex_normal(rng, 3)
    pred = regression_matrix(x, 3) @ a
    naive = [sum(a[m - 1] * x[i - m] for m in range(1, 4)) for i in range(3, 8)]
    np.testing.assert_allclose(pred, naive, atol=1e-12)


def test_conditional_density_zero_residual():
    x = np.array([1.0, 0.5, 0.25, 0.125], dtype=complex)
    comp = ArComponent([0.5], 0.3, 1.0)
    assert conditional_log_density(x, comp) == pytest.approx(-3 * math.log(math.pi * 0.3))


def test_conditional_density_white_unit():
    x = complex_normal(derive_rng(1), 6)
    comp = ArComponent([], 1 / math.pi, 1.0)
    assert conditional_log_density(x, comp, cond_len=2) == pytest.approx(-math.pi * np.sum(np.abs(x[2:]) ** 2))


def test_conditional_density_dense_gaussian_oracle():
    rng = derive_rng(2, "dense")
    a = random_stable(2, rng)
    comp = ArComponent(a, 0.7, 1.0)
    M, c = 9, 3
    C = covariance_from_ar(comp, M)
    x = complex_normal(rng, M)
    C11, C21, C22 = C[:c, :c], C[c:, :c], C[c:, :c].conj().T
    mu = C21 @ np.linalg.solve(C11, x[:c])
    S = C[c:, c:] - C21 @ np.linalg.solve(C11, C22)
    r = x[c:] - mu
    oracle = -(M - c) * math.log(math.pi) - np.linalg.slogdet(S)[1] - np.vdot(r, np.linalg.solve(S, r)).real
    assert conditional_log_density(x, comp, cond_len=c) == pytest.approx(oracle, rel=1e-9)


def test_ar_autocovariance_closed_forms():
    np.testing.assert_allclose(ar_autocovariance([0.5], 0.75, 2), [1.0, 0.5, 0.25], atol=1e-14)
    np.testing.assert_allclose(ar_autocovariance([], 0.4, 3), [0.4, 0, 0, 0])
    r = ar_autocovariance([0.3 + 0.4j], 0.75, 1)
    assert r[0] == pytest.approx(1.0)
    assert abs(r[1] / r[0]) == pytest.approx(0.5)
    assert r[1] == pytest.approx(0.3 + 0.4j)


def test_covariance_from_ar():
    np.testing.assert_allclose(covariance_from_ar(ArComponent([], 2.0, 1.0), 4), 2.0 * np.eye(4))
    C = covariance_from_ar(ArComponent([0.5], 0.75, 1.0), 3)
    np.testing.assert_allclose(C, [[1, 0.5, 0.25], [0.5, 1, 0.5], [0.25, 0.5, 1]], atol=1e-14)
    rng = derive_rng(3)
    for _ in range(10):
        comp = ArComponent(random_stable(4, rng), 1.0, 1.0)
        assert np.linalg.eigvalsh(covariance_from_ar(comp, 16))[0] > 0


def test_gs_ar1_m2_closed_form():
    a, s2 = 0.4 - 0.3j, 0.6
    G = gs_inverse_covariance(ArComponent([a], s2, 1.0), 2)
    np.testing.assert_allclose(G, np.array([[1, -np.conj(a)], [-a, 1]]) / s2, atol=1e-14)


def test_gs_white():
    np.testing.assert_allclose(gs_inverse_covariance(ArComponent([], 0.5, 1.0), 5), 2.0 * np.eye(5))


@settings(max_examples=60, deadline=None)
@given(order=st.integers(0, 6), extra=st.integers(1, 26), seed=st.integers(0, 2**31))
def test_gs_matches_yule_walker(order, extra, seed):
    M = min(order + extra, 32)
    rng = np.random.default_rng(seed)
    comp = ArComponent(random_stable(order, rng), rng.uniform(0.1, 2.0), 1.0)
    G = gs_inverse_covariance(comp, M)
    C = covariance_from_ar(comp, M)
    assert np.linalg.norm(G @ C - np.eye(M)) / math.sqrt(M) < 1e-8


def test_gs_rejects_floor_variance():
    with pytest.raises(NumericalError):
        gs_inverse_covariance(ArComponent([0.1], 1e-14, 1.0), 4)


# ----------------------------------------------------------------- projection


def test_projection_examples():
    sched = ConstraintSchedule((0.5,))
    np.testing.assert_allclose(project_coefficients([0.9], sched, 0)[0], [0.5])
    a, n = project_coefficients([0.3 + 0.4j], ConstraintSchedule((1.0,)), 0)
    assert n == 0 and a[0] == 0.3 + 0.4j
    np.testing.assert_allclose(project_coefficients([0.6 + 0.8j], sched, 0)[0], [0.3 + 0.4j])


@settings(max_examples=50, deadline=None)
@given(
    re=st.lists(st.floats(-5, 5), min_size=1, max_size=8),
    lam=st.floats(0.05, 1.0),
)
def test_projection_idempotent_and_bounded(re, lam):
    a = np.array(re) * np.exp(1j * np.arange(len(re)))
    sched = ConstraintSchedule((lam,))
    p1, _ = project_coefficients(a, sched, 0)
    p2, n2 = project_coefficients(p1, sched, 0)
    np.testing.assert_array_equal(p1, p2)
    assert n2 == 0
    assert np.all(np.abs(p1) <= lam ** np.arange(1, len(re) + 1) * (1 + 1e-12))


def test_schedule_validation_and_bounds():
    with pytest.raises(ConfigError):
        ConstraintSchedule((0.0,))
    with pytest.raises(ConfigError):
        ConstraintSchedule((1.5,))
    b = ConstraintSchedule((0.8,)).bounds(0, 4)
    assert np.all(b > 0) and np.all(np.diff(b) <= 0)
    assert np.all(np.isinf(ConstraintSchedule.disabled(2).bounds(1, 3)))


# --------------------------------------------------------------------- E-step


def test_e_step_k1_and_identical_components():
    X = complex_normal(derive_rng(4), (20, 8))
    g = e_step(model_of(ArComponent([0.2], 1.0, 1.0)), X).gamma
    np.testing.assert_array_equal(g, 1.0)
    c = ArComponent([0.2], 1.0, 0.5)
    g = e_step(model_of(c, c), X).gamma
    np.testing.assert_allclose(g, 0.5)


def test_e_step_separates_variances():
    X = np.sqrt(0.01) * complex_normal(derive_rng(5), (100, 8))
    m = model_of(ArComponent([], 0.01, 0.5), ArComponent([], 100.0, 0.5))
    resp = e_step(m, X)
    assert resp.gamma[:, 0].mean() > 0.99
    np.testing.assert_allclose(resp.gamma.sum(axis=1), 1.0, atol=1e-10)


def test_e_step_survives_extreme_scales():
    X = 1e6 * complex_normal(derive_rng(6), (10, 8))
    m = model_of(ArComponent([], 1e-10, 0.5), ArComponent([], 1e-9, 0.5))
    resp = e_step(m, X)
    assert np.all(np.isfinite(resp.gamma))
    np.testing.assert_allclose(resp.gamma.sum(axis=1), 1.0, atol=1e-10)
    assert np.all((resp.gamma >= 0) & (resp.gamma <= 1))


# --------------------------------------------------------------------- M-step


def test_m_step_hand_example():
    a = m_step_coefficients(np.array([[1, 2, 4]], dtype=complex), np.ones(1), 0, 1, ridge=0.0)
    assert a[0] == pytest.approx(2.0)


def test_m_step_weight_invariance():
    x = complex_normal(derive_rng(7), 10)
    single = m_step_coefficients(x[None], np.ones(1), 0, 2, ridge=0.0)
    repeated = m_step_coefficients(np.repeat(x[None], 5, axis=0), np.full(5, 0.3), 0, 2, ridge=0.0)
    np.testing.assert_allclose(repeated, single, rtol=1e-12)


def test_m_step_stacked_least_squares_oracle():
    X = complex_normal(derive_rng(8), (30, 12))
    a = m_step_coefficients(X, np.ones(30), 0, 3, ridge=0.0)
    A = np.concatenate([regression_matrix(x, 3) for x in X])
    t = np.concatenate([x[3:] for x in X])
    oracle = np.linalg.lstsq(A, t, rcond=None)[0]
    np.testing.assert_allclose(a, oracle, rtol=1e-8)


def test_m_step_stationarity():
    rng = derive_rng(9)
    X = complex_normal(rng, (40, 10))
    gamma = rng.uniform(size=(40, 2))
    for k in range(2):
        a = m_step_coefficients(X, gamma, k, 2, cond_len=3, ridge=0.0)
        G = sum(g * regression_matrix(x, 2, 3).conj().T @ regression_matrix(x, 2, 3) for g, x in zip(gamma[:, k], X))
        b = sum(g * regression_matrix(x, 2, 3).conj().T @ x[3:] for g, x in zip(gamma[:, k], X))
        assert np.linalg.norm(G @ a - b) < 1e-8 * (1 + np.linalg.norm(b))


def test_m_step_variance_cases():
    x = 0.7 ** np.arange(6) + 0j
    assert m_step_variance(x[None], np.ones(1), 0, [0.7]) == ar_gmm.VARIANCE_FLOOR
    X = complex_normal(derive_rng(10), (15, 6))
    assert m_step_variance(X, np.ones(15), 0, []) == pytest.approx(np.sum(np.abs(X) ** 2) / (15 * 6), rel=1e-12)
    rng = derive_rng(11)
    g = rng.uniform(size=15)
    a = complex_normal(rng, 2)
    naive = sum(w * np.sum(np.abs(x[2:] - regression_matrix(x, 2) @ a) ** 2) for w, x in zip(g, X)) / (4 * g.sum())
    assert m_step_variance(X, g, 0, a) == pytest.approx(naive, rel=1e-12)


def test_m_step_weights():
    np.testing.assert_allclose(m_step_weights(np.full((8, 4), 0.25)), 0.25)
    hard = np.zeros((100, 2))
    hard[:30, 0] = 1
    hard[30:, 1] = 1
    np.testing.assert_allclose(m_step_weights(hard), [0.3, 0.7])
    g = derive_rng(12).dirichlet(np.ones(5), size=50)
    assert abs(m_step_weights(g).sum() - 1) < 1e-12


# ------------------------------------------------------------------------ EM


def test_fit_recovers_ar1():
    X = ar_data([0.5], 0.75, 1000, 8, seed=13)
    model, trace = fit(X, 1, 1, ConstraintSchedule.disabled(1))
    a, s2 = model.components[0].coeffs[0], model.components[0].sigma2
    assert abs(a - 0.5) < 0.05 and abs(s2 - 0.75) < 0.05
    assert trace.n_iter <= 2 and trace.converged


def test_fit_separates_two_ar1_processes():
    N, M = 2000, 16
    labels = derive_rng(14, "labels").integers(2, size=N)
    Xa, Xb = ar_data([0.9], 1.0, N, M, 15), ar_data([-0.9], 1.0, N, M, 16)
    X = np.where(labels[:, None] == 0, Xa, Xb)
    model, _ = fit(X, 2, 1, ConstraintSchedule.disabled(2), EmConfig(seed=3))
    w = model.weights
    assert np.all((w > 0.4) & (w < 0.6))
    signs = sorted(np.sign(c.coeffs[0].real) for c in model.components)
    assert signs == [-1, 1]


@pytest.mark.parametrize("seed", range(5))
def test_em_monotone_without_projection(seed):
    rng = derive_rng(seed, "mono")
    K = int(rng.integers(2, 5))
    truth = [random_stable(2, rng, radius=0.9) for _ in range(K)]
    X = np.concatenate([ar_data(a, 1.0, 40, 12, seed * 10 + k) for k, a in enumerate(truth)])
    _, trace = fit(X, K, [1, 2, 3][: K] + [2] * max(0, K - 3), ConstraintSchedule.disabled(K), EmConfig(seed=seed, max_iters=150))
    ll = np.array(trace.log_likelihood)
    assert np.all(np.diff(ll) >= -1e-8 * np.abs(ll[:-1]))


def test_em_with_projection_respects_bounds_and_improves():
    X = ar_data([0.9 + 0.3j], 1.0, 200, 12, 20)
    sched = ConstraintSchedule.uniform(0.6, 3)
    model, trace = fit(X, 3, 2, sched, EmConfig(seed=1, max_iters=60))
    for k, c in enumerate(model.components):
        assert np.all(np.abs(c.coeffs) <= sched.bounds(k, 2) * (1 + 1e-12))
        assert c.sigma2 >= ar_gmm.VARIANCE_FLOOR
    assert abs(sum(model.weights) - 1) < 1e-12
    assert trace.log_likelihood[-1] >= trace.log_likelihood[0]


def test_fit_permutation_equivariance():
    X = ar_data([0.7], 1.0, 60, 10, 21)
    rng = derive_rng(22)
    comps = tuple(ArComponent(random_stable(o, rng, 0.8), 1.0 + k, 1 / 3) for k, o in enumerate((1, 2, 3)))
    init = ArGmmModel(10, comps, ConstraintSchedule((0.9, 0.8, 0.7)))
    perm = [2, 0, 1]
    m1, _ = fit(X, 3, init.orders, cfg=EmConfig(max_iters=20), init=init)
    p_init = init.permuted(perm)
    m2, _ = fit(X, 3, p_init.orders, cfg=EmConfig(max_iters=20), init=p_init)
    for j, p in enumerate(perm):
        np.testing.assert_allclose(m2.components[j].coeffs, m1.components[p].coeffs, rtol=1e-10, atol=1e-13)
        assert m2.components[j].sigma2 == pytest.approx(m1.components[p].sigma2, rel=1e-10)
        assert m2.components[j].weight == pytest.approx(m1.components[p].weight, rel=1e-10)


def test_fit_validation():
    X = complex_normal(derive_rng(0), (5, 4))
    with pytest.raises(ConfigError):
        fit(X, 6, 1)
    with pytest.raises(ConfigError):
        fit(X, 2, 4)
    with pytest.raises(ConfigError):
        fit(X, 2, [1, 2, 3])


# --------------------------------------------------------------- scoring, I/O


def test_log_likelihood_properties():
    X = complex_normal(derive_rng(23), (12, 8))
    comp = ArComponent([0.3, -0.1j], 0.9, 1.0)
    m = model_of(comp)
    assert log_likelihood(m, X) == pytest.approx(sum(conditional_log_density(x, comp) for x in X), rel=1e-12)
    assert log_likelihood(m, np.concatenate([X, X])) == pytest.approx(2 * log_likelihood(m, X), rel=1e-13)
    m2 = model_of(ArComponent([0.3], 0.9, 0.4), ArComponent([0.1, 0.2], 1.4, 0.6))
    import mpmath

    mpmath.mp.dps = 40
    total = mpmath.mpf(0)
    for x in X:
        s = mpmath.mpf(0)
        for c in m2.components:
            s += c.weight * mpmath.exp(conditional_log_density(x, c, cond_len=2))
        total += mpmath.log(s)
    assert log_likelihood(m2, X) == pytest.approx(float(total), rel=1e-10)


def test_parameter_counts():
    assert parameter_count_full_gmm(16, 64) == 65551
    assert parameter_count_ar_gmm([4] * 16) == 159
    assert parameter_count(model_of(ArComponent([], 1.0, 1.0))) == 1


def test_bic_arithmetic_and_penalty():
    X = complex_normal(derive_rng(24), (100, 8))
    m = model_of(ArComponent([0.1, 0.2, 0.1, 0.0], 1.0, 1.0))
    assert parameter_count(m) == 9
    assert bic(m, X) - (-2 * log_likelihood(m, X)) == pytest.approx(9 * math.log(100))
    c0 = m.components[0]
    bigger = model_of(c0, ArComponent(c0.coeffs, 1.0, 0.0))
    assert log_likelihood(bigger, X) == pytest.approx(log_likelihood(m, X))
    assert bic(bigger, X) > bic(m, X)


def test_sample_white_and_degenerate_weights():
    m = model_of(ArComponent([], 1.0, 1.0), M=4)
    S = sample(m, 100_000, derive_rng(25))
    C = S.T @ S.conj() / S.shape[0]
    assert np.linalg.norm(C - np.eye(4)) / 2 < 0.05
    m2 = model_of(ArComponent([], 1e-6, 1.0), ArComponent([], 100.0, 0.0), M=4)
    assert np.max(np.abs(sample(m2, 500, derive_rng(26)))) < 0.1


def test_sample_ar1_lag_one():
    m = model_of(ArComponent([0.5], 0.75, 1.0), M=4)
    S = sample(m, 100_000, derive_rng(27))
    r0 = np.mean(np.abs(S) ** 2)
    r1 = np.mean(S[:, 1:] * S[:, :-1].conj())
    assert r1.real == pytest.approx(0.5 * r0, rel=0.05)


def test_model_json_round_trip():
    m = model_of(ArComponent([0.1 + 0.2j, -0.3], 0.7, 0.25), ArComponent([0.4j], 1.3, 0.75), lambdas=(0.9, 0.6))
    back = ArGmmModel.from_dict(json.loads(json.dumps(m.to_dict())))
    assert back.M == m.M and back.constraints == m.constraints
    for c1, c2 in zip(m.components, back.components):
        np.testing.assert_array_equal(c1.coeffs, c2.coeffs)
        assert (c1.sigma2, c1.weight) == (c2.sigma2, c2.weight)


def test_model_invariants_enforced():
    with pytest.raises(ConfigError):
        model_of(ArComponent([0.1], 1.0, 0.6), ArComponent([0.1], 1.0, 0.6))
    with pytest.raises(ConfigError):
        model_of(ArComponent(np.zeros(8), 1.0, 1.0), M=8)


def test_covariances_trace():
    comps = [ArComponent(random_stable(3, derive_rng(k)), 1.0, 0.25) for k in range(4)]
    m = model_of(*comps, M=16)
    for comp, C in zip(comps, m.covariances):
        assert np.trace(C).real == pytest.approx(16 * ar_autocovariance(comp.coeffs, 1.0, 0)[0].real)


def test_stabilization_bounds_poles():
    a, changed = ar_gmm.stabilize_coefficients([1.9, -0.95], 0.99)
    assert not changed or np.max(np.abs(ar_poles(a))) <= 0.99 + 1e-9
    a, changed = ar_gmm.stabilize_coefficients([2.5], 0.99)
    assert changed and abs(a[0]) == pytest.approx(0.99)
