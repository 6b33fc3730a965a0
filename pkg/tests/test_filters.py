import math

import mpmath
import numpy as np
import pytest
from numpy.testing import assert_allclose

from gmkf import (
    ConfigError,
    FilterState,
    GaussianComponent,
    GaussianMixture,
    NumericsError,
    ScenarioConfig,
    SystemModel,
    build_system,
    gsf_r_step,
    gsf_step,
    lmmse_step,
    matched_step,
    mode_matched_step,
    symmetrize_floor,
)
from gmkf.filters import posterior_weights


def single(mean, cov):
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    return GaussianMixture([1.0], (GaussianComponent(mean, cov),))


def scalar_model(u=0.0, q=0.0, b=0.0, r=1.0):
    return SystemModel(
        F=[[1.0]], H=[[1.0]], dt=1.0,
        process_noise=single([u], [[q]]),
        measurement_noise=single([b], [[r]]),
    )


def two_cluster_measurement(means, r=1.0, weights=None):
    c = len(means)
    weights = weights if weights is not None else [1.0 / c] * c
    comps = tuple(GaussianComponent([m], [[r]]) for m in means)
    return GaussianMixture(weights, comps)


# ------------------------------------------------------- mode-matched update


def test_scalar_conjugate_update():
    st = mode_matched_step(scalar_model(), FilterState([0.0], [[1.0]]), 0, 0, [1.0])
    assert st.S[0, 0] == pytest.approx(2.0, abs=0.0)
    assert st.gain[0, 0] == pytest.approx(0.5, abs=0.0)
    assert st.x_post[0] == pytest.approx(0.5, abs=0.0)
    assert st.P_post[0, 0] == pytest.approx(0.5, abs=0.0)


def test_uninformative_measurement_limit():
    st = mode_matched_step(
        scalar_model(r=1e12), FilterState([0.3], [[2.0]]), 0, 0, [100.0]
    )
    assert st.x_post[0] == pytest.approx(st.x_pred[0], rel=1e-6)
    assert st.P_post[0, 0] == pytest.approx(st.P_pred[0, 0], rel=1e-6)


def test_positioning_model_against_matrix_oracle():
    cfg = ScenarioConfig(model_id=1)
    dt = cfg.dt
    drive = np.array([dt, 1.0])
    model = SystemModel(
        F=[[1.0, dt], [0.0, 1.0]], H=[[1.0, 0.0]], dt=dt,
        process_noise=single(np.zeros(2), np.outer(drive, drive)),
        measurement_noise=single([0.0], [[1.0]]),
    )
    prev = FilterState(np.zeros(2), np.eye(2))
    st = mode_matched_step(model, prev, 0, 0, [0.5])

    # straight-line arithmetic, no shared code paths with the implementation
    F = np.array([[1.0, dt], [0.0, 1.0]])
    H = np.array([[1.0, 0.0]])
    x_pred = F @ np.zeros(2)
    P_pred = np.outer(drive, drive) + F @ np.eye(2) @ F.T
    S = H @ P_pred @ H.T + 1.0
    W = P_pred @ H.T @ np.linalg.inv(S)
    x_post = x_pred + (W @ (np.array([0.5]) - H @ x_pred)).ravel()
    P_post = P_pred - W @ S @ W.T

    assert_allclose(st.x_post, x_post, atol=1e-10)
    assert_allclose(st.P_post, P_post, atol=1e-10)
    assert_allclose(st.S, S, atol=1e-10)


def test_cluster_index_out_of_range():
    model = scalar_model()
    prev = FilterState([0.0], [[1.0]])
    with pytest.raises(ConfigError):
        mode_matched_step(model, prev, 1, 0, [0.0])
    with pytest.raises(ConfigError):
        mode_matched_step(model, prev, 0, -1, [0.0])


def test_singular_innovation_names_the_mode():
    model = scalar_model(q=0.0, r=0.0)
    with pytest.raises(NumericsError, match=r"mode \(0, 0\)"):
        mode_matched_step(model, FilterState([0.0], [[0.0]]), 0, 0, [0.0])


# ------------------------------------------------------- posterior weights


def test_weights_symmetric_case():
    w = posterior_weights([math.log(0.5)] * 2, [-1.3, -1.3])
    assert_allclose(w, [0.5, 0.5], atol=1e-15)


def test_weights_prior_passthrough():
    w = posterior_weights(np.log([0.9, 0.1]), [-2.0, -2.0])
    assert_allclose(w, [0.9, 0.1], atol=1e-12)


def test_weights_huge_gap_matches_arbitrary_precision():
    log_prior = np.log([0.4, 0.6])
    log_lik = np.array([0.0, -1000.0])
    w = posterior_weights(log_prior, log_lik)
    assert np.all(np.isfinite(w))
    with mpmath.workdps(60):
        terms = [mpmath.exp(lp + ll) for lp, ll in zip(log_prior, log_lik)]
        total = mpmath.fsum(terms)
        exact = [float(t / total) for t in terms]
    assert_allclose(w, exact, rtol=1e-12, atol=1e-320)


def test_weights_extreme_but_finite_inputs_survive():
    # log-domain arithmetic keeps even -1e6-nat likelihoods normalizable
    w = posterior_weights([math.log(0.5)] * 2, [-1e6, -1e6])
    assert_allclose(w, [0.5, 0.5], atol=1e-15)


def test_weights_total_underflow_raises():
    with pytest.raises(NumericsError):
        posterior_weights([math.log(0.5)] * 2, [-math.inf, -math.inf])


# ------------------------------------------------------- full bank update


def test_single_mode_equals_plain_kalman():
    model = scalar_model(u=0.1, q=0.5, b=0.2, r=1.5)
    prev = FilterState([0.7], [[2.0]])
    out = gsf_step(model, prev, [1.0])
    st = mode_matched_step(model, prev, 0, 0, [1.0])
    assert_allclose(out.combined.x_hat, st.x_post, atol=1e-12)
    assert_allclose(out.combined.P, st.P_post, atol=1e-12)
    assert out.argmax_mode == (0, 0)


def test_two_mode_hand_computed_update():
    # prediction N(0, 1); measurement mixture 0.5 N(-1, 1) + 0.5 N(+1, 1); z = 0
    model = SystemModel(
        F=[[1.0]], H=[[1.0]], dt=1.0,
        process_noise=single([0.0], [[0.0]]),
        measurement_noise=two_cluster_measurement([-1.0, 1.0]),
    )
    out = gsf_step(model, FilterState([0.0], [[1.0]]), [0.0])
    assert_allclose(out.bank.weights, [[0.5, 0.5]], atol=1e-14)
    assert_allclose(out.bank.x_post.reshape(2), [0.5, -0.5], atol=1e-14)
    assert_allclose(out.bank.P_post.reshape(2), [0.5, 0.5], atol=1e-14)
    assert out.combined.x_hat[0] == pytest.approx(0.0, abs=1e-15)
    assert out.combined.P[0, 0] == pytest.approx(0.75, abs=1e-14)


def random_model(rng, c_v=2, c_w=3):
    pcomps = []
    for _ in range(c_v):
        A = rng.standard_normal((2, 2))
        pcomps.append(GaussianComponent(rng.standard_normal(2), A @ A.T + 0.2 * np.eye(2)))
    mcomps = tuple(
        GaussianComponent(rng.standard_normal(1) * 3, [[0.3 + rng.random()]])
        for _ in range(c_w)
    )
    return SystemModel(
        F=np.eye(2) + 0.2 * rng.standard_normal((2, 2)),
        H=[[1.0, 0.2]], dt=1.0,
        process_noise=GaussianMixture(rng.dirichlet(np.ones(c_v)), tuple(pcomps)),
        measurement_noise=GaussianMixture(rng.dirichlet(np.ones(c_w)), mcomps),
    )


def test_bank_invariants_randomized():
    rng = np.random.default_rng(19)
    for _ in range(20):
        model = random_model(rng)
        B = rng.standard_normal((2, 2))
        prev = FilterState(rng.standard_normal(2), B @ B.T + 0.3 * np.eye(2))
        out = gsf_step(model, prev, rng.standard_normal(1) * 4)
        assert abs(float(np.sum(out.bank.weights)) - 1.0) <= 1e-12
        assert np.all(out.bank.weights >= 0.0)
        assert np.all(out.bank.S.reshape(-1) > 0.0)
        for P in out.bank.P_post.reshape(-1, 2, 2):
            assert np.linalg.eigvalsh(P)[0] >= -1e-8


def test_spread_of_means_identity():
    rng = np.random.default_rng(23)
    for _ in range(5):
        model = random_model(rng)
        prev = FilterState(rng.standard_normal(2), np.eye(2) * (0.5 + rng.random()))
        out = gsf_step(model, prev, rng.standard_normal(1) * 3)
        mu = out.bank.weights
        xp = out.bank.x_post
        xc = out.combined.x_hat
        spread = np.einsum("ij,ijn,ijm->nm", mu, xp - xc, xp - xc)
        weighted_P = np.einsum("ij,ijnm->nm", mu, out.bank.P_post)
        assert_allclose(out.combined.P, weighted_P + spread, atol=1e-10)


def test_second_moment_identity():
    rng = np.random.default_rng(29)
    model = random_model(rng)
    prev = FilterState(rng.standard_normal(2), np.eye(2))
    out = gsf_step(model, prev, [1.7])
    mu = out.bank.weights
    lhs = out.combined.P + np.outer(out.combined.x_hat, out.combined.x_hat)
    rhs = np.einsum("ij,ijnm->nm", mu, out.bank.P_post) + np.einsum(
        "ij,ijn,ijm->nm", mu, out.bank.x_post, out.bank.x_post
    )
    assert_allclose(lhs, rhs, atol=1e-10)


def test_cluster_permutation_invariance():
    rng = np.random.default_rng(31)
    model = random_model(rng, c_v=3, c_w=3)
    prev = FilterState(rng.standard_normal(2), np.eye(2))
    z = [0.9]
    out = gsf_step(model, prev, z)

    perm_v = [2, 0, 1]
    perm_w = [1, 2, 0]
    pn = model.process_noise
    mn = model.measurement_noise
    permuted = SystemModel(
        F=model.F, H=model.H, dt=model.dt,
        process_noise=GaussianMixture(
            np.asarray(pn.weights)[perm_v], tuple(pn.components[i] for i in perm_v)
        ),
        measurement_noise=GaussianMixture(
            np.asarray(mn.weights)[perm_w], tuple(mn.components[j] for j in perm_w)
        ),
    )
    out2 = gsf_step(permuted, prev, z)
    assert_allclose(out2.combined.x_hat, out.combined.x_hat, atol=1e-10)
    assert_allclose(out2.combined.P, out.combined.P, atol=1e-10)
    i2, j2 = out2.argmax_mode
    assert (perm_v[i2], perm_w[j2]) == out.argmax_mode


def test_measurement_offset_consistency():
    rng = np.random.default_rng(37)
    model = random_model(rng)
    prev = FilterState(rng.standard_normal(2), np.eye(2))
    d = 13.25
    mn = model.measurement_noise
    shifted = SystemModel(
        F=model.F, H=model.H, dt=model.dt,
        process_noise=model.process_noise,
        measurement_noise=GaussianMixture(
            mn.weights,
            tuple(GaussianComponent(c.mean + d, c.cov) for c in mn.components),
        ),
    )
    out = gsf_step(model, prev, [0.4])
    out2 = gsf_step(shifted, prev, [0.4 + d])
    assert_allclose(out2.combined.x_hat, out.combined.x_hat, atol=1e-10)
    assert_allclose(out2.combined.P, out.combined.P, atol=1e-10)
    assert_allclose(out2.bank.weights, out.bank.weights, atol=1e-10)


# ------------------------------------------------------- readout filter


def test_readout_single_mode_is_kalman():
    model = scalar_model(q=0.3, r=1.0)
    prev = FilterState([0.0], [[1.0]])
    out = gsf_r_step(model, prev, [0.5])
    st = mode_matched_step(model, prev, 0, 0, [0.5])
    assert_allclose(out.selected.x_hat, st.x_post, atol=1e-15)


def test_readout_picks_nearby_cluster():
    model = SystemModel(
        F=[[1.0]], H=[[1.0]], dt=1.0,
        process_noise=single([0.0], [[0.5]]),
        measurement_noise=two_cluster_measurement([-50.0, 50.0]),
    )
    out = gsf_r_step(model, FilterState([0.0], [[0.5]]), [-50.0])
    assert out.argmax_mode == (0, 0)
    assert out.bank.weights[0, 0] > 0.999
    assert_allclose(out.selected.x_hat, out.bank.x_post[0, 0], atol=0.0)


def test_readout_feedback_mode_validated():
    model = scalar_model()
    with pytest.raises(ConfigError):
        gsf_r_step(model, FilterState([0.0], [[1.0]]), [0.0], feedback="oracle")


def test_readout_argmax_invariant_to_prior_scaling():
    # common positive scaling of unnormalized priors cannot move the argmax
    rng = np.random.default_rng(41)
    model = random_model(rng)
    prev = FilterState(rng.standard_normal(2), np.eye(2))
    out = gsf_step(model, prev, [1.1])
    logw = out.bank.log_weights_unnorm + math.log(7.3)
    flat = int(np.argmax(logw))
    assert divmod(flat, model.c_w) == out.argmax_mode


# ------------------------------------------------------- matched filter


def test_matched_constant_mode_equals_single_cluster_kalman():
    rng = np.random.default_rng(43)
    model = random_model(rng, c_v=2, c_w=2)
    # a model collapsed to cluster (1, 1) only
    alone = SystemModel(
        F=model.F, H=model.H, dt=model.dt,
        process_noise=GaussianMixture([1.0], (model.process_noise.components[1],)),
        measurement_noise=GaussianMixture([1.0], (model.measurement_noise.components[1],)),
    )
    st_m = FilterState(np.zeros(2), np.eye(2))
    st_k = FilterState(np.zeros(2), np.eye(2))
    for _ in range(40):
        z = rng.standard_normal(1) * 2
        st_m = matched_step(model, st_m, z, 1, 1)
        st_k = matched_step(alone, st_k, z, 0, 0)
        assert_allclose(st_m.x_hat, st_k.x_hat, atol=1e-12)
        assert_allclose(st_m.P, st_k.P, atol=1e-12)


# ------------------------------------------------------- moment-matched filter


def test_lmmse_single_cluster_equals_bank():
    model = scalar_model(u=0.2, q=0.4, b=-0.1, r=0.9)
    prev = FilterState([0.5], [[1.2]])
    out = gsf_step(model, prev, [0.3])
    lm = lmmse_step(model, prev, [0.3])
    assert_allclose(lm.x_hat, out.combined.x_hat, atol=1e-12)
    assert_allclose(lm.P, out.combined.P, atol=1e-12)


def test_lmmse_covariance_is_data_independent():
    cfg = ScenarioConfig(model_id=1)
    model = build_system(cfg, 1.0)
    rng = np.random.default_rng(47)
    traces = []
    for _ in range(2):
        st = FilterState(np.zeros(2), np.eye(2))
        ps = []
        for _ in range(30):
            st = lmmse_step(model, st, rng.standard_normal(1) * 40)
            ps.append(st.P.copy())
        traces.append(ps)
    for Pa, Pb in zip(*traces):
        assert_allclose(Pa, Pb, atol=1e-12)


def test_lmmse_uses_matched_measurement_variance():
    cfg = ScenarioConfig(model_id=1)
    model = build_system(cfg, 1.0)
    assert model.measurement_mm.cov[0, 0] == pytest.approx(1361.0)
    prev = FilterState(np.zeros(2), np.eye(2))
    st = lmmse_step(model, prev, [0.0])
    # reproduce the covariance with an explicit Riccati step at R = 1361
    F = model.F
    P_pred = model.process_mm.cov + F @ np.eye(2) @ F.T
    S = P_pred[0, 0] + 1361.0
    W = P_pred[:, [0]] / S
    P_manual = P_pred - W * S @ W.T
    assert_allclose(st.P, P_manual, atol=1e-10)


# ------------------------------------------------------- covariance hygiene


def test_symmetrize_floor_passthrough():
    P = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert_allclose(symmetrize_floor(P.copy()), P, atol=0.0)


def test_symmetrize_floor_clamps_tiny_negative():
    P = np.diag([1.0, -5e-9])
    out = symmetrize_floor(P)
    assert np.linalg.eigvalsh(out)[0] >= -1e-15
    assert out[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_symmetrize_floor_rejects_large_negative():
    with pytest.raises(NumericsError):
        symmetrize_floor(np.diag([1.0, -1.0]))


def test_symmetrize_floor_general_dimension():
    out = symmetrize_floor(np.diag([1.0, 0.5, -5e-9]))
    assert np.linalg.eigvalsh(out)[0] >= -1e-15
    with pytest.raises(NumericsError):
        symmetrize_floor(np.diag([1.0, 0.5, -1e-4]))


def test_filter_state_shape_check():
    with pytest.raises(ConfigError):
        FilterState([0.0, 1.0], [[1.0]])
