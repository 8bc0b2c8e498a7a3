import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wiseale import diff_core as dc
from wiseale.latent_gaussian import exact_kl_to_prior, gaussian_batch, kl_upper_bound, random_batch
from wiseale.model import BERNOULLI, GAUSSIAN, Architecture, decode, encode, init_params
from wiseale.objectives import (AEVB, BETA_VAE, WISE_ALE, ObjectiveKind, aevb_objective, build_objective,
                                full_recon_oracle, recon_gap_audit, recon_log_likelihood, shared_noise,
                                wise_ale_objective)

GAP = 0.5 * (1.0 - math.log(2.0))


def identity(z):
    return z


def ll(x, xhat, likelihood, sigma=1.0):
    return recon_log_likelihood(np.asarray(x, float), np.asarray(xhat, float), likelihood, sigma).value


# ---------------------------------------------------------------------------
# likelihoods


def test_bernoulli_half():
    assert ll(np.full((1, 4), 0.5), np.full((1, 4), 0.5), BERNOULLI)[0] == pytest.approx(4 * math.log(0.5), abs=1e-15)


def test_gaussian_examples():
    assert ll([[1.0, 2.0]], [[1.0, 2.0]], GAUSSIAN)[0] == pytest.approx(-math.log(2 * math.pi), abs=1e-15)
    assert ll([[1.0, 2.0]], [[0.0, 2.0]], GAUSSIAN)[0] == pytest.approx(-0.5 - math.log(2 * math.pi), abs=1e-15)


def test_likelihood_errors():
    with pytest.raises(dc.UsageError):
        ll([[1.5]], [[0.5]], BERNOULLI)
    with pytest.raises(dc.UsageError):
        ll([[1.0]], [[0.5]], GAUSSIAN, sigma=0.0)
    with pytest.raises(dc.ShapeError):
        ll([[1.0, 2.0]], [[0.5]], GAUSSIAN)


def test_bernoulli_saturation_clamped():
    g = dc.Graph()
    out = recon_log_likelihood(np.array([[1.0, 0.0]]), g.constant([[0.0, 1.0]]), BERNOULLI)
    assert np.isfinite(out.value).all() and g.clamp_count == 2


# ---------------------------------------------------------------------------
# WiSE-ALE


def toy_posteriors(mu, lv, g=None):
    g = g or dc.Graph()
    return gaussian_batch(g.parameter(np.asarray(mu, float)), g.parameter(np.asarray(lv, float)))


def test_wise_ale_hand_composition():
    x = np.array([[0.4], [-1.1]])
    mu, lv = np.array([[0.3], [-0.8]]), np.array([[-0.5], [0.2]])
    noise = np.array([[[0.7], [-0.2]]])
    obj, rep = wise_ale_objective(x, toy_posteriors(mu, lv), identity, ObjectiveKind(WISE_ALE), noise)
    z = mu + np.exp(0.5 * lv) * noise[0]
    recon = np.sum(-0.5 * (x - z) ** 2 / 0.01 - 0.5 * math.log(2 * math.pi * 0.01))
    var = np.exp(lv)
    s = var + var.T
    over = (2 * np.pi * s) ** -0.5 * np.exp(-0.5 * (mu - mu.T) ** 2 / s)
    kl = np.mean(np.log(over.mean(axis=1))) + np.sum(var + mu ** 2 + math.log(2 * math.pi)) / 4
    assert rep.recon_term == pytest.approx(recon, abs=1e-9)
    assert rep.prior_term == pytest.approx(kl, abs=1e-9)
    assert obj.item() == pytest.approx(recon - kl, abs=1e-9)
    assert rep.decomposition_error() <= 1e-12


@pytest.mark.parametrize("d_z", [1, 3])
def test_wise_prior_at_standard_normals(d_z):
    post = toy_posteriors(np.zeros((4, d_z)), np.zeros((4, d_z)))
    _, rep = wise_ale_objective(np.zeros((4, d_z)), post, identity, ObjectiveKind(WISE_ALE), np.zeros((1, 4, d_z)))
    assert rep.prior_term == pytest.approx(GAP * d_z, abs=1e-12)


def test_nlogn_toggle_shifts_value_not_gradient():
    rng = np.random.default_rng(0)
    x, mu, lv = rng.normal(size=(5, 2)), rng.normal(size=(5, 2)), rng.normal(size=(5, 2)) * 0.3
    noise = rng.normal(size=(2, 5, 2))
    results = []
    for flag in (False, True):
        g = dc.Graph()
        post = toy_posteriors(mu, lv, g)
        obj, rep = wise_ale_objective(x, post, identity, ObjectiveKind(WISE_ALE, include_nlogn_constant=flag), noise)
        grads = dc.backward(obj)
        results.append((obj.item(), grads[post.means.id].tobytes(), grads[post.log_vars.inputs[0]].tobytes(), rep))
    (a, ga, la, _), (b, gb, lb, rep) = results
    assert ga == gb and la == lb
    assert a - b == pytest.approx(5 * math.log(5), abs=1e-12)
    assert rep.decomposition_error() <= 1e-12


# ---------------------------------------------------------------------------
# AEVB / beta-VAE


def test_aevb_prior_zero_at_prior():
    for beta in (1.0, 4.0):
        post = toy_posteriors(np.zeros((3, 2)), np.zeros((3, 2)))
        _, rep = aevb_objective(np.zeros((3, 2)), post, identity, beta, np.zeros((1, 3, 2)))
        assert rep.prior_term == 0.0


def test_beta_scales_prior_and_gradient():
    rng = np.random.default_rng(1)
    mu, lv = rng.normal(size=(3, 2)), rng.normal(size=(3, 2)) * 0.3
    out = {}
    for beta in (1.0, 2.0):
        g = dc.Graph()
        post = toy_posteriors(mu, lv, g)
        kl = exact_kl_to_prior(post.means, post.log_vars)
        prior = dc.scale(dc.sum(kl), beta)
        out[beta] = (prior.item(), dc.backward(prior)[post.means.id])
        _, rep = aevb_objective(np.zeros((3, 2)), toy_posteriors(mu, lv), identity, beta, np.zeros((1, 3, 2)))
        assert rep.prior_term == prior.item()
    assert out[2.0][0] == 2 * out[1.0][0]
    np.testing.assert_array_equal(out[2.0][1], 2 * out[1.0][1])


def test_aevb_single_sample_prior():
    _, rep = aevb_objective(np.zeros((1, 1)), toy_posteriors([[1.0]], [[0.0]]), identity, 1.0, np.zeros((1, 1, 1)))
    assert rep.prior_term == pytest.approx(0.5, abs=1e-15)


def test_aevb_matches_textbook_elbo():
    arch = Architecture(d_x=4, d_z=2, enc_hidden=(5,))
    params = init_params(arch, 2)
    x = np.random.default_rng(3).normal(size=(1, 4))
    eps = np.random.default_rng(4).normal(size=(1, 1, 2))
    obj, _ = aevb_objective(x, encode(params, x), lambda z: decode(params, z), 1.0, eps)
    post = encode(params, x)
    z = post.mu + np.exp(0.5 * post.log_var) * eps[0]
    xhat = decode(params, z).value
    log_px = np.sum(-0.5 * (x - xhat) ** 2 / 0.01 - 0.5 * np.log(2 * np.pi * 0.01))
    kl = 0.5 * np.sum(post.mu ** 2 + np.exp(post.log_var) - post.log_var - 1)
    assert obj.item() == pytest.approx(log_px - kl, rel=1e-13)


@given(st.integers(2, 8), st.floats(3.0, 8.0), st.integers(0, 10_000))
def test_aevb_prior_exceeds_wise_far_from_prior(m, c, seed):
    rng = np.random.default_rng(seed)
    mu, lv = rng.normal(size=(m, 2)) + c, rng.uniform(-1, 0.5, size=(m, 2))
    noise = np.zeros((1, m, 2))
    _, wise = wise_ale_objective(np.zeros((m, 2)), toy_posteriors(mu, lv), identity, ObjectiveKind(WISE_ALE), noise)
    _, aevb = aevb_objective(np.zeros((m, 2)), toy_posteriors(mu, lv), identity, 1.0, noise)
    assert aevb.prior_term > wise.prior_term


def test_wise_prior_grows_with_shift_and_ignores_duplication():
    rng = np.random.default_rng(5)
    mu, lv = rng.normal(size=(4, 2)), rng.uniform(-1, 0.5, size=(4, 2))
    vals = [kl_upper_bound(gaussian_batch(mu + c, lv)).item() for c in (3.0, 4.0, 5.0)]
    assert vals[0] < vals[1] < vals[2]
    dup = kl_upper_bound(gaussian_batch(np.repeat(mu + 3, 2, 0), np.repeat(lv, 2, 0))).item()
    assert dup == pytest.approx(vals[0], abs=1e-9)
    aevb = [exact_kl_to_prior(np.tile(mu + 3, (k, 1)), np.tile(lv, (k, 1))).value.sum() for k in (1, 2)]
    assert aevb[1] == pytest.approx(2 * aevb[0])


@pytest.mark.parametrize("variant", [WISE_ALE, AEVB, BETA_VAE])
def test_objectives_finite_on_model(variant):
    arch = Architecture(d_x=6, d_z=3, enc_hidden=(8,), likelihood=BERNOULLI)
    params = init_params(arch, 0)
    rng = np.random.default_rng(6)
    x = (rng.uniform(size=(4, 6)) > 0.5).astype(float)
    kind = ObjectiveKind(variant, beta=4.0 if variant == BETA_VAE else 1.0, mc_samples=3)
    obj, rep = build_objective(kind, x, encode(params, x), lambda z: decode(params, z), rng.normal(size=(3, 4, 3)),
                               BERNOULLI)
    assert math.isfinite(obj.item()) and rep.decomposition_error() <= 1e-12
    assert rep.clamp_count >= 0


def test_kind_validation():
    with pytest.raises(dc.UsageError):
        ObjectiveKind("wae")
    with pytest.raises(dc.UsageError):
        ObjectiveKind(BETA_VAE, beta=0.0)
    with pytest.raises(dc.UsageError):
        ObjectiveKind(AEVB, mc_samples=0)


# ---------------------------------------------------------------------------
# full reconstruction oracle


def small_model():
    arch = Architecture(d_x=4, d_z=2, enc_hidden=(5,))
    return arch, init_params(arch, 7)


def test_oracle_equals_per_sample_estimate_when_m_is_one():
    arch, params = small_model()
    x = np.random.default_rng(8).normal(size=(1, 4))
    post = encode(params, x)
    oracle = full_recon_oracle(x, post, lambda z: decode(params, z), 5, seed=3)
    _, rep = wise_ale_objective(x, post, lambda z: decode(params, z), ObjectiveKind(WISE_ALE, mc_samples=5),
                                shared_noise(3, 5, 1, 2))
    assert oracle == rep.recon_term


def test_oracle_duplicated_inputs_match_single():
    arch, params = small_model()
    x = np.random.default_rng(9).normal(size=(1, 4))
    dec = lambda z: decode(params, z)  # noqa: E731
    one = full_recon_oracle(x, encode(params, x), dec, 4, seed=1)
    two = full_recon_oracle(np.vstack([x, x]), encode(params, np.vstack([x, x])), dec, 4, seed=1)
    assert two / 2 == pytest.approx(one, abs=1e-12)


def test_oracle_cap_and_gap_audit():
    arch, params = small_model()
    rng = np.random.default_rng(10)
    dec = lambda z: decode(params, z)  # noqa: E731
    x = rng.normal(size=(4, 4))
    audit = recon_gap_audit(x, encode(params, x), dec, 8, seed=2)
    assert all(math.isfinite(v) for v in audit.values())
    assert audit["gap"] == abs(audit["oracle"] - audit["simplified"])
    big = random_batch(rng, 17, 2)
    with pytest.raises(dc.UsageError, match="16"):
        full_recon_oracle(rng.normal(size=(17, 4)), big, dec, 1, seed=0)


def test_oracle_deterministic():
    arch, params = small_model()
    x = np.random.default_rng(11).normal(size=(3, 4))
    dec = lambda z: decode(params, z)  # noqa: E731
    assert full_recon_oracle(x, encode(params, x), dec, 6, 4) == full_recon_oracle(x, encode(params, x), dec, 6, 4)
