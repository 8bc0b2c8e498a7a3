"""Training objectives: WiSE-ALE, AEVB and beta-VAE, plus the full-reconstruction oracle.

Every objective returns a scalar node to be *maximised* and an
:class:`ObjectiveReport` with its decomposition. Reconstruction uses S
reparameterised draws per sample; ``noise`` has shape ``(S, M, d_z)``.
"""

import math
from dataclasses import dataclass

import numpy as np

from wiseale import diff_core as dc
from wiseale.latent_gaussian import GaussianBatch, exact_kl_to_prior, kl_upper_bound, sample_reparameterized
from wiseale.model import BERNOULLI, GAUSSIAN

WISE_ALE = "wise-ale"
AEVB = "aevb"
BETA_VAE = "beta-vae"
VARIANTS = (WISE_ALE, AEVB, BETA_VAE)
ORACLE_MAX_BATCH = 16


@dataclass(frozen=True)
class ObjectiveKind:
    variant: str
    beta: float = 1.0
    mc_samples: int = 1
    include_nlogn_constant: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise dc.UsageError(f"unknown objective {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if not self.beta > 0:
            raise dc.UsageError("beta must be positive")
        if self.mc_samples < 1:
            raise dc.UsageError("mc_samples must be >= 1")

    @property
    def label(self):
        return f"beta-vae(beta={self.beta:g})" if self.variant == BETA_VAE else self.variant


@dataclass
class ObjectiveReport:
    recon_term: float
    prior_term: float
    objective: float
    per_sample_kl_mean: float
    clamp_count: int
    constant: float = 0.0

    @property
    def aevb_kl(self):
        return self.per_sample_kl_mean

    def decomposition_error(self):
        return abs(self.objective - (self.recon_term - self.prior_term + self.constant))


def recon_log_likelihood(x, decoder_out, likelihood=GAUSSIAN, sigma_dec=0.1):
    """Per-sample log p(x | z) for decoded likelihood parameters; returns an ``(M,)`` node."""
    g = dc._graph_of((x, decoder_out))
    xhat = dc.as_node(decoder_out, g)
    xv = np.asarray(x.value if isinstance(x, dc.Node) else x, dtype=np.float64)
    if xv.shape != xhat.shape:
        raise dc.ShapeError("recon_log_likelihood", xv.shape, xhat.shape)
    if likelihood == BERNOULLI:
        if np.any((xv < 0.0) | (xv > 1.0)):
            raise dc.UsageError("Bernoulli likelihood needs x in [0, 1]")
        log_p = dc.log(xhat, floor=dc.LOG_FLOOR)
        log_q = dc.log(dc.add_scalar(dc.neg(xhat), 1.0), floor=dc.LOG_FLOOR)
        return dc.sum(dc.mul(xv, log_p) + dc.mul(1.0 - xv, log_q), axis=-1)
    if likelihood == GAUSSIAN:
        if not sigma_dec > 0:
            raise dc.UsageError("sigma_dec must be positive")
        d_x = xv.shape[-1]
        sq = dc.sum(dc.square(dc.sub(xv, xhat)), axis=-1)
        return dc.add_scalar(dc.scale(sq, -0.5 / sigma_dec ** 2), -0.5 * d_x * math.log(2.0 * math.pi * sigma_dec ** 2))
    raise dc.UsageError(f"unknown likelihood {likelihood!r}")


def shared_noise(seed, mc_samples, batch_size, d_z):
    """One standard-normal draw per MC sample, shared by every row: ``(S, M, d_z)``.

    The full-reconstruction oracle uses the same draws, so estimates taken with
    the same seed are directly comparable.
    """
    eps = np.random.default_rng(seed).standard_normal((mc_samples, d_z))
    return np.ascontiguousarray(np.broadcast_to(eps[:, None, :], (mc_samples, batch_size, d_z)))


def _recon_term(x, posteriors, decode, noise, likelihood, sigma_dec):
    noise = np.asarray(noise, dtype=np.float64)
    if noise.ndim != 3 or noise.shape[1:] != posteriors.means.shape:
        raise dc.ShapeError("noise", noise.shape, posteriors.means.shape)
    total = None
    for eps in noise:
        z = sample_reparameterized(posteriors.means, posteriors.log_vars, eps)
        ll = recon_log_likelihood(x, decode(z), likelihood, sigma_dec)
        total = ll if total is None else total + ll
    return dc.sum(dc.scale(total, 1.0 / noise.shape[0]))


def _exact_kl_values(posteriors):
    mu, lv = posteriors.mu, posteriors.log_var
    return 0.5 * np.sum(mu * mu + np.exp(lv) - lv - 1.0, axis=-1)


def wise_ale_objective(x, posteriors, decode, kind, noise, likelihood=GAUSSIAN, sigma_dec=0.1):
    """Per-sample reconstruction minus the analytic aggregate-posterior KL bound.

    With ``kind.include_nlogn_constant`` the ``-M log M`` term of the
    simplified reconstruction bound is added; it carries no gradient.
    """
    g = posteriors.means.graph
    recon = _recon_term(x, posteriors, decode, noise, likelihood, sigma_dec)
    prior = kl_upper_bound(posteriors)
    objective = recon - prior
    m = posteriors.size
    const = -m * math.log(m) if kind.include_nlogn_constant else 0.0
    if kind.include_nlogn_constant:
        objective = dc.add_scalar(objective, const)
    report = ObjectiveReport(recon.item(), prior.item(), objective.item(),
                             float(np.mean(_exact_kl_values(posteriors))), g.clamp_count, const)
    return objective, report


def aevb_objective(x, posteriors, decode, beta, noise, likelihood=GAUSSIAN, sigma_dec=0.1):
    """Per-sample reconstruction minus beta times the summed per-sample KL to N(0, I)."""
    if not beta > 0:
        raise dc.UsageError("beta must be positive")
    g = posteriors.means.graph
    recon = _recon_term(x, posteriors, decode, noise, likelihood, sigma_dec)
    kl = exact_kl_to_prior(posteriors.means, posteriors.log_vars)
    prior = dc.scale(dc.sum(kl), beta)
    objective = recon - prior
    report = ObjectiveReport(recon.item(), prior.item(), objective.item(),
                             float(np.mean(kl.value)), g.clamp_count)
    return objective, report


def build_objective(kind, x, posteriors, decode, noise, likelihood=GAUSSIAN, sigma_dec=0.1):
    if kind.variant == WISE_ALE:
        return wise_ale_objective(x, posteriors, decode, kind, noise, likelihood, sigma_dec)
    beta = kind.beta if kind.variant == BETA_VAE else 1.0
    return aevb_objective(x, posteriors, decode, beta, noise, likelihood, sigma_dec)


def full_recon_oracle(x, posteriors, decode, mc_samples, seed, likelihood=GAUSSIAN, sigma_dec=0.1):
    """Monte-Carlo estimate of sum_i E_{q_i}[(1/M) sum_j log p(x_j | z)].

    Costs M * S decodes, each scored against all M inputs, so M is capped at
    16. Evaluation only; never used as a training loss.
    """
    xv = np.asarray(x, dtype=np.float64)
    m = posteriors.size
    if m > ORACLE_MAX_BATCH:
        raise dc.UsageError(f"full_recon_oracle supports batches up to {ORACLE_MAX_BATCH}, got {m}")
    noise = shared_noise(seed, mc_samples, m, posteriors.d_z)
    mu, lv = posteriors.mu, posteriors.log_var
    total = 0.0
    for i in range(m):
        acc = None
        for s in range(mc_samples):
            z = sample_reparameterized(mu[i:i + 1], lv[i:i + 1], noise[s, i:i + 1])
            xhat = decode(z.value).value
            tiled = np.ascontiguousarray(np.broadcast_to(xhat, xv.shape))
            ll = recon_log_likelihood(xv, tiled, likelihood, sigma_dec).value
            term = ll.sum() / m
            acc = term if acc is None else acc + term
        total += float(acc * (1.0 / mc_samples))
    return total


def recon_gap_audit(x, posteriors, decode, mc_samples, seed, likelihood=GAUSSIAN, sigma_dec=0.1):
    """Full oracle vs the simplified per-sample estimate minus M log M, on the same draws."""
    m = posteriors.size
    oracle = full_recon_oracle(x, posteriors, decode, mc_samples, seed, likelihood, sigma_dec)
    g = dc.Graph()
    means = g.constant(posteriors.mu)
    log_vars = g.constant(posteriors.log_var)
    frozen = GaussianBatch(means, log_vars)
    noise = shared_noise(seed, mc_samples, m, posteriors.d_z)
    simplified = _recon_term(x, frozen, decode, noise, likelihood, sigma_dec).item() - m * math.log(m)
    return {"oracle": oracle, "simplified": simplified, "gap": abs(oracle - simplified)}
