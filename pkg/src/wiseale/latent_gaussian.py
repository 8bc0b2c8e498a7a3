"""Closed-form diagonal-Gaussian quantities for a batch of encoder posteriors.

A :class:`GaussianBatch` holds M factorial Gaussians; read as an equal-weight
mixture it is the batch's aggregate posterior. The analytic upper bound on
KL(mixture || N(0, I)) is differentiable through the tape engine, and
:func:`mc_kl_mixture_to_prior` is the sampling oracle it is certified against.
"""

import math
from dataclasses import dataclass

import numpy as np

from wiseale import diff_core as dc
from wiseale import kernels

LOG_2PI = math.log(2.0 * math.pi)
LOGVAR_MIN = -12.0
LOGVAR_MAX = 12.0


@dataclass(frozen=True)
class GaussianBatch:
    """Per-sample posteriors; ``means``/``log_vars`` are ``(M, d_z)`` nodes."""

    means: dc.Node
    log_vars: dc.Node
    clamp_count: int = 0

    @property
    def mu(self):
        return self.means.value

    @property
    def log_var(self):
        return self.log_vars.value

    @property
    def var(self):
        return np.exp(self.log_vars.value)

    @property
    def size(self):
        return self.means.shape[0]

    @property
    def d_z(self):
        return self.means.shape[1]


def gaussian_batch(means, log_vars):
    """Build a batch from arrays or nodes, clamping log-variances to [-12, 12]."""
    g = dc._graph_of((means, log_vars))
    means = dc.as_node(means, g)
    log_vars = dc.as_node(log_vars, g)
    if means.value.ndim != 2 or means.shape != log_vars.shape or means.shape[0] < 1 or means.shape[1] < 1:
        raise dc.ShapeError("gaussian_batch", means.shape, log_vars.shape)
    before = g.clamp_count
    log_vars = dc.clip(log_vars, LOGVAR_MIN, LOGVAR_MAX)
    return GaussianBatch(means, log_vars, g.clamp_count - before)


@dataclass(frozen=True)
class StandardPrior:
    """N(0, I) in ``d_z`` dimensions."""

    d_z: int

    def log_density(self, z):
        z = np.asarray(z, dtype=np.float64)
        return -0.5 * np.sum(z * z + LOG_2PI, axis=-1)


def _contiguous(batch):
    return np.ascontiguousarray(batch.mu), np.ascontiguousarray(batch.log_var)


def log_density_mixture(batch, z):
    """log of the equal-weight mixture density at one point (or rows of points)."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != batch.d_z:
        raise dc.UsageError(f"point has length {z.shape[-1]}, batch has d_z={batch.d_z}")
    mu, lv = _contiguous(batch)
    out = kernels.mixture_log_density(np.ascontiguousarray(z.reshape(-1, batch.d_z)), mu, lv)
    return float(out[0]) if z.ndim == 1 else out


def gaussian_overlap(batch, i, j):
    """Integral of q_i(z) q_j(z) dz, i.e. prod_k A^(-1/2) B."""
    m = batch.size
    if not (0 <= i < m and 0 <= j < m):
        raise IndexError(f"component index out of range for batch of {m}")
    var = batch.var
    s = var[i] + var[j]
    d = batch.mu[i] - batch.mu[j]
    return float(np.prod((2.0 * math.pi * s) ** -0.5 * np.exp(-0.5 * d * d / s)))


def kl_upper_bound(batch):
    """Analytic upper bound on KL(aggregate posterior || N(0, I)), as a scalar node.

    The cross-component term goes through log-sum-exp over log-overlaps, so
    it stays finite in high latent dimensions where the raw product underflows.
    """
    mu, lv = _contiguous(batch)
    value, dmu, dlv = kernels.kl_ub_value_grad(mu, lv)
    g = batch.means.graph
    return g.record("kl_upper_bound", (batch.means, batch.log_vars), np.asarray(value),
                    lambda gr: (gr * dmu, gr * dlv))


def exact_kl_to_prior(means, log_vars):
    """Per-sample KL(N(mu, diag(exp(log_var))) || N(0, I)), as an ``(M,)`` node."""
    g = dc._graph_of((means, log_vars))
    means = dc.as_node(means, g)
    log_vars = dc.as_node(log_vars, g)
    if means.shape != log_vars.shape:
        raise dc.ShapeError("exact_kl_to_prior", means.shape, log_vars.shape)
    inner = dc.square(means) + dc.exp(log_vars) - log_vars
    return dc.scale(dc.add_scalar(dc.sum(inner, axis=-1), -means.shape[-1]), 0.5)


def sample_reparameterized(means, log_vars, noise):
    """mu + exp(log_var / 2) * noise; the noise itself is a constant."""
    g = dc._graph_of((means, log_vars))
    means = dc.as_node(means, g)
    log_vars = dc.as_node(log_vars, g)
    noise = np.asarray(noise, dtype=np.float64)
    if means.shape != log_vars.shape or noise.shape != means.shape:
        raise dc.ShapeError("sample_reparameterized", means.shape, log_vars.shape, noise.shape)
    return means + dc.exp(dc.scale(log_vars, 0.5)) * noise


def sample_mixture(batch, n_samples, rng):
    """Draw from the mixture: uniform component, then its Gaussian."""
    comp = rng.integers(0, batch.size, size=n_samples)
    eps = rng.standard_normal((n_samples, batch.d_z))
    return batch.mu[comp] + np.exp(0.5 * batch.log_var[comp]) * eps


def mc_kl_mixture_to_prior(batch, n_samples, seed):
    """Monte-Carlo KL(mixture || N(0, I)); returns ``(estimate, std_error)``."""
    if n_samples < 1000:
        raise dc.UsageError("mc_kl_mixture_to_prior needs n_samples >= 1000")
    rng = np.random.default_rng(seed)
    z = sample_mixture(batch, n_samples, rng)
    mu, lv = _contiguous(batch)
    terms = kernels.mixture_log_density(z, mu, lv) - StandardPrior(batch.d_z).log_density(z)
    return float(terms.mean()), float(terms.std(ddof=1) / math.sqrt(n_samples))


def random_batch(rng, m, d_z, mu_range=(-3.0, 3.0), log_var_range=(-2.0, 1.0)):
    """Uniformly drawn batch used by the certification suites."""
    mu = rng.uniform(*mu_range, size=(m, d_z))
    lv = rng.uniform(*log_var_range, size=(m, d_z))
    return gaussian_batch(mu, lv)
