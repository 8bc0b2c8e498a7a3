"""Certification suites behind ``check-grad`` and ``check-kl``."""

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from wiseale import diff_core as dc
from wiseale.latent_gaussian import (exact_kl_to_prior, gaussian_batch, kl_upper_bound, mc_kl_mixture_to_prior,
                                     random_batch)
from wiseale.model import GAUSSIAN, Architecture, Bound, decode, encode, init_params
from wiseale.objectives import ObjectiveKind, build_objective

GRAD_TOLERANCE = 1e-4


# ---------------------------------------------------------------------------
# gradients


def _op_cases():
    rng = np.random.default_rng(11)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    row = rng.normal(size=(4,))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    mu = rng.normal(size=(5, 3))
    lv = rng.uniform(-1.0, 0.5, size=(5, 3))
    return [
        ("matmul", {"a": a, "b": b}, lambda p: dc.sum(dc.tanh(dc.matmul(p["a"], p["b"])))),
        ("add-broadcast", {"a": a, "r": row}, lambda p: dc.sum(dc.square(dc.add(p["a"], p["r"])))),
        ("sub-broadcast", {"a": a, "r": row}, lambda p: dc.sum(dc.square(dc.sub(p["r"], p["a"])))),
        ("mul-broadcast", {"a": a, "r": row}, lambda p: dc.sum(dc.tanh(dc.mul(p["a"], p["r"])))),
        ("sigmoid", {"a": a}, lambda p: dc.sum(dc.square(dc.sigmoid(p["a"])))),
        ("exp", {"a": a}, lambda p: dc.mean(dc.exp(dc.scale(p["a"], 0.5)))),
        ("log", {"a": pos}, lambda p: dc.sum(dc.square(dc.log(p["a"])))),
        ("concat", {"a": a, "c": pos}, lambda p: dc.sum(dc.tanh(dc.concat([p["a"], p["c"]])))),
        ("transpose", {"a": a, "b": b}, lambda p: dc.sum(dc.square(dc.matmul(dc.transpose(p["b"]),
                                                                              dc.transpose(p["a"]))))),
        ("mean-axis", {"a": a}, lambda p: dc.sum(dc.square(dc.mean(p["a"], axis=0)))),
        ("exact-kl", {"mu": mu, "lv": lv}, lambda p: dc.sum(exact_kl_to_prior(p["mu"], p["lv"]))),
        ("kl-upper-bound", {"mu": mu, "lv": lv}, lambda p: kl_upper_bound(gaussian_batch(p["mu"], p["lv"]))),
    ]


def grad_check_model(d_x=6, d_z=2, hidden=8, batch=3, seed=0):
    """Small Gaussian-decoder model, batch and fixed noise used by the objective checks."""
    arch = Architecture(d_x=d_x, d_z=d_z, enc_hidden=(hidden,), likelihood=GAUSSIAN, sigma_dec=0.1)
    params = init_params(arch, seed)
    rng = np.random.default_rng([seed, 1])
    x = rng.normal(size=(batch, d_x))
    noise = rng.standard_normal((1, batch, d_z))
    return arch, params, x, noise


def objective_loss(arch, x, kind, noise):
    """``{name: Node} -> scalar`` negated objective for :func:`diff_core.finite_diff_check`."""
    def loss(nodes):
        bound = Bound(arch, OrderedDict(nodes))
        post = encode(bound, x)
        obj, _ = build_objective(kind, x, post, lambda z: decode(bound, z), noise, arch.likelihood, arch.sigma_dec)
        return dc.neg(obj)
    return loss


def grad_suite(tolerance=GRAD_TOLERANCE, seed=0):
    """Run every per-op case plus the three objectives; returns ``[(name, CheckReport)]``."""
    results = []
    for name, params, fn in _op_cases():
        results.append((f"op:{name}", dc.finite_diff_check(fn, params, tolerance=tolerance, seed=seed)))
    arch, params, x, noise = grad_check_model(seed=seed)
    for kind in (ObjectiveKind("wise-ale"), ObjectiveKind("aevb"), ObjectiveKind("beta-vae", beta=4.0)):
        report = dc.finite_diff_check(objective_loss(arch, x, kind, noise), dict(params),
                                      tolerance=tolerance, seed=seed)
        results.append((f"objective:{kind.label}", report))
    return results


# ---------------------------------------------------------------------------
# KL upper bound vs Monte Carlo


@dataclass
class KLTrial:
    trial: int
    m: int
    d_z: int
    upper_bound: float
    mc: float
    stderr: float

    @property
    def holds(self):
        return self.upper_bound >= self.mc - 3.0 * self.stderr


def kl_trials(trials=100, samples=100_000, seed=0, max_m=8, max_d_z=4):
    """Random batches (M <= max_m, d_z <= max_d_z); analytic bound vs MC KL estimate."""
    out = []
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        m = int(rng.integers(1, max_m + 1))
        d_z = int(rng.integers(1, max_d_z + 1))
        batch = random_batch(rng, m, d_z)
        ub = kl_upper_bound(batch).item()
        mc, se = mc_kl_mixture_to_prior(batch, samples, seed=int(rng.integers(2 ** 31)))
        out.append(KLTrial(t, m, d_z, ub, mc, se))
    return out


def kl_pass_threshold(trials):
    return math.ceil(0.99 * trials)


def format_kl_table(rows):
    lines = ["trial,m,d_z,upper_bound,mc,stderr,holds"]
    lines += [f"{r.trial},{r.m},{r.d_z},{r.upper_bound:.10f},{r.mc:.10f},{r.stderr:.10f},{int(r.holds)}"
              for r in rows]
    return "\n".join(lines) + "\n"
