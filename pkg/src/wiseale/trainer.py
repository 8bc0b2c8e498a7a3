"""Mini-batch stochastic gradient ascent on the auto-encoder objectives.

Each epoch draws a seeded permutation, drops the final short batch, and for
every batch: encode, reparameterise, decode, assemble the objective, run the
reverse sweep and take one optimizer step on the negated objective.
"""

import csv
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from wiseale import diff_core as dc
from wiseale import kernels
from wiseale.datasets import DatasetSpec, load_dataset
from wiseale.model import BERNOULLI, Architecture, ModelParams, decode, encode, init_params, save_checkpoint
from wiseale.objectives import WISE_ALE, ObjectiveKind, build_objective

METRICS_HEADER = ["epoch", "step", "recon_term", "prior_term", "objective", "aevb_kl", "elbo_proxy",
                  "wall_ms", "clamp_count"]


class TrainingError(RuntimeError):
    def __init__(self, message, step=None, last_metrics=None):
        super().__init__(message)
        self.step = step
        self.last_metrics = last_metrics


# ---------------------------------------------------------------------------
# optimizers


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, hyper):
    """One bias-corrected Adam update minimising along ``grads``.

    Returns new ``(params, state)``; the inputs are left untouched.
    """
    t = state.t + 1
    bc1 = 1.0 - hyper.beta1 ** t
    bc2 = 1.0 - hyper.beta2 ** t
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = np.ascontiguousarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise dc.ShapeError("adam_step", p.shape, g.shape)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m, v = np.zeros_like(p), np.zeros_like(p)
        new_params[name], m_new[name], v_new[name] = kernels.adam_update(
            np.ascontiguousarray(p), g, m, v, hyper.lr, hyper.beta1, hyper.beta2, hyper.eps, bc1, bc2)
    return _like(params, new_params), AdamState(m_new, v_new, t)


def _like(params, arrays):
    if isinstance(params, ModelParams):
        return ModelParams(params.arch, arrays)
    return arrays


def sgd_step(params, grads, state, hyper):
    new_params = {name: p - hyper.lr * grads[name] for name, p in params.items()}
    return _like(params, new_params), AdamState(state.m, state.v, state.t + 1)


# ---------------------------------------------------------------------------
# run configuration and metrics


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetSpec
    objective: ObjectiveKind
    arch: Architecture
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    out_dir: str = None

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise dc.UsageError(f"unknown optimizer {self.optimizer!r}")
        if not self.lr >= 0:
            raise dc.UsageError("lr must be >= 0")
        min_batch = 2 if self.objective.variant == WISE_ALE else 1
        if self.batch_size < min_batch:
            raise dc.UsageError(f"batch_size must be >= {min_batch} for {self.objective.variant}")
        if self.epochs < 0:
            raise dc.UsageError("epochs must be >= 0")
        if self.arch.d_x != self.dataset.d_x:
            raise dc.UsageError(f"architecture d_x={self.arch.d_x} but dataset has d_x={self.dataset.d_x}")

    @property
    def hyper(self):
        return AdamHyper(self.lr, self.beta1, self.beta2, self.eps)


@dataclass
class MetricsRecord:
    epoch: int
    step: int
    recon_term: float
    prior_term: float
    objective: float
    aevb_kl: float
    elbo_proxy: float
    wall_ms: float
    clamp_count: int

    def row(self):
        return [str(self.epoch), str(self.step)] + [
            repr(float(getattr(self, k))) for k in ("recon_term", "prior_term", "objective", "aevb_kl", "elbo_proxy")
        ] + [f"{self.wall_ms:.3f}", str(self.clamp_count)]


def write_metrics_header(path):
    with open(path, "w", newline="") as f:
        csv.writer(f, lineterminator="\n").writerow(METRICS_HEADER)


def append_metrics(path, records):
    with open(path, "a", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for r in records:
            w.writerow(r.row())
        f.flush()
        os.fsync(f.fileno())


@dataclass
class TrainResult:
    params: object
    metrics: list
    seen_index: np.ndarray
    eval_index: np.ndarray


def _batch_objective(params, x, kind, noise):
    g = dc.Graph()
    bound = params.bind(g)
    post = encode(bound, x)
    arch = params.arch
    obj, report = build_objective(kind, x, post, lambda z: decode(bound, z), noise,
                                  arch.likelihood, arch.sigma_dec)
    return bound, obj, report


def train(config, data=None):
    """Train from ``config``; ``data`` (a loaded :class:`Dataset`) skips reloading.

    Writes ``metrics.csv`` and ``checkpoint.bin`` under ``config.out_dir``
    when it is set. Deterministic given the config.
    """
    data = data if data is not None else load_dataset(config.dataset)
    if np.intersect1d(data.train_index, data.eval_index).size:
        raise TrainingError("evaluation rows overlap the training rows")
    if data.d_x != config.arch.d_x:
        raise dc.UsageError(f"dataset d_x={data.d_x} does not match architecture d_x={config.arch.d_x}")

    n, m = data.train_x.shape[0], config.batch_size
    steps_per_epoch = n // m
    if steps_per_epoch < 1 and config.epochs > 0:
        raise dc.UsageError(f"batch_size {m} exceeds the {n} training rows")

    kind = config.objective
    params = init_params(config.arch, config.seed)
    state = AdamState()
    step_fn = adam_step if config.optimizer == "adam" else sgd_step
    shuffle_rng = np.random.default_rng([config.seed, 0])
    noise_rng = np.random.default_rng([config.seed, 1])

    metrics_path = ckpt_path = None
    if config.out_dir:
        metrics_path = os.path.join(config.out_dir, "metrics.csv")
        ckpt_path = os.path.join(config.out_dir, "checkpoint.bin")
        try:
            os.makedirs(config.out_dir, exist_ok=True)
            write_metrics_header(metrics_path)
        except OSError as exc:
            raise TrainingError(f"could not write to {config.out_dir}: {exc}") from exc

    metrics, seen, step = [], np.zeros(n, dtype=bool), 0
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        epoch_records = []
        for b in range(steps_per_epoch):
            idx = order[b * m:(b + 1) * m]
            seen[idx] = True
            x = data.train_x[idx]
            noise = noise_rng.standard_normal((kind.mc_samples, m, config.arch.d_z))
            t0 = time.perf_counter()
            try:
                bound, obj, rep = _batch_objective(params, x, kind, noise)
                by_id = dc.backward(dc.neg(obj))
            except (dc.NumericError, dc.DomainError) as exc:
                raise TrainingError(f"non-finite objective at step {step}: {exc}", step,
                                    metrics[-1] if metrics else None) from exc
            grads = {k: by_id[node.id] for k, node in bound.nodes.items()}
            params, state = step_fn(params, grads, state, config.hyper)
            aevb_kl = rep.per_sample_kl_mean * m
            rec = MetricsRecord(epoch, step, rep.recon_term, rep.prior_term, rep.objective, aevb_kl,
                                rep.recon_term - aevb_kl, (time.perf_counter() - t0) * 1000.0, rep.clamp_count)
            if not all(math.isfinite(v) for v in (rec.recon_term, rec.prior_term, rec.objective)):
                raise TrainingError(f"non-finite objective at step {step}", step, metrics[-1] if metrics else None)
            epoch_records.append(rec)
            step += 1
        metrics.extend(epoch_records)
        if metrics_path:
            try:
                append_metrics(metrics_path, epoch_records)
                save_checkpoint(params, ckpt_path)
            except OSError as exc:
                raise TrainingError(f"could not write to {config.out_dir}: {exc}") from exc

    if ckpt_path and config.epochs == 0:
        save_checkpoint(params, ckpt_path)
    seen_index = data.train_index[seen]
    return TrainResult(params, metrics, seen_index, data.eval_index)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalRecord:
    recon_error: float
    recon_term: float
    prior_term: float
    aevb_kl: float
    elbo_proxy: float
    mean_sigma: float
    n: int

    def as_dict(self):
        return asdict(self)


def evaluate(params, data, kind, seed, split="eval", batch_size=64):
    """Aggregate metrics on one split without touching ``params``.

    ``recon_error`` is the mean squared error against the noiseless wave for
    sine data and the Bernoulli negative log-likelihood per image for MNIST.
    ``recon_term``, ``aevb_kl`` and ``elbo_proxy`` are per-sample means;
    ``prior_term`` is the objective's prior penalty averaged over batches.
    """
    x_all = data.eval_x if split == "eval" else data.train_x
    target = data.eval_target if split == "eval" else data.train_target
    arch = params.arch
    if x_all.shape[1] != arch.d_x:
        raise dc.UsageError(f"checkpoint expects d_x={arch.d_x}, dataset has {x_all.shape[1]}")
    rng = np.random.default_rng(seed)
    n = x_all.shape[0]
    sq_err = recon = kl = sigma = 0.0
    priors = []
    for start in range(0, n, batch_size):
        x = x_all[start:start + batch_size]
        noise = rng.standard_normal((kind.mc_samples, x.shape[0], arch.d_z))
        _, obj, rep = _batch_objective(params, x, kind, noise)
        recon += rep.recon_term
        kl += rep.per_sample_kl_mean * x.shape[0]
        priors.append(rep.prior_term)
        post = encode(params, x)
        sigma += float(np.exp(0.5 * post.log_var).mean(axis=1).sum())
        if arch.likelihood != BERNOULLI:
            z = post.mu + np.exp(0.5 * post.log_var) * noise[0]
            xhat = decode(params, z).value
            sq_err += float(np.sum(np.mean((xhat - target[start:start + batch_size]) ** 2, axis=1)))
    recon_error = -recon / n if arch.likelihood == BERNOULLI else sq_err / n
    return EvalRecord(recon_error, recon / n, float(np.mean(priors)), kl / n, (recon - kl) / n, sigma / n, n)
