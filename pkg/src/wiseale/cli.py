"""Command-line entry point: ``wiseale <command> [flags]``.

Errors are reported as a single line ``error: <kind>: <message>`` on stderr
with exit status 2 for usage problems and 1 for everything else.

A ``--config`` file holds ``key = value`` lines whose keys are flag names
without the leading dashes (``latent-dim = 2``). Command-line flags win over
the file. Commands that write into a directory echo the resolved settings to
``config.txt`` there.

Repeat-run comparisons should mask the ``wall_ms`` column of metrics files;
every other byte of every output is a deterministic function of the inputs.
"""

import argparse
import os
import sys

import numpy as np

from wiseale import __version__, checks, report
from wiseale import diff_core as dc
from wiseale.datasets import (DatasetSpec, FormatError, generate_sine, load_dataset, load_mnist_idx, save_sine)
from wiseale.model import CheckpointError, decode, encode, load_checkpoint, mnist_architecture, sine_architecture
from wiseale.objectives import AEVB, BETA_VAE, VARIANTS, WISE_ALE, ObjectiveKind, recon_gap_audit
from wiseale.trainer import RunConfig, TrainingError, evaluate, train

AUDIT_BATCH = 8
AUDIT_SAMPLES = 64
COMPARE_BETA = 4.0


class CliError(Exception):
    def __init__(self, kind, message, code=1):
        super().__init__(message)
        self.kind = kind
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", f"{self.prog}: {message}", 2)


# ---------------------------------------------------------------------------
# flags and config files


def _add_data_flags(p):
    p.add_argument("--dataset", choices=("sine", "mnist"), default=None)
    p.add_argument("--count", type=int, default=None, help="training rows (default 20000 sine, 10000 mnist)")
    p.add_argument("--eval-count", type=int, default=None, help="held-out rows (default 2000)")
    p.add_argument("--data-seed", type=int, default=None, help="sine generator seed (default 0)")
    p.add_argument("--mnist-dir", default=None, help="directory holding the MNIST IDX files")


def _add_train_flags(p):
    p.add_argument("--objective", choices=VARIANTS, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--latent-dim", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default=None)
    p.add_argument("--mc-samples", type=int, default=None)
    p.add_argument("--include-nlogn", choices=("true", "false"), default=None)
    p.add_argument("--seed", type=int, default=None)


DEFAULTS = {
    "dataset": "sine", "count": None, "eval_count": 2000, "data_seed": 0, "mnist_dir": None,
    "objective": WISE_ALE, "beta": None, "latent_dim": None, "batch_size": 64, "epochs": 20, "lr": 1e-3,
    "optimizer": "adam", "mc_samples": 1, "include_nlogn": "false", "seed": 0,
}


def read_config(path):
    """Flat ``key = value`` file -> dict keyed like argparse dests."""
    out = {}
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as exc:
        raise CliError("io", f"cannot read config {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError("usage", f"{path}:{lineno}: expected key = value", 2)
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _coerce(key, value, parser):
    for action in parser._actions:
        if action.dest == key:
            try:
                value = action.type(value) if action.type else value
            except ValueError:
                raise CliError("usage", f"config key {key!r}: bad value {value!r}", 2) from None
            if action.choices and value not in action.choices:
                raise CliError("usage", f"config key {key!r}: {value!r} not in {', '.join(action.choices)}", 2)
            return value
    raise CliError("usage", f"unknown config key {key!r}", 2)


def resolve(args, parser, keys):
    """Defaults < config file < explicit flags, restricted to ``keys``."""
    settings = {k: DEFAULTS.get(k) for k in keys}
    if getattr(args, "config", None):
        for key, value in read_config(args.config).items():
            if key not in keys:
                raise CliError("usage", f"config key {key!r} does not apply to {parser.prog}", 2)
            settings[key] = _coerce(key, value, parser)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def write_resolved(settings, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w") as f:
        for key in sorted(settings):
            value = settings[key]
            if value is not None:
                f.write(f"{key.replace('_', '-')} = {value}\n")


DATA_KEYS = ("dataset", "count", "eval_count", "data_seed", "mnist_dir")
TRAIN_KEYS = DATA_KEYS + ("objective", "beta", "latent_dim", "batch_size", "epochs", "lr", "optimizer",
                          "mc_samples", "include_nlogn", "seed")


def dataset_spec(s):
    count = s["count"] if s["count"] is not None else (20000 if s["dataset"] == "sine" else 10000)
    try:
        return DatasetSpec(kind=s["dataset"], count=count, seed=s["data_seed"], eval_count=s["eval_count"],
                           path=s["mnist_dir"])
    except ValueError as exc:
        raise CliError("usage", str(exc), 2) from None


def _arch(s):
    if s["dataset"] == "sine":
        return sine_architecture(s["latent_dim"] or 8)
    return mnist_architecture(s["latent_dim"] or 2)


def _objective(s, beta=None):
    variant = s["objective"]
    beta = beta if beta is not None else s["beta"]
    if variant == BETA_VAE and beta is None:
        raise CliError("usage", "--objective beta-vae requires --beta", 2)
    if variant != BETA_VAE and beta is not None:
        raise CliError("usage", "--beta only applies to --objective beta-vae", 2)
    return ObjectiveKind(variant, beta=beta if variant == BETA_VAE else 1.0, mc_samples=s["mc_samples"],
                         include_nlogn_constant=s["include_nlogn"] == "true")


def _load_data(spec):
    try:
        return load_dataset(spec)
    except FileNotFoundError as exc:
        raise CliError("io", str(exc)) from None


def _checkpoint(path):
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise CliError("io", f"no checkpoint at {path}") from None


def _echo(line):
    sys.stdout.write(line + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args, parser):
    s = resolve(args, parser, DATA_KEYS)
    spec = dataset_spec(s)
    if spec.kind == "sine":
        data = generate_sine(spec.count + spec.eval_count, spec.seed)
        save_sine(data, args.out)
        _echo(f"wrote {data.x.shape[0]} sine waves to {args.out}")
        return 0
    if spec.path is None:
        raise CliError("usage", "--dataset mnist requires --mnist-dir", 2)
    counts = []
    for split in ("train", "test"):
        try:
            x, _ = load_mnist_idx(spec.path, split)
        except FileNotFoundError as exc:
            raise CliError("io", str(exc)) from None
        counts.append(x.shape[0])
    with open(args.out, "w") as f:
        f.write(f"mnist_dir = {os.path.abspath(spec.path)}\ntrain_images = {counts[0]}\ntest_images = {counts[1]}\n")
    _echo(f"validated MNIST IDX files: {counts[0]} train, {counts[1]} test")
    return 0


def _run_config(s, kind, out_dir):
    try:
        return RunConfig(dataset=dataset_spec(s), objective=kind, arch=_arch(s), optimizer=s["optimizer"],
                         lr=s["lr"], batch_size=s["batch_size"], epochs=s["epochs"], seed=s["seed"],
                         out_dir=out_dir)
    except dc.UsageError as exc:
        raise CliError("usage", str(exc), 2) from None


def cmd_train(args, parser):
    s = resolve(args, parser, TRAIN_KEYS)
    kind = _objective(s)
    config = _run_config(s, kind, args.out)
    data = _load_data(config.dataset)
    write_resolved(s, args.out)
    result = train(config, data)
    last = result.metrics[-1] if result.metrics else None
    _echo(f"trained {kind.label}: {len(result.metrics)} steps"
          + (f", final objective {last.objective:.6g}" if last else ""))
    return 0


def cmd_eval(args, parser):
    s = resolve(args, parser, DATA_KEYS + ("objective", "beta", "seed", "mc_samples", "include_nlogn"))
    params = _checkpoint(args.checkpoint)
    kind = _objective(s)
    data = _load_data(dataset_spec(s))
    try:
        rec = evaluate(params, data, kind, s["seed"])
    except dc.UsageError as exc:
        raise CliError("usage", str(exc), 2) from None
    for key, value in rec.as_dict().items():
        _echo(f"{key} = {value!r}")
    if args.out:
        report.write_table(args.out, list(rec.as_dict()), [list(rec.as_dict().values())])
    return 0


def _display_split(data, split):
    if split == "eval":
        return data.eval_x, data.eval_labels
    return data.train_x, data.train_labels


def cmd_embed(args, parser):
    s = resolve(args, parser, DATA_KEYS + ("seed",))
    params = _checkpoint(args.checkpoint)
    data = _load_data(dataset_spec(s))
    x, labels = _display_split(data, args.split)
    try:
        csv_path = report.embed_scatter(params, x, args.out, labels=labels, n_points=args.n, seed=s["seed"])
    except dc.UsageError as exc:
        raise CliError("usage", str(exc), 2) from None
    _, rows = report.read_table(csv_path)
    sigma = float(np.mean([[r[2], r[3]] for r in rows]))
    _echo(f"wrote {args.out} and {csv_path}; mean posterior sigma {sigma!r}")
    return 0


def cmd_curves(args, parser):
    try:
        report.training_curves(args.metrics, args.out, labels=args.labels, max_points=args.max_points)
    except report.FormatError as exc:
        raise CliError("format", str(exc)) from None
    except FileNotFoundError as exc:
        raise CliError("io", f"no such file {exc.filename}") from None
    _echo(f"wrote {args.out}")
    return 0


def cmd_recon(args, parser):
    s = resolve(args, parser, DATA_KEYS)
    params = _checkpoint(args.checkpoint)
    data = _load_data(dataset_spec(s))
    x, _ = _display_split(data, args.split)
    try:
        indices = [int(i) for i in args.indices.split(",") if i.strip()]
    except ValueError:
        raise CliError("usage", f"--indices must be comma-separated integers, got {args.indices!r}", 2) from None
    try:
        report.recon_strip(params, x, indices, args.out, kind=data.kind)
    except dc.UsageError as exc:
        raise CliError("usage", str(exc), 2) from None
    _echo(f"wrote {args.out}")
    return 0


def cmd_check_grad(args, parser):
    results = checks.grad_suite(tolerance=args.tolerance, seed=args.seed)
    ok = True
    _echo("check,coordinates,max_rel_err,status")
    for name, rep in results:
        ok &= rep.passed
        _echo(f"{name},{rep.n_checked},{rep.max_rel_err:.3e},{'pass' if rep.passed else 'FAIL'}")
    worst = max(rep.max_rel_err for _, rep in results)
    _echo(f"overall max relative error {worst:.3e} (tolerance {args.tolerance:g}): {'pass' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_check_kl(args, parser):
    if args.samples < 1000 or args.trials < 1:
        raise CliError("usage", "--samples must be >= 1000 and --trials >= 1", 2)
    rows = checks.kl_trials(args.trials, args.samples, args.seed)
    table = checks.format_kl_table(rows)
    sys.stdout.write(table)
    if args.out:
        with open(args.out, "w") as f:
            f.write(table)
    held = sum(r.holds for r in rows)
    need = checks.kl_pass_threshold(args.trials)
    _echo(f"upper bound >= MC - 3 stderr in {held}/{args.trials} trials (need {need}): "
          f"{'pass' if held >= need else 'FAIL'}")
    return 0 if held >= need else 1


SUMMARY_HEADER = ["objective", "eval_recon_error", "eval_mean_sigma", "eval_aevb_kl", "eval_elbo_proxy",
                  "final_epoch_elbo_proxy", "final_epoch_recon_term", "gap_oracle", "gap_simplified", "gap_abs"]


def gap_audit(params, x, seed):
    """Full-reconstruction oracle vs simplified estimate on the first ``AUDIT_BATCH`` rows."""
    rows = x[:AUDIT_BATCH]
    post = encode(params, rows)
    return recon_gap_audit(rows, post, lambda z: decode(params, z), AUDIT_SAMPLES, seed,
                           params.arch.likelihood, params.arch.sigma_dec)


def cmd_compare(args, parser):
    s = resolve(args, parser, TRAIN_KEYS)
    s["objective"] = None
    beta = s["beta"] if s["beta"] is not None else COMPARE_BETA
    data = _load_data(dataset_spec(s))
    os.makedirs(args.out, exist_ok=True)
    write_resolved(dict(s, beta=beta), args.out)
    kinds = [ObjectiveKind(WISE_ALE, mc_samples=s["mc_samples"], include_nlogn_constant=s["include_nlogn"] == "true"),
             ObjectiveKind(AEVB, mc_samples=s["mc_samples"]),
             ObjectiveKind(BETA_VAE, beta=beta, mc_samples=s["mc_samples"])]
    rows, metric_paths, labels = [], [], []
    for kind in kinds:
        run_dir = os.path.join(args.out, kind.variant)
        result = train(_run_config(s, kind, run_dir), data)
        ev = evaluate(result.params, data, kind, s["seed"])
        last_epoch = result.metrics[-1].epoch if result.metrics else None
        last = [r for r in result.metrics if r.epoch == last_epoch]
        final_elbo = float(np.mean([r.elbo_proxy for r in last])) if last else float("nan")
        final_recon = float(np.mean([r.recon_term for r in last])) if last else float("nan")
        audit = gap_audit(result.params, data.eval_x, s["seed"])
        rows.append([kind.label, ev.recon_error, ev.mean_sigma, ev.aevb_kl, ev.elbo_proxy, final_elbo, final_recon,
                     audit["oracle"], audit["simplified"], audit["gap"]])
        metric_paths.append(os.path.join(run_dir, "metrics.csv"))
        labels.append(kind.label)
        _echo(f"{kind.label}: eval recon error {ev.recon_error:.6g}, mean sigma {ev.mean_sigma:.4g}")
    report.training_curves(metric_paths, os.path.join(args.out, "curves.svg"), labels=labels)
    report.write_table(os.path.join(args.out, "summary.csv"), SUMMARY_HEADER, rows)
    with open(os.path.join(args.out, "summary.md"), "w") as f:
        f.write(report.summary_markdown(SUMMARY_HEADER, rows))
    _echo(f"wrote {args.out}/summary.csv, summary.md and curves.svg")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = _Parser(prog="wiseale", description="Auto-encoders with a per-sample or aggregate-posterior prior "
                                                 "penalty, trained and audited from the command line.")
    parser.add_argument("--version", action="version", version=f"wiseale {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    p = sub.add_parser("gen-data", help="generate the sine cache or validate MNIST IDX files")
    _add_data_flags(p)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one objective")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="run directory (metrics.csv, checkpoint.bin, config.txt)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the held-out split")
    _add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--objective", choices=VARIANTS, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--mc-samples", type=int, default=None)
    p.add_argument("--include-nlogn", choices=("true", "false"), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config")
    p.add_argument("--out", help="optional CSV for the evaluation record")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("embed", help="2-D posterior ellipse scatter")
    _add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--split", choices=("eval", "train"), default="eval")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("curves", help="training curves from metrics files")
    p.add_argument("--metrics", nargs="+", required=True)
    p.add_argument("--labels", nargs="+")
    p.add_argument("--max-points", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("recon", help="input vs reconstruction strip")
    _add_data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--indices", required=True, help="comma-separated row indices")
    p.add_argument("--split", choices=("eval", "train"), default="eval")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("check-grad", help="finite-difference gradient certification")
    p.add_argument("--tolerance", type=float, default=checks.GRAD_TOLERANCE)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check_grad)

    p = sub.add_parser("check-kl", help="Monte-Carlo certification of the KL upper bound")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="optional CSV copy of the trial table")
    p.set_defaults(func=cmd_check_kl)

    p = sub.add_parser("compare", help="train all three objectives and tabulate")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)
    return parser, sub


def main(argv=None):
    parser, sub = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if not getattr(args, "command", None):
            raise CliError("usage", f"missing command; choose from {', '.join(sub.choices)}", 2)
        if extra:
            valid = sorted(o for a in sub.choices[args.command]._actions for o in a.option_strings)
            raise CliError("usage", f"unrecognized arguments {' '.join(extra)}; valid options for "
                                    f"{args.command}: {' '.join(valid)}", 2)
        return args.func(args, sub.choices[args.command])
    except CliError as exc:
        err = exc
    except (FormatError, report.FormatError, CheckpointError) as exc:
        err = CliError("format", str(exc))
    except (dc.UsageError, ValueError) as exc:
        err = CliError("usage" if isinstance(exc, dc.UsageError) else "value", str(exc), 2)
    except TrainingError as exc:
        err = CliError("training", f"{exc} (step {exc.step})")
    except OSError as exc:
        err = CliError("io", f"{exc.strerror or exc}: {exc.filename or ''}".rstrip(": "))
    sys.stderr.write(f"error: {err.kind}: {' '.join(str(err).split())}\n")
    return err.code


if __name__ == "__main__":
    sys.exit(main())
