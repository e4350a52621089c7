"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 validation or verification failure,
3 numeric failure (non-finite values, blow-up).
"""

from __future__ import annotations

import argparse
import os
import sys

from .ablation import ablation_suite
from .autodiff import NonFiniteError
from .config import ConfigError, RunConfig, describe_keys
from .data import BlowUpError, DatasetFormatError, load_dataset, make_advection_dataset, save_dataset
from .fno import ActFno, count_parameters, reference_config
from .images import emit_field_images
from .training import (
    TrainingAborted,
    evaluate,
    format_records,
    load_checkpoint,
    rollout,
    save_checkpoint,
)
from .verify import appendix_c_suite, chain_rule_suite, model_grad_check

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3

# published component counts for the reference configuration
REFERENCE_COUNTS = {
    "vanilla": {"total": 16_829_634, "lifting": 9_408, "blocks.0": 4_202_912, "projection": 8_578},
    "act": {"total": 16_874_666, "lifting": 9_408, "blocks.0": 4_202_912, "projection": 8_578,
            "acts.0": 11_258, "acts.0.value_proj": 4_160, "acts.0.disp_branches": 2_760,
            "acts.0.disp_fuse": 50, "acts.0.out_proj": 4_160, "acts.0.norm": 128},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _echo(cfg):
    return "".join(f"# {line}\n" for line in cfg.to_text().splitlines())


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def cmd_gen_data(args, cfg):
    ds = make_advection_dataset(cfg["data.n_traj"], cfg["data.size"], cfg["data.steps"],
                                cfg["data.seed"], cfg["data.max_speed"], cfg["data.max_mode"])
    save_dataset(ds, args.out)
    print(f"wrote {len(ds.trajectories)} trajectories to {args.out}")
    return EXIT_OK


def cmd_train(args, cfg):
    ds = load_dataset(args.data)
    if ds.normalizer is None:
        ds.fit_normalizer()
    spec = cfg.window_spec()
    X, y = ds.windows("train", spec)
    Xv = yv = None
    if ds.splits.get("val"):
        Xv, yv = ds.windows("val", spec)
    est = cfg.estimator().initialize(X.shape[1], y.shape[1])
    os.makedirs(args.out_dir, exist_ok=True)
    echo = "# run config\n" + cfg.to_text()
    every = cfg["train.checkpoint_every"]
    try:
        for _ in range(cfg["train.epochs"]):
            est.continue_fit(X, y, 1, Xv, yv)
            if every and est.epochs_done_ % every == 0:
                save_checkpoint(est, os.path.join(args.out_dir, f"epoch{est.epochs_done_:04d}.actc"), echo)
    except TrainingAborted as exc:
        est.model_.load_state_dict(exc.state)
        save_checkpoint(est, os.path.join(args.out_dir, "aborted.actc"), echo)
        print(f"training aborted at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    save_checkpoint(est, os.path.join(args.out_dir, "final.actc"), echo)
    rows = [(str(i), "train_loss", v) for i, v in enumerate(est.loss_curve_)]
    rows += [(str(e), "val_nrmse", v) for e, v in est.val_curve_]
    _write(os.path.join(args.out_dir, "loss.tsv"), _echo(cfg) + format_records(rows))
    print(f"trained {est.epochs_done_} epochs, final loss {est.loss_curve_[-1] if est.loss_curve_ else float('nan'):.6g}")
    return EXIT_OK


def cmd_eval(args, cfg):
    est = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    if ds.normalizer is None:
        ds.fit_normalizer()
    split = args.split or cfg["eval.split"]
    X, y = ds.windows(split, cfg.window_spec())
    report = evaluate(est, X, y, ds.normalizer, keep_predictions=args.images is not None)
    _write(args.out, _echo(cfg) + format_records(report.records()))
    if args.images:
        emit_field_images(report, args.images, split, limit=args.max_images)
    return EXIT_OK


def cmd_rollout(args, cfg):
    est = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    if ds.normalizer is None:
        ds.fit_normalizer()
    split = args.split or cfg["eval.split"]
    trajs = ds.split(split)
    idx = cfg["eval.trajectory"] if args.trajectory is None else args.trajectory
    if not 0 <= idx < len(trajs):
        raise ValueError(f"trajectory index {idx} out of range for split {split!r} ({len(trajs)})")
    horizon = args.horizon or cfg["eval.horizon"]
    report = rollout(est, trajs[idx], horizon, ds.normalizer, spec=cfg.window_spec())
    _write(args.out, _echo(cfg) + format_records(report.records()))
    return EXIT_OK


def cmd_ablate(args, cfg):
    ds = load_dataset(args.data)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    report = ablation_suite(cfg.estimator(), ds, seeds=seeds, spec=cfg.window_spec(),
                            log=lambda line: print(line, file=sys.stderr))
    _write(args.out, _echo(cfg) + report.to_text())
    order = report.ordering()
    print("ordering (best first): " + " < ".join(order), file=sys.stderr)
    return EXIT_OK


def cmd_verify(args, cfg):
    rows = []
    if args.suite in ("appendix-c", "all"):
        rows += appendix_c_suite()
    if args.suite in ("chain-rule", "all"):
        rows += chain_rule_suite()
    if args.suite in ("gradients", "all"):
        for name, err in model_grad_check(seed=args.seed).items():
            rows.append((f"grad/{name}", err, err < 1e-4))
    records = [("pass" if ok else "FAIL", name, value) for name, value, ok in rows]
    _write(args.out, format_records(records))
    failed = [r for r in rows if not r[2]]
    print(f"{len(rows) - len(failed)}/{len(rows)} checks passed", file=sys.stderr)
    return EXIT_INVALID if failed else EXIT_OK


def cmd_params(args, cfg):
    if args.reference_fno or args.reference_fno_act:
        placement = "none" if args.reference_fno else "all"
        model = ActFno(reference_config(placement))
        expected = REFERENCE_COUNTS["vanilla" if args.reference_fno else "act"]
    else:
        est = cfg.estimator()
        model = ActFno(est.fno_config(args.in_channels, args.out_channels))
        expected = {}
    counts = count_parameters(model)
    for name, n in counts.items():
        if name != "total":
            print(f"{name}\t{n}")
    mismatched = {k: (counts.get(k), v) for k, v in expected.items() if counts.get(k) != v}
    if not args.reference_fno and expected:
        overhead = counts["total"] - REFERENCE_COUNTS["vanilla"]["total"]
        print(f"act_overhead\t{overhead}")
        if overhead != 45_032:
            mismatched["act_overhead"] = (overhead, 45_032)
    print(f"total\t{counts['total']}")
    for k, (got, want) in mismatched.items():
        print(f"mismatch {k}: got {got}, expected {want}", file=sys.stderr)
    return EXIT_INVALID if mismatched else EXIT_OK


def build_parser():
    keys = "config keys (flat 'key = value' file, '#' comments):\n" + describe_keys()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="actfno", description="FNO with adaptive coordinate transforms.",
                     epilog=keys, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def add(name, help_text, func):
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=keys, formatter_class=fmt)
        p.add_argument("--config", help="run config file (defaults apply to missing keys)")
        p.set_defaults(func=func)
        return p

    p = add("gen-data", "generate a 2D advection dataset file", cmd_gen_data)
    p.add_argument("--out", required=True, help="output dataset path")

    p = add("train", "train a model; writes checkpoints and loss.tsv", cmd_train)
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--out-dir", required=True, help="directory for checkpoints and loss records")

    for name, text, func in (("eval", "one-step evaluation report", cmd_eval),
                             ("rollout", "autoregressive rollout report", cmd_rollout)):
        p = add(name, text, func)
        p.add_argument("--checkpoint", required=True, help="checkpoint file")
        p.add_argument("--data", required=True, help="dataset file")
        p.add_argument("--split", choices=("train", "val", "test"), help="overrides eval.split")
        p.add_argument("--out", default="-", help="report path (default stdout)")
        if name == "eval":
            p.add_argument("--images", help="directory for PGM field panels")
            p.add_argument("--max-images", type=int, default=None, help="limit on dumped samples")
        else:
            p.add_argument("--horizon", type=int, help="overrides eval.horizon")
            p.add_argument("--trajectory", type=int, help="overrides eval.trajectory")

    p = add("ablate", "train vanilla, 2x-params, final-act and layerwise-act arms", cmd_ablate)
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    p.add_argument("--out", default="-", help="report path (default stdout)")

    p = add("verify", "run numerical identity and gradient checks", cmd_verify)
    p.add_argument("--suite", choices=("appendix-c", "chain-rule", "gradients", "all"), default="all")
    p.add_argument("--seed", type=int, default=0, help="seed for the gradient check")
    p.add_argument("--out", default="-", help="record path (default stdout)")

    p = add("params", "print the parameter-count tree", cmd_params)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--reference-fno-act", action="store_true",
                       help="reference config with ACT after every block; checks published counts")
    group.add_argument("--reference-fno", action="store_true",
                       help="reference config without ACT; checks published counts")
    p.add_argument("--in-channels", type=int, default=8)
    p.add_argument("--out-channels", type=int, default=2)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        cfg = RunConfig.load(args.config)
        return args.func(args, cfg)
    except (TrainingAborted, BlowUpError, NonFiniteError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DatasetFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
