"""Command-line surface.

Subcommands: schedule, phantom, degrade, train, sample, eval, stats,
experiment.  Exit codes: 0 success, 1 usage error, 2 data/validation error.
The RSRDIFF_THREADS env var caps torch worker threads.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace
from pathlib import Path

import torch

from .degrade import (
    PHANTOM_KINDS,
    PhantomSpec,
    downsample,
    gen_phantom,
    make_pair,
    upsample_nearest,
)
from .denoiser import NetConfig, build_denoiser
from .experiment import ExperimentConfig, ExperimentError, run_experiment
from .metrics import (
    METRIC_NAMES,
    MetricReport,
    bootstrap_ci,
    compare_methods,
    evaluate_pair,
    write_report_csv,
)
from .sampler import SamplerConfig, run_sampler
from .schedule import ScheduleConfig, build_schedule, sub_schedule
from .tensorio import (
    CheckpointError,
    ConfigError,
    TensorFormatError,
    format_g9,
    load_checkpoint,
    read_config,
    read_tensor,
    save_checkpoint,
    write_pgm,
    write_tensor,
)
from .train import TrainConfig, fit

USAGE_ERROR = 1
DATA_ERROR = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage problems; the CLI contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _build_parser() -> _Parser:
    parser = _Parser(prog="rsrdiff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", help="print the noise schedule as CSV")
    p.add_argument("--T", type=int, default=15)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--p", type=float, default=0.3)
    p.add_argument("--steps", type=int, default=None,
                   help="mark the K-step sub-schedule in an in_sub column")
    p.add_argument("--out", type=Path, default=None, help="CSV path (default stdout)")

    p = sub.add_parser("phantom", help="generate a synthetic test image")
    p.add_argument("--kind", choices=PHANTOM_KINDS, required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--pgm", type=Path, default=None, help="also export an 8-bit preview")

    p = sub.add_parser("degrade", help="block-average then nearest-upsample an HR tensor")
    p.add_argument("--in", dest="infile", type=Path, required=True)
    p.add_argument("--factor", type=int, required=True)
    p.add_argument("--out-lr", type=Path, required=True)

    p = sub.add_parser("train", help="train a denoiser variant on HR tensors")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="directory of HR .rsd tensors")
    p.add_argument("--ckpt-out", type=Path, required=True)
    p.add_argument("--variant", choices=("conv", "swin"), required=True)
    p.add_argument("--log", type=Path, default=None, help="training log CSV")

    p = sub.add_parser("sample", help="run K reverse steps from a degraded tensor")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--lr", type=Path, required=True, help="pre-upsampled LR tensor")
    p.add_argument("--steps", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--variant", choices=("conv", "swin"), default=None,
                   help="fail if the checkpoint was trained as the other variant")
    p.add_argument("--stochastic-last-step", action="store_true")

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred-dir", type=Path, required=True)
    p.add_argument("--gt-dir", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--data-range", type=float, default=1.0)
    p.add_argument("--method", default="pred", help="method label for the rows")
    p.add_argument("--seed", type=int, default=0, help="bootstrap seed")

    p = sub.add_parser("stats", help="nonparametric group comparison on a CSV")
    p.add_argument("--csv", type=Path, required=True)
    p.add_argument("--groupby", required=True)
    p.add_argument("--alpha", type=float, default=0.05)

    p = sub.add_parser("experiment", help="end-to-end corpus/train/sample/eval run")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--skip-train", action="store_true")
    return parser


# --- subcommand bodies ---


def _cmd_schedule(args) -> int:
    schedule = build_schedule(ScheduleConfig(T=args.T, gamma=args.gamma, p=args.p))
    taus = set()
    if args.steps is not None:
        taus = set(sub_schedule(schedule, args.steps).taus)
    rows = [["t", "beta", "sqrt_beta", "alpha", "in_sub"]]
    for t in range(1, args.T + 1):
        rows.append(
            [
                str(t),
                format_g9(schedule.beta(t)),
                format_g9(schedule.beta(t) ** 0.5),
                format_g9(schedule.alpha(t)),
                "1" if t in taus else "0",
            ]
        )
    if args.out is None:
        for row in rows:
            print(",".join(row))
    else:
        with open(args.out, "w", newline="") as f:
            csv.writer(f).writerows(rows)
    return 0


def _cmd_phantom(args) -> int:
    spec = PhantomSpec(size=(args.size, args.size), kind=args.kind, seed=args.seed)
    img = gen_phantom(spec)
    write_tensor(args.out, img)
    if args.pgm is not None:
        write_pgm(args.pgm, img)
    return 0


def _cmd_degrade(args) -> int:
    hr = read_tensor(args.infile)
    lr = upsample_nearest(downsample(hr, args.factor), args.factor)
    write_tensor(args.out_lr, lr)
    return 0


def _train_config_from_file(path) -> tuple[TrainConfig, ScheduleConfig, NetConfig, int]:
    raw = read_config(path)
    def geti(key, default=None):
        if key in raw:
            return int(raw[key])
        if default is None:
            raise ConfigError(f"missing required config key {key!r}")
        return default
    def getf(key, default):
        return float(raw[key]) if key in raw else default

    train = TrainConfig(
        total_steps=geti("total_steps"),
        lambda_fidelity=getf("lambda", 10.0),
        T=geti("T", 15),
        lr_max=getf("lr_max", 3e-5),
        warmup_steps=geti("warmup_steps", 5000),
        batch_size=geti("batch_size", 16),
        seed=geti("seed", 0),
        f64_mode=raw.get("f64_mode", "false").lower() in ("true", "1", "yes"),
    )
    sched = ScheduleConfig(T=train.T, gamma=getf("gamma", 2.0), p=getf("p", 0.3))
    net = NetConfig(
        base_channels=geti("base_channels", 32),
        depth=geti("depth", 2),
        use_window_attention=True,  # caller overrides from --variant
        window_size=geti("window_size", 8),
        heads=geti("heads", 4),
        time_embed_dim=geti("time_embed_dim", 64),
    )
    return train, sched, net, geti("factor", 4)


def _cmd_train(args) -> int:
    train_cfg, sched_cfg, net_cfg, factor = _train_config_from_file(args.config)
    net_cfg = replace(net_cfg, use_window_attention=(args.variant == "swin"))
    hr_files = sorted(args.data.glob("*.rsd"))
    if not hr_files:
        raise FileNotFoundError(f"no .rsd tensors in {args.data}")
    pairs = [make_pair(read_tensor(f), factor) for f in hr_files]
    schedule = build_schedule(sched_cfg)
    net = build_denoiser(net_cfg, seed=train_cfg.seed, f64=train_cfg.f64_mode)
    fit(net, pairs, schedule, train_cfg, log_path=args.log)
    meta = {
        "variant": args.variant,
        "T": sched_cfg.T,
        "gamma": repr(sched_cfg.gamma),
        "p": repr(sched_cfg.p),
        "seed": train_cfg.seed,
    }
    save_checkpoint(args.ckpt_out, net.param_set(), net_cfg, meta)
    return 0


def _cmd_sample(args) -> int:
    params, net_cfg, meta = load_checkpoint(args.ckpt)
    ckpt_variant = meta.get("variant", net_cfg.variant)
    if args.variant is not None and args.variant != ckpt_variant:
        raise ValueError(
            f"requested variant {args.variant!r} but checkpoint {args.ckpt} was trained"
            f" as {ckpt_variant!r}"
        )
    sched_cfg = ScheduleConfig(
        T=int(meta.get("T", 15)),
        gamma=float(meta.get("gamma", 2.0)),
        p=float(meta.get("p", 0.3)),
    )
    schedule = build_schedule(sched_cfg)
    sub = sub_schedule(schedule, args.steps)
    net = build_denoiser(net_cfg, seed=0)
    net.load_param_set(params)
    x_lr = read_tensor(args.lr)
    config = SamplerConfig(
        sub=sub,
        gamma=sched_cfg.gamma,
        seed=args.seed,
        deterministic_last_step=not args.stochastic_last_step,
    )
    write_tensor(args.out, run_sampler(x_lr, net.as_denoiser(), config))
    return 0


def _cmd_eval(args) -> int:
    pred_files = {f.name: f for f in sorted(args.pred_dir.glob("*.rsd"))}
    gt_files = {f.name: f for f in sorted(args.gt_dir.glob("*.rsd"))}
    if not pred_files:
        raise FileNotFoundError(f"no .rsd tensors in {args.pred_dir}")
    missing = sorted(set(pred_files) ^ set(gt_files))
    if missing:
        raise ValueError(f"prediction/ground-truth name mismatch: {missing}")
    records = []
    for name in sorted(pred_files):
        rec = {"id": name.removesuffix(".rsd"), "method": args.method}
        rec.update(
            evaluate_pair(read_tensor(pred_files[name]), read_tensor(gt_files[name]),
                          data_range=args.data_range)
        )
        records.append(rec)
    report = MetricReport.build(records)
    boot = {}
    for bound, idx in (("boot_lo", 0), ("boot_hi", 1)):
        boot[bound] = [
            bootstrap_ci([r[m] for r in records], seed=args.seed)[idx]
            for m in METRIC_NAMES
        ]
    write_report_csv(report, args.out, bootstrap=boot)
    return 0


def _cmd_stats(args) -> int:
    with open(args.csv, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValueError(f"{args.csv}: no data rows")
    if args.groupby not in rows[0]:
        raise ValueError(f"{args.csv}: no column {args.groupby!r}")
    if "section" in rows[0]:
        rows = [r for r in rows if r["section"] == "image"]
    numeric_cols = [
        c
        for c in rows[0]
        if c not in ("section", "id", args.groupby)
        and all(_is_float(r[c]) for r in rows)
    ]
    if not numeric_cols:
        raise ValueError(f"{args.csv}: no numeric columns to compare")
    for col in numeric_cols:
        grouped: dict[str, list[float]] = {}
        for r in rows:
            grouped.setdefault(r[args.groupby], []).append(float(r[col]))
        if len(grouped) < 2:
            raise ValueError(f"need at least 2 groups under {args.groupby!r}")
        block = compare_methods(grouped, alpha=args.alpha)
        print(f"{col}: kruskal-wallis H = {format_g9(block.statistic)},"
              f" p = {format_g9(block.p_value)}")
        if block.dunn_p is None:
            print(f"  omnibus p >= {args.alpha:g}; pairwise tests not reported")
            continue
        for i in range(len(block.methods)):
            for j in range(i + 1, len(block.methods)):
                print(
                    f"  dunn {block.methods[i]} vs {block.methods[j]}:"
                    f" p = {format_g9(block.dunn_p[i, j])}"
                )
    return 0


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _cmd_experiment(args) -> int:
    raw = read_config(args.config) if args.config is not None else {}
    config = ExperimentConfig.from_dict(raw)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    artifacts = run_experiment(config, args.out, skip_train=args.skip_train)
    for name in ("table1", "table2", "report"):
        print(f"{name}: {artifacts[name]}")
    return 0


_COMMANDS = {
    "schedule": _cmd_schedule,
    "phantom": _cmd_phantom,
    "degrade": _cmd_degrade,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "eval": _cmd_eval,
    "stats": _cmd_stats,
    "experiment": _cmd_experiment,
}


def main(argv=None) -> int:
    threads = os.environ.get("RSRDIFF_THREADS")
    if threads:
        try:
            torch.set_num_threads(max(1, int(threads)))
        except ValueError:
            print(f"rsrdiff: invalid RSRDIFF_THREADS value {threads!r}", file=sys.stderr)
            return USAGE_ERROR
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse --help exits 0; our error() raises 1
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ExperimentError as e:
        print(f"rsrdiff: {e}", file=sys.stderr)
        return DATA_ERROR
    except (TensorFormatError, CheckpointError, ConfigError) as e:
        print(f"rsrdiff: {e}", file=sys.stderr)
        return DATA_ERROR
    except (ValueError, FloatingPointError, FileNotFoundError, NotADirectoryError, OSError) as e:
        print(f"rsrdiff: {e}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
