"""Desk-scale end-to-end experiment: synthesize a phantom corpus, train the
conv-only and window-attention denoiser variants, sample with the K-step
schedule, evaluate against the nearest-neighbor baseline, and write the
report tables.

Artifacts in the output directory:
  train_log_<variant>.csv   per-step training log
  ckpt_<variant>.rsdc       checkpoint with config echo
  table1.csv                per-method metric mean/std plus seconds per slice
  table2.csv                attention-ablation percentage deltas
  report.csv                per-image rows, aggregates, statistics footer
  config.txt                resolved experiment config echo

Predictions are clipped to [0,1] before metrics (phantom intensity range).
Any stage failure raises ExperimentError naming the stage and leaves the
artifacts written so far in place, plus a FAILED marker file.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .degrade import PHANTOM_KINDS, PhantomSpec, gen_phantom, make_pair
from .denoiser import NetConfig, build_denoiser
from .metrics import (
    METRIC_NAMES,
    MetricReport,
    evaluate_pair,
    write_report_csv,
)
from .sampler import SamplerConfig, run_sampler
from .schedule import ScheduleConfig, build_schedule, sub_schedule
from .tensorio import format_g9, load_checkpoint, save_checkpoint, write_config
from .train import TrainConfig, fit

__all__ = ["ExperimentConfig", "ExperimentError", "run_experiment", "VARIANTS"]

VARIANTS = ("conv", "swin")
BASELINE_METHOD = "nearest"


class ExperimentError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class ExperimentConfig:
    n_train: int = 200
    n_eval: int = 40
    size: int = 32
    factor: int = 4
    train_steps: int = 2000
    batch_size: int = 16
    lr_max: float = 2e-3
    warmup_steps: int = 100
    lambda_fidelity: float = 10.0
    steps: int = 4  # reverse steps K at inference
    T: int = 15
    gamma: float = 2.0
    p: float = 0.3
    base_channels: int = 16
    depth: int = 2
    window_size: int = 8
    heads: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.n_train < 1 or self.n_eval < 1:
            raise ValueError("corpus sizes must be positive")
        if self.size % self.factor:
            raise ValueError(f"factor {self.factor} must divide size {self.size}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        kwargs = {}
        known = {f.name: f.type for f in fields(cls)}
        for key, value in d.items():
            if key not in known:
                raise ValueError(f"unknown experiment config key {key!r}")
            kwargs[key] = float(value) if known[key] == "float" else int(value)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def net_config(self, variant: str) -> NetConfig:
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
        return NetConfig(
            base_channels=self.base_channels,
            depth=self.depth,
            use_window_attention=(variant == "swin"),
            window_size=self.window_size,
            heads=self.heads,
        )

    def schedule_config(self) -> ScheduleConfig:
        return ScheduleConfig(T=self.T, gamma=self.gamma, p=self.p)


def _make_corpus(config: ExperimentConfig, seed_seq):
    """Deterministic phantom corpus; kinds cycle through the three generators."""
    n = config.n_train + config.n_eval
    seeds = seed_seq.generate_state(n)
    pairs = []
    for i in range(n):
        kind = PHANTOM_KINDS[i % len(PHANTOM_KINDS)]
        spec = PhantomSpec(size=(config.size, config.size), kind=kind, seed=int(seeds[i]))
        pairs.append(make_pair(gen_phantom(spec), config.factor))
    return pairs[: config.n_train], pairs[config.n_train :]


def _train_variant(variant, train_pairs, config, out_dir, net_seed, train_seed, schedule):
    net_config = config.net_config(variant)
    net = build_denoiser(net_config, seed=net_seed)
    train_config = TrainConfig(
        total_steps=config.train_steps,
        lambda_fidelity=config.lambda_fidelity,
        T=config.T,
        lr_max=config.lr_max,
        warmup_steps=config.warmup_steps,
        batch_size=config.batch_size,
        seed=train_seed,
    )
    fit(net, train_pairs, schedule, train_config, log_path=out_dir / f"train_log_{variant}.csv")
    meta = {
        "variant": variant,
        "T": config.T,
        "gamma": repr(config.gamma),
        "p": repr(config.p),
        "seed": config.seed,
    }
    save_checkpoint(out_dir / f"ckpt_{variant}.rsdc", net.param_set(), net_config, meta)
    return net


def _load_variant(variant, config, out_dir):
    path = out_dir / f"ckpt_{variant}.rsdc"
    if not path.exists():
        raise FileNotFoundError(f"--skip-train given but checkpoint {path} is missing")
    params, net_config, _ = load_checkpoint(path)
    expected = config.net_config(variant)
    if net_config != expected:
        raise ValueError(
            f"checkpoint {path} config {net_config} does not match experiment config {expected}"
        )
    net = build_denoiser(net_config, seed=0)
    net.load_param_set(params)
    return net


def _sample_variant(variant_idx, net, eval_pairs, config, sub):
    """Sample every held-out slice; per-slice generator seeds derive from
    (experiment seed, variant, slice index) so slices are independent."""
    preds = []
    start = time.perf_counter()
    for i, pair in enumerate(eval_pairs):
        slice_seed = int(
            np.random.SeedSequence((config.seed, variant_idx, i)).generate_state(1)[0]
        )
        sampler_config = SamplerConfig(sub=sub, gamma=config.gamma, seed=slice_seed)
        preds.append(run_sampler(pair.lr, net.as_denoiser(), sampler_config))
    seconds = (time.perf_counter() - start) / len(eval_pairs)
    return preds, seconds


def _evaluate(preds_by_method, eval_pairs):
    records = []
    for method, preds in preds_by_method.items():
        for i, (pred, pair) in enumerate(zip(preds, eval_pairs)):
            rec = {"id": f"eval-{i:03d}", "method": method}
            rec.update(evaluate_pair(np.clip(pred, 0.0, 1.0), pair.hr, data_range=1.0))
            records.append(rec)
    return MetricReport.build(records)


def _write_table1(path, report, seconds_by_method):
    header = ["method"]
    for m in METRIC_NAMES:
        header += [f"{m}_mean", f"{m}_std"]
    header.append("seconds_per_slice")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for method, aggs in report.aggregates.items():
            row = [method]
            for m in METRIC_NAMES:
                mean, std = aggs[m]
                row += [format_g9(mean), format_g9(std)]
            row.append(format_g9(seconds_by_method[method]))
            writer.writerow(row)


def _write_table2(path, report):
    """Ablation table: window-attention variant vs conv-only, percentage deltas."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "with_attention_mean", "without_attention_mean", "delta_pct"])
        for m in METRIC_NAMES:
            with_attn = report.aggregates["swin"][m][0]
            without = report.aggregates["conv"][m][0]
            delta = (with_attn - without) / abs(without) * 100.0 if without != 0 else 0.0
            writer.writerow([m, format_g9(with_attn), format_g9(without), format_g9(delta)])


def run_experiment(config: ExperimentConfig, out_dir, skip_train: bool = False) -> dict:
    """Run all stages; returns artifact paths keyed by name."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = "setup"
    try:
        write_config(out_dir / "config.txt", config.to_dict())
        corpus_seq = np.random.SeedSequence(config.seed).spawn(1)[0]
        schedule = build_schedule(config.schedule_config())
        sub = sub_schedule(schedule, config.steps)

        stage = "corpus"
        train_pairs, eval_pairs = _make_corpus(config, corpus_seq)

        nets = {}
        for vi, variant in enumerate(VARIANTS):
            stage = f"train[{variant}]"
            if skip_train:
                nets[variant] = _load_variant(variant, config, out_dir)
            else:
                nets[variant] = _train_variant(
                    variant, train_pairs, config, out_dir,
                    net_seed=config.seed + 101 * (vi + 1),
                    train_seed=config.seed + 211 * (vi + 1),
                    schedule=schedule,
                )

        preds_by_method = {}
        seconds_by_method = {}
        stage = "baseline"
        start = time.perf_counter()
        preds_by_method[BASELINE_METHOD] = [pair.lr.copy() for pair in eval_pairs]
        seconds_by_method[BASELINE_METHOD] = (time.perf_counter() - start) / len(eval_pairs)
        for vi, variant in enumerate(VARIANTS):
            stage = f"sample[{variant}]"
            preds_by_method[variant], seconds_by_method[variant] = _sample_variant(
                vi, nets[variant], eval_pairs, config, sub
            )

        stage = "evaluate"
        report = _evaluate(preds_by_method, eval_pairs)

        stage = "report"
        write_report_csv(report, out_dir / "report.csv")
        _write_table1(out_dir / "table1.csv", report, seconds_by_method)
        _write_table2(out_dir / "table2.csv", report)
    except BaseException as e:
        (out_dir / "FAILED").write_text(f"{stage}: {e}\n", encoding="utf-8")
        raise ExperimentError(stage, e) from e
    failed = out_dir / "FAILED"
    if failed.exists():
        failed.unlink()
    return {
        "config": out_dir / "config.txt",
        "report": out_dir / "report.csv",
        "table1": out_dir / "table1.csv",
        "table2": out_dir / "table2.csv",
        **{f"ckpt_{v}": out_dir / f"ckpt_{v}.rsdc" for v in VARIANTS},
    }
