"""Training loop: draw t uniformly, form x_t from the closed-form marginal,
and minimize the weighted fidelity plus perceptual-proxy loss with a
hand-rolled rectified adaptive optimizer under warmup + cosine decay.

The optimizer keeps float64 master copies of the parameters and moments; the
network may run in float32 for speed.  All randomness comes from one numpy
generator so runs are reproducible from the config seed alone.
"""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import torch

from .degrade import ImagePair
from .denoiser import DenoiserNet
from .perceptual import FeatureBank, default_bank, proxy_distance_torch
from .schedule import Schedule
from .tensorio import format_g9

__all__ = [
    "TrainConfig",
    "OptimizerState",
    "init_optimizer_state",
    "optimizer_step",
    "lr_at_step",
    "total_loss",
    "loss_components",
    "train_step",
    "fit",
    "GRAD_CLIP_NORM",
]

GRAD_CLIP_NORM = 1.0  # safety rail for small-batch training
_OPT_EPS = 1e-8
_LOG_COLUMNS = ("step", "lr", "loss", "fidelity", "perceptual")


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int
    lambda_fidelity: float = 10.0
    T: int = 15
    lr_max: float = 3e-5
    warmup_steps: int = 5000
    batch_size: int = 16
    seed: int = 0
    beta1_opt: float = 0.9
    beta2_opt: float = 0.999
    f64_mode: bool = False

    def __post_init__(self):
        if self.lambda_fidelity <= 0:
            raise ValueError(f"lambda_fidelity must be positive, got {self.lambda_fidelity}")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError(
                f"need 0 <= warmup_steps < total_steps, got {self.warmup_steps}, {self.total_steps}"
            )
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not (0.0 <= self.beta1_opt < 1.0 and 0.0 <= self.beta2_opt < 1.0):
            raise ValueError("optimizer moment decays must lie in [0, 1)")


def lr_at_step(step: int, config: TrainConfig) -> float:
    """Linear ramp 0 -> lr_max over warmup, then cosine decay to 0."""
    if not 0 <= step <= config.total_steps:
        raise ValueError(f"step {step} outside [0, {config.total_steps}]")
    if step <= config.warmup_steps and config.warmup_steps > 0:
        return config.lr_max * step / config.warmup_steps
    span = config.total_steps - config.warmup_steps
    frac = (step - config.warmup_steps) / span
    return config.lr_max * 0.5 * (1.0 + math.cos(math.pi * frac))


# --- loss ---


def _loss_terms_torch(x0_hat: torch.Tensor, hr: torch.Tensor, lam: float, bank: FeatureBank):
    fidelity = lam * ((x0_hat - hr) ** 2).mean()
    perceptual = proxy_distance_torch(x0_hat, hr, bank)
    return fidelity, perceptual


def total_loss(x0_hat, hr, lam: float = 10.0, bank: FeatureBank | None = None):
    """Loss value and its gradient with respect to x0_hat (float64)."""
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    hr = np.asarray(hr, dtype=np.float64)
    if x0_hat.shape != hr.shape:
        raise ValueError(f"shape mismatch: {x0_hat.shape} vs {hr.shape}")
    leaf = torch.from_numpy(x0_hat.copy())[None, None].requires_grad_(True)
    target = torch.from_numpy(hr)[None, None]
    fidelity, perceptual = _loss_terms_torch(leaf, target, lam, bank or default_bank())
    loss = fidelity + perceptual
    loss.backward()
    return loss.item(), leaf.grad[0, 0].numpy().copy()


def loss_components(x0_hat, hr, lam: float = 10.0, bank: FeatureBank | None = None):
    """(total, fidelity term, perceptual term) as floats, no gradient."""
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    hr = np.asarray(hr, dtype=np.float64)
    if x0_hat.shape != hr.shape:
        raise ValueError(f"shape mismatch: {x0_hat.shape} vs {hr.shape}")
    with torch.no_grad():
        a = torch.from_numpy(x0_hat)[None, None]
        b = torch.from_numpy(hr)[None, None]
        fidelity, perceptual = _loss_terms_torch(a, b, lam, bank or default_bank())
    return float(fidelity + perceptual), float(fidelity), float(perceptual)


# --- optimizer ---


@dataclass
class OptimizerState:
    """Rectified-Adam accumulators; shapes mirror the parameter set."""

    step: int = 0
    m: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    v: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)


def init_optimizer_state(params) -> OptimizerState:
    state = OptimizerState()
    for name, p in params.items():
        state.m[name] = np.zeros_like(p, dtype=np.float64)
        state.v[name] = np.zeros_like(p, dtype=np.float64)
    return state


def optimizer_step(params, grads, state: OptimizerState, lr: float,
                   beta1: float = 0.9, beta2: float = 0.999):
    """One rectified update; returns new params, mutates state in place.

    Variance rectification kicks in once the approximated SMA length
    rho_t exceeds 4; earlier steps fall back to bias-corrected momentum.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    beta2_t = beta2**t
    rho_t = rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t)
    rectified = rho_t > 4.0
    if rectified:
        r = math.sqrt(
            ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
            / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)
        )
    new_params: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        if rectified:
            v_hat = np.sqrt(v / (1.0 - beta2_t))
            new_params[name] = p - lr * r * m_hat / (v_hat + _OPT_EPS)
        else:
            new_params[name] = p - lr * m_hat
    return new_params


def clip_gradients(grads, max_norm: float = GRAD_CLIP_NORM) -> float:
    """Scale grads in place to the global-norm ball; returns the pre-clip norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


# --- training steps ---


def _batch_update(net: DenoiserNet, master, state: OptimizerState,
                  hr_batch: np.ndarray, lr_batch: np.ndarray,
                  schedule: Schedule, config: TrainConfig, rng, lr: float,
                  bank: FeatureBank):
    """One optimizer step on a (B, H, W) batch; returns a stats dict."""
    b = hr_batch.shape[0]
    ts = rng.integers(1, config.T + 1, size=b)
    noise = rng.standard_normal(hr_batch.shape)
    betas = schedule.betas[ts][:, None, None]
    e0 = lr_batch - hr_batch
    x_t = hr_batch + betas * e0 + schedule.gamma * np.sqrt(betas) * noise

    dtype = net.dtype
    xt_t = torch.from_numpy(x_t).to(dtype)[:, None]
    xlr_t = torch.from_numpy(lr_batch).to(dtype)[:, None]
    hr_t = torch.from_numpy(hr_batch).to(dtype)[:, None]
    tt = torch.from_numpy(ts.astype(np.float64)).to(dtype)

    net.zero_grad(set_to_none=True)
    out = net(xt_t, xlr_t, tt)
    fidelity, perceptual = _loss_terms_torch(out, hr_t, config.lambda_fidelity, bank)
    loss = fidelity + perceptual
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite loss at optimizer step {state.step + 1}")
    loss.backward()

    grads = OrderedDict(
        (name, p.grad.detach().double().numpy().copy()) for name, p in net.named_parameters()
    )
    grad_norm = clip_gradients(grads)
    new_master = optimizer_step(grads=grads, params=master, state=state, lr=lr,
                                beta1=config.beta1_opt, beta2=config.beta2_opt)
    net.load_param_set(new_master)
    return new_master, {
        "loss": loss.item(),
        "fidelity": fidelity.item(),
        "perceptual": perceptual.item(),
        "grad_norm": grad_norm,
        "lr": lr,
    }


def train_step(pair: ImagePair, net: DenoiserNet, state: OptimizerState,
               schedule: Schedule, config: TrainConfig, rng,
               master=None, bank: FeatureBank | None = None):
    """Single-pair step (batch of one); returns (stats, master params)."""
    _check_schedule(schedule, config)
    if master is None:
        master = net.param_set()
    lr = lr_at_step(min(state.step + 1, config.total_steps), config)
    master, stats = _batch_update(
        net, master, state,
        pair.hr[None].astype(np.float64), pair.lr[None].astype(np.float64),
        schedule, config, rng, lr, bank or default_bank(),
    )
    return stats, master


def _check_schedule(schedule: Schedule, config: TrainConfig) -> None:
    if len(schedule.alphas) != config.T:
        raise ValueError(
            f"schedule has {len(schedule.alphas)} steps but config.T is {config.T}"
        )


def fit(net: DenoiserNet, pairs, schedule: Schedule, config: TrainConfig,
        log_path=None, log_every: int = 1):
    """Full training run over a list of ImagePairs; returns the history.

    Batches are drawn with replacement; every pair must share one shape.
    Writes a CSV log (step, lr, loss, fidelity, perceptual) when asked.
    """
    _check_schedule(schedule, config)
    if not pairs:
        raise ValueError("no training pairs")
    shapes = {p.hr.shape for p in pairs}
    if len(shapes) != 1:
        raise ValueError(f"training pairs must share one shape, got {sorted(shapes)}")
    hr_all = np.stack([p.hr for p in pairs]).astype(np.float64)
    lr_all = np.stack([p.lr for p in pairs]).astype(np.float64)

    rng = np.random.default_rng(config.seed)
    bank = default_bank()
    master = net.param_set()
    state = init_optimizer_state(master)
    history = []
    writer = None
    log_file = None
    try:
        if log_path is not None:
            log_file = open(log_path, "w", newline="")
            writer = csv.writer(log_file)
            writer.writerow(_LOG_COLUMNS)
        for step in range(1, config.total_steps + 1):
            idx = rng.integers(0, len(pairs), size=config.batch_size)
            lr = lr_at_step(step, config)
            master, stats = _batch_update(
                net, master, state, hr_all[idx], lr_all[idx],
                schedule, config, rng, lr, bank,
            )
            stats["step"] = step
            history.append(stats)
            if writer is not None and (step % log_every == 0 or step == config.total_steps):
                writer.writerow(
                    [step] + [format_g9(stats[c]) for c in _LOG_COLUMNS[1:]]
                )
    finally:
        if log_file is not None:
            log_file.close()
    return history
