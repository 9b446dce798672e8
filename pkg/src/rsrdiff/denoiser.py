"""Trainable denoiser: conv encoder-decoder conditioned on the degraded image
and the time step, with an optional windowed self-attention block at the
bottleneck (the ablation axis).

The network maps (x_t, x_lr, t) to an estimate of the clean image.  Inputs are
concatenated on channels, a sinusoidal embedding of t is injected additively
at every level, and spatial dims are reflect-padded internally so any
H, W >= 4*2**depth works; the output is cropped back to the input size.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

__all__ = [
    "NetConfig",
    "DenoiserNet",
    "WindowAttention",
    "time_embedding",
    "init_params",
    "build_denoiser",
    "denoiser_forward",
]


@dataclass(frozen=True)
class NetConfig:
    base_channels: int = 32
    depth: int = 2
    use_window_attention: bool = True
    window_size: int = 8
    heads: int = 4
    time_embed_dim: int = 64

    def __post_init__(self):
        if self.base_channels < 1 or self.depth < 1:
            raise ValueError("base_channels and depth must be positive")
        if self.window_size < 1:
            raise ValueError("window_size must be positive")
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")
        if self.bottleneck_channels % self.heads:
            raise ValueError(
                f"heads ({self.heads}) must divide bottleneck channels ({self.bottleneck_channels})"
            )

    @property
    def bottleneck_channels(self) -> int:
        return self.base_channels * 2**self.depth

    @property
    def min_input_size(self) -> int:
        return 4 * 2**self.depth

    @property
    def pad_multiple(self) -> int:
        m = 2**self.depth
        if self.use_window_attention:
            m *= self.window_size
        return m

    @property
    def variant(self) -> str:
        return "swin" if self.use_window_attention else "conv"


def time_embedding(t: float, dim: int) -> np.ndarray:
    """Sinusoidal embedding: sin halves then cos halves over dim/2 frequencies."""
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    i = np.arange(dim // 2, dtype=np.float64)
    angles = float(t) / 10000.0 ** (2.0 * i / dim)
    return np.concatenate([np.sin(angles), np.cos(angles)])


def _time_embedding_torch(t: torch.Tensor, dim: int) -> torch.Tensor:
    i = torch.arange(dim // 2, dtype=t.dtype, device=t.device)
    angles = t[:, None] / torch.pow(torch.tensor(10000.0, dtype=t.dtype), 2.0 * i / dim)
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)


class WindowAttention(nn.Module):
    """Multi-head self-attention within non-overlapping square windows.

    Plain scaled dot-product per window followed by an output projection and
    a residual addition; spatial shape is preserved.  Spatial dims must be
    multiples of the window size (the parent network pads).
    """

    def __init__(self, channels: int, window_size: int, heads: int):
        super().__init__()
        if channels % heads:
            raise ValueError(f"heads ({heads}) must divide channels ({channels})")
        self.channels = channels
        self.window_size = window_size
        self.heads = heads
        self.q_proj = nn.Linear(channels, channels)
        self.k_proj = nn.Linear(channels, channels)
        self.v_proj = nn.Linear(channels, channels)
        self.out_proj = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor, return_weights: bool = False):
        b, c, h, w = x.shape
        ws = self.window_size
        if h % ws or w % ws:
            raise ValueError(f"spatial dims {(h, w)} not multiples of window size {ws}")
        nh, nw = h // ws, w // ws
        # (B, C, H, W) -> (B*nh*nw, ws*ws, C) window tokens
        tokens = (
            x.reshape(b, c, nh, ws, nw, ws)
            .permute(0, 2, 4, 3, 5, 1)
            .reshape(b * nh * nw, ws * ws, c)
        )
        d_head = c // self.heads

        def split_heads(y):
            return y.reshape(y.shape[0], y.shape[1], self.heads, d_head).transpose(1, 2)

        q = split_heads(self.q_proj(tokens))
        k = split_heads(self.k_proj(tokens))
        v = split_heads(self.v_proj(tokens))
        logits = q @ k.transpose(-2, -1) / math.sqrt(d_head)
        weights = torch.softmax(logits, dim=-1)
        attended = (weights @ v).transpose(1, 2).reshape(b * nh * nw, ws * ws, c)
        out_tokens = self.out_proj(attended)
        out = (
            out_tokens.reshape(b, nh, nw, ws, ws, c)
            .permute(0, 5, 1, 3, 2, 4)
            .reshape(b, c, h, w)
        )
        result = x + out
        if return_weights:
            return result, weights
        return result


class ConvBlock(nn.Module):
    """Two 3x3 convs with SiLU; the time embedding is added per-channel after the first."""

    def __init__(self, in_ch: int, out_ch: int, time_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = F.silu(self.conv1(x) + self.time_proj(temb)[:, :, None, None])
        return F.silu(self.conv2(h))


class DenoiserNet(nn.Module):
    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        chs = [config.base_channels * 2**i for i in range(config.depth + 1)]
        tdim = config.time_embed_dim

        self.stem = nn.Conv2d(2, chs[0], 3, padding=1)
        self.enc_blocks = nn.ModuleList(
            [ConvBlock(chs[i], chs[i], tdim) for i in range(config.depth)]
        )
        self.down = nn.ModuleList(
            [nn.Conv2d(chs[i], chs[i + 1], 3, stride=2, padding=1) for i in range(config.depth)]
        )
        self.mid_block1 = ConvBlock(chs[-1], chs[-1], tdim)
        if config.use_window_attention:
            self.attention = WindowAttention(chs[-1], config.window_size, config.heads)
        self.mid_block2 = ConvBlock(chs[-1], chs[-1], tdim)
        self.up = nn.ModuleList(
            [nn.Conv2d(chs[i + 1], chs[i], 3, padding=1) for i in range(config.depth)]
        )
        self.dec_blocks = nn.ModuleList(
            [ConvBlock(2 * chs[i], chs[i], tdim) for i in range(config.depth)]
        )
        self.head = nn.Conv2d(chs[0], 1, 3, padding=1)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def forward(self, x_t: torch.Tensor, x_lr: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        """Batched forward: x_t, x_lr are (B, 1, H, W), t is (B,)."""
        if x_t.shape != x_lr.shape:
            raise ValueError(f"x_t shape {tuple(x_t.shape)} != x_lr shape {tuple(x_lr.shape)}")
        b, _, h, w = x_t.shape
        if h < self.config.min_input_size or w < self.config.min_input_size:
            raise ValueError(
                f"input {h}x{w} below the minimum size {self.config.min_input_size} for depth"
                f" {self.config.depth}"
            )
        m = self.config.pad_multiple
        pad_h, pad_w = (-h) % m, (-w) % m
        x = torch.cat([x_t, x_lr], dim=1)
        if pad_h or pad_w:
            top, left = pad_h // 2, pad_w // 2
            x = F.pad(x, (left, pad_w - left, top, pad_h - top), mode="reflect")
        else:
            top = left = 0

        temb = _time_embedding_torch(t.to(x.dtype), self.config.time_embed_dim)
        hmap = self.stem(x)
        skips = []
        for block, down in zip(self.enc_blocks, self.down):
            hmap = block(hmap, temb)
            skips.append(hmap)
            hmap = F.silu(down(hmap))
        hmap = self.mid_block1(hmap, temb)
        if self.config.use_window_attention:
            hmap = self.attention(hmap)
        hmap = self.mid_block2(hmap, temb)
        for i in reversed(range(self.config.depth)):
            hmap = F.interpolate(hmap, scale_factor=2, mode="nearest")
            hmap = F.silu(self.up[i](hmap))
            hmap = self.dec_blocks[i](torch.cat([hmap, skips[i]], dim=1), temb)
        out = self.head(hmap)
        return out[:, :, top : top + h, left : left + w]

    def forward_image(self, x_t: np.ndarray, x_lr: np.ndarray, t: int) -> np.ndarray:
        """Single-image numpy surface; raises on shape mismatch or non-finite output."""
        x_t = np.asarray(x_t, dtype=np.float64)
        x_lr = np.asarray(x_lr, dtype=np.float64)
        if x_t.shape != x_lr.shape or x_t.ndim != 2:
            raise ValueError(f"expected matching 2D inputs, got {x_t.shape} and {x_lr.shape}")
        with torch.no_grad():
            xt = torch.from_numpy(x_t).to(self.dtype)[None, None]
            xl = torch.from_numpy(x_lr).to(self.dtype)[None, None]
            tt = torch.tensor([float(t)], dtype=self.dtype)
            out = self(xt, xl, tt)[0, 0].double().numpy()
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("denoiser produced non-finite output")
        return out

    def as_denoiser(self):
        """Adapter satisfying the sampler's denoiser contract."""

        def denoise(x_t: np.ndarray, x_lr: np.ndarray, t: int) -> np.ndarray:
            return self.forward_image(x_t, x_lr, t)

        return denoise

    def param_set(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict(
            (name, p.detach().double().numpy().copy()) for name, p in self.named_parameters()
        )

    def load_param_set(self, params: "OrderedDict[str, np.ndarray]") -> None:
        own = dict(self.named_parameters())
        if set(own) != set(params):
            missing = sorted(set(own) ^ set(params))
            raise ValueError(f"parameter name mismatch: {missing}")
        with torch.no_grad():
            for name, p in own.items():
                value = np.asarray(params[name])
                if tuple(value.shape) != tuple(p.shape):
                    raise ValueError(
                        f"shape mismatch for {name}: {value.shape} vs {tuple(p.shape)}"
                    )
                p.copy_(torch.from_numpy(value).to(p.dtype))


def init_params(config: NetConfig, seed: int) -> "OrderedDict[str, np.ndarray]":
    """Fan-in-scaled uniform weights, zero biases, deterministic under seed."""
    rng = np.random.default_rng(seed)
    net = DenoiserNet(config)
    params: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, p in net.named_parameters():
        shape = tuple(p.shape)
        if name.endswith("bias"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            a = math.sqrt(1.0 / fan_in)
            params[name] = rng.uniform(-a, a, size=shape)
    return params


def build_denoiser(config: NetConfig, seed: int = 0, f64: bool = False) -> DenoiserNet:
    """Fresh network with seeded init, in float64 when requested."""
    net = DenoiserNet(config)
    if f64:
        net.double()
    net.load_param_set(init_params(config, seed))
    return net


def denoiser_forward(net: DenoiserNet, x_t, x_lr, t: int) -> np.ndarray:
    """Functional single-image forward (numpy in, numpy out)."""
    return net.forward_image(x_t, x_lr, t)
