"""Frame-wise encoder: an MLP over short edge-replicated temporal windows."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndtensor as nt
from .errors import DimensionError
from .ndtensor import Tensor
from .rng import SplitMix64

__all__ = ["EncoderConfig", "FeatureSeries", "init_params", "encode", "encode_batch", "window_indices"]


@dataclass(frozen=True)
class EncoderConfig:
    frame_input_dim: int = 256
    hidden_dims: tuple[int, ...] = (24,)
    feature_channels: int = 4
    temporal_context: int = 3

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.temporal_context < 1 or self.temporal_context % 2 == 0:
            raise ValueError("temporal_context must be a positive odd number")
        if self.feature_channels < 1:
            raise ValueError("feature_channels must be >= 1")
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ValueError("hidden_dims must be a non-empty list of positive widths")
        if self.frame_input_dim < 1:
            raise ValueError("frame_input_dim must be positive")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.frame_input_dim * self.temporal_context, *self.hidden_dims, self.feature_channels]
        return list(zip(dims[:-1], dims[1:]))

    def num_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_dims)


@dataclass
class FeatureSeries:
    values: Tensor  # (T, C)
    sample_rate_hz: float = 30.0

    @property
    def length(self) -> int:
        return self.values.shape[0]


def init_params(cfg: EncoderConfig, rng_seed: int) -> dict[str, Tensor]:
    """Glorot-uniform weights, zero biases."""
    rng = SplitMix64(rng_seed, 0x454E43)
    params = {}
    for i, (fan_in, fan_out) in enumerate(cfg.layer_dims):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"W{i}"] = Tensor(rng.uniform((fan_in, fan_out), -bound, bound), requires_grad=True)
        params[f"b{i}"] = Tensor(np.zeros(fan_out), requires_grad=True)
    return params


def window_indices(t: int, k: int) -> np.ndarray:
    """(t, k) frame indices of each centred window, clamped at the edges."""
    half = (k - 1) // 2
    idx = np.arange(t)[:, None] + np.arange(-half, half + 1)[None, :]
    return np.clip(idx, 0, t - 1)


def _windows(frames: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    """(N, T, ...) frames -> (N * T, k * P) flattened windows."""
    n, t = frames.shape[:2]
    flat = frames.reshape(n, t, -1)
    if flat.shape[2] != cfg.frame_input_dim:
        raise DimensionError(f"frames carry {flat.shape[2]} values each, encoder expects {cfg.frame_input_dim}")
    win = flat[:, window_indices(t, cfg.temporal_context), :]
    return win.reshape(n * t, cfg.temporal_context * cfg.frame_input_dim)


def encode_batch(frames, params: dict[str, Tensor], cfg: EncoderConfig, center: bool = True) -> Tensor:
    """Encode N sequences at once: (N, T, ...) -> (N, T, C)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim < 2:
        raise DimensionError("encode_batch expects (N, T, ...) frames")
    n, t = frames.shape[:2]
    h = Tensor(_windows(frames, cfg))
    n_layers = len(cfg.layer_dims)
    for i in range(n_layers):
        w, b = params[f"W{i}"], params[f"b{i}"]
        h = nt.matmul(h, w) + nt.expand(nt.reshape(b, (1, b.shape[0])), (h.shape[0], b.shape[0]))
        if i < n_layers - 1:
            h = nt.nonlinearity(h, "tanh")
    z = nt.reshape(h, (n, t, cfg.feature_channels))
    if center:
        z = z - nt.expand(nt.reduce(z, "mean", axis=1, keepdims=True), z.shape)
    return z


def encode(x, params: dict[str, Tensor], cfg: EncoderConfig, sample_rate_hz: float = 30.0, center: bool = True) -> FeatureSeries:
    """Encode one (T, ...) frame sequence into a (T, C) feature series."""
    x = np.asarray(x, dtype=np.float64)
    z = encode_batch(x[None], params, cfg, center=center)
    return FeatureSeries(nt.reshape(z, z.shape[1:]), sample_rate_hz)
