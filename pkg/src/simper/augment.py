"""Speed (frequency-changing) views and frequency-preserving views.

Sequences keep time on axis 0; any trailing axes are treated as a frame, so
the same code serves (T,) series and (T, H, W, C) videos.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InsufficientLengthError
from .rng import SplitMix64, derive_seed
from .signal import resample_linear

__all__ = [
    "SpeedAugConfig",
    "InvariantAugConfig",
    "VariantViewSet",
    "sample_speeds",
    "variant_views",
    "invariant_view",
    "make_training_views",
]


@dataclass(frozen=True)
class SpeedAugConfig:
    s_min: float = 0.5
    s_max: float = 2.0
    num_views: int = 10
    target_len: int = 64

    def __post_init__(self):
        if not 0 < self.s_min < self.s_max:
            raise ConfigurationError(f"speed range must satisfy 0 < s_min < s_max, got [{self.s_min}, {self.s_max}]")
        if self.num_views < 2:
            raise ConfigurationError("num_views must be at least 2")
        if self.target_len < 4:
            raise ConfigurationError("target_len must be at least 4")


@dataclass(frozen=True)
class InvariantAugConfig:
    p_reverse: float = 0.5
    max_delay: int = 8
    noise_sigma: float = 0.05
    brightness_jitter: float = 0.1
    crop_scale_range: tuple[float, float] = (0.8, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "crop_scale_range", tuple(float(c) for c in self.crop_scale_range))
        lo, hi = self.crop_scale_range
        if not 0 <= self.p_reverse <= 1:
            raise ConfigurationError("p_reverse must be a probability")
        if self.max_delay < 0 or self.noise_sigma < 0 or self.brightness_jitter < 0:
            raise ConfigurationError("max_delay, noise_sigma and brightness_jitter must be non-negative")
        if not 0 < lo <= hi <= 1:
            raise ConfigurationError(f"crop_scale_range must lie in (0, 1], got {self.crop_scale_range}")

    @classmethod
    def identity(cls) -> "InvariantAugConfig":
        return cls(p_reverse=0.0, max_delay=0, noise_sigma=0.0, brightness_jitter=0.0, crop_scale_range=(1.0, 1.0))


@dataclass
class VariantViewSet:
    views: np.ndarray  # (M, L, ...)
    speeds: np.ndarray  # (M,), strictly increasing

    def __post_init__(self):
        if len(self.views) != len(self.speeds):
            raise ValueError("one speed label per view")

    def __len__(self) -> int:
        return len(self.speeds)


def sample_speeds(cfg: SpeedAugConfig, rng: SplitMix64) -> np.ndarray:
    """One jittered draw per equal-width stratum of [s_min, s_max], ascending."""
    m = cfg.num_views
    width = (cfg.s_max - cfg.s_min) / m
    u = rng.uniform(m)
    s = cfg.s_min + (np.arange(m) + u) * width
    return np.minimum(s, cfg.s_max)


def variant_views(
    x,
    cfg: SpeedAugConfig,
    rng_seed: int,
    speeds=None,
    out_len: int | None = None,
    *,
    f_max: float | None = None,
    sample_rate_hz: float | None = None,
) -> VariantViewSet:
    """Resample ``x`` at M speeds; view i plays ``x`` at ``speeds[i]`` times.

    ``speeds`` overrides the random draw (test hook); it is sorted and must be
    strictly increasing. ``out_len`` defaults to ``cfg.target_len`` and may be
    longer to leave room for a later delay crop.
    """
    x = np.asarray(x, dtype=np.float64)
    out_len = cfg.target_len if out_len is None else int(out_len)
    if speeds is None:
        s = sample_speeds(cfg, SplitMix64(rng_seed, 0x5350))
    else:
        s = np.sort(np.asarray(speeds, dtype=np.float64))
        if s.ndim != 1 or len(s) < 2 or np.any(np.diff(s) <= 0):
            raise ConfigurationError("forced speeds must be at least two distinct values")
    need = out_len * s[-1]
    if need > x.shape[0]:
        raise InsufficientLengthError(f"{out_len} frames at speed {s[-1]:.3f} need {need:.1f} input frames, have {x.shape[0]}")
    views = np.stack([resample_linear(x, float(si), out_len, f_max=f_max, sample_rate_hz=sample_rate_hz) for si in s])
    return VariantViewSet(views, s)


def _crop_resize(v: np.ndarray, scale: float, rng: SplitMix64) -> np.ndarray:
    h, w = v.shape[1], v.shape[2]
    ch, cw = max(1, int(round(scale * h))), max(1, int(round(scale * w)))
    if ch == h and cw == w:
        return v
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    # nearest neighbour: output pixel centre mapped back into the crop
    rows = top + np.minimum(((np.arange(h) + 0.5) * ch / h).astype(np.int64), ch - 1)
    cols = left + np.minimum(((np.arange(w) + 0.5) * cw / w).astype(np.int64), cw - 1)
    return v[:, rows][:, :, cols]


def invariant_view(v, cfg: InvariantAugConfig, target_len: int, rng_seed: int) -> np.ndarray:
    """Delay, reverse, crop-resize, brightness, noise; in that order."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] < target_len + cfg.max_delay:
        raise InsufficientLengthError(f"view of {v.shape[0]} frames is shorter than target_len + max_delay = {target_len + cfg.max_delay}")
    rng = SplitMix64(rng_seed, 0x494E56)
    # every draw is taken unconditionally so the stream layout never depends on the config
    d = int(rng.integers(0, cfg.max_delay + 1))
    flip = rng.uniform() < cfg.p_reverse
    scale = float(rng.uniform(low=cfg.crop_scale_range[0], high=cfg.crop_scale_range[1]))
    shift = float(rng.uniform(low=-cfg.brightness_jitter, high=cfg.brightness_jitter)) if cfg.brightness_jitter > 0 else 0.0
    out = v[d : d + target_len]
    if flip:
        out = out[::-1]
    if out.ndim >= 3 and cfg.crop_scale_range != (1.0, 1.0):
        out = _crop_resize(out, scale, SplitMix64(rng_seed, 0x435250))
    out = out + shift if shift else out.copy()
    if cfg.noise_sigma > 0:
        out = out + cfg.noise_sigma * SplitMix64(rng_seed, 0x4E5A).normal(out.size).reshape(out.shape)
    return out


def make_training_views(
    x,
    speed_cfg: SpeedAugConfig,
    inv_cfg: InvariantAugConfig,
    rng_seed: int,
    speeds=None,
    *,
    f_max: float | None = None,
    sample_rate_hz: float | None = None,
) -> tuple[VariantViewSet, VariantViewSet, np.ndarray]:
    """Paired invariant sets A, B over one shared draw of M speed views."""
    base = variant_views(
        x,
        speed_cfg,
        derive_seed(rng_seed, 0),
        speeds=speeds,
        out_len=speed_cfg.target_len + inv_cfg.max_delay,
        f_max=f_max,
        sample_rate_hz=sample_rate_hz,
    )
    tl = speed_cfg.target_len
    a = np.stack([invariant_view(v, inv_cfg, tl, derive_seed(rng_seed, 1, i)) for i, v in enumerate(base.views)])
    b = np.stack([invariant_view(v, inv_cfg, tl, derive_seed(rng_seed, 2, i)) for i, v in enumerate(base.views)])
    s = base.speeds
    return VariantViewSet(a, s.copy()), VariantViewSet(b, s.copy()), s.copy()
