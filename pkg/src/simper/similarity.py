"""Periodic feature similarity and speed-label similarity.

Feature inputs are tensors shaped ``(T, C)`` or ``(T,)`` for one series, or
``(..., M, T, C)`` for stacks of views. All similarity kinds are written with
tape ops, so gradients reach the encoder.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import ndtensor as nt
from .errors import DegenerateSignalError, DimensionError
from .ndtensor import Tensor

__all__ = [
    "SimilarityKind",
    "LabelKernel",
    "periodic_similarity",
    "similarity_matrix",
    "label_similarity",
    "soft_targets",
]

VARIANCE_FLOOR = 1e-8
# below this per-sample variance a feature is reported as degenerate
DEGENERATE_VARIANCE = 1e-12


class SimilarityKind(str, enum.Enum):
    MXCORR = "mxcorr"
    MXCORR_LINEAR = "mxcorr_linear"
    NPSD_COS = "npsd_cos"
    NPSD_L2 = "npsd_l2"


@dataclass(frozen=True)
class LabelKernel:
    """Label similarity ``w_ij`` between pseudo speed labels.

    ``indicator`` is the discrete limit: its soft targets are the identity,
    which turns the generalized loss into plain InfoNCE.
    """

    variant: str = "neg_l1"
    # one speed stratum, (s_max - s_min) / M, at the default augmentation settings
    scale: float = 0.15
    eps: float = 0.1

    def __post_init__(self):
        if self.variant not in ("neg_l1", "inverse_l1", "indicator"):
            raise ValueError(f"unknown label kernel {self.variant!r}")
        if self.scale <= 0 or self.eps <= 0:
            raise ValueError("label kernel scale and eps must be positive")


def label_similarity(s_i, s_j, kernel: LabelKernel = LabelKernel()):
    d = np.abs(np.asarray(s_i, dtype=np.float64) - np.asarray(s_j, dtype=np.float64))
    if kernel.variant == "neg_l1":
        w = -d / kernel.scale
    elif kernel.variant == "inverse_l1":
        w = 1.0 / (d + kernel.eps)
    else:
        w = (d == 0).astype(np.float64)
    return float(w) if w.ndim == 0 else w


def soft_targets(speeds, kernel: LabelKernel = LabelKernel()) -> np.ndarray:
    """Row-wise softmax of ``w_ij`` over j (identity for the indicator kernel)."""
    s = np.asarray(speeds, dtype=np.float64)
    if kernel.variant == "indicator":
        eye = np.eye(s.shape[-1])
        return np.broadcast_to(eye, s.shape[:-1] + eye.shape).copy()
    w = label_similarity(s[..., :, None], s[..., None, :], kernel)
    w = w - w.max(axis=-1, keepdims=True)
    e = np.exp(w)
    return e / e.sum(axis=-1, keepdims=True)


# ------------------------------------------------------------ DFT matrices


@lru_cache(maxsize=16)
def _full_dft(n: int, t: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    # (t, n): the first t rows of the n-point DFT, i.e. zero-padding t samples to n
    t = n if t is None else t
    tk = np.outer(np.arange(t), np.arange(n)) % n
    ang = 2 * np.pi * tk / n
    return np.cos(ang), np.sin(ang)


@lru_cache(maxsize=16)
def _onesided_dft(n: int) -> tuple[np.ndarray, np.ndarray]:
    # bins 1..n//2; DC is never used downstream
    k = np.arange(1, n // 2 + 1)
    ang = 2 * np.pi * (np.outer(np.arange(n), k) % n) / n
    return np.cos(ang), np.sin(ang)


# --------------------------------------------------------------- internals


def _as_views(x) -> Tensor:
    """Lift to a tensor shaped (..., M, T, C)."""
    x = x.values if hasattr(x, "values") and not isinstance(x, (Tensor, np.ndarray)) else x
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.ndim == 1:
        t = nt.reshape(t, (1, t.shape[0], 1))
    elif t.ndim == 2:
        t = nt.reshape(t, (1,) + t.shape)
    return t


def _channels_first(x: Tensor) -> tuple[Tensor, tuple[int, ...]]:
    """(..., M, T, C) -> (G, M, T) with G = prod(...) * C."""
    lead = x.shape[:-3]
    m, t, c = x.shape[-3:]
    b = int(np.prod(lead)) if lead else 1
    x = nt.reshape(x, (b, m, t, c))
    x = nt.transpose(x, (0, 3, 1, 2))
    return nt.reshape(x, (b * c, m, t)), lead


def _standardise(x: Tensor) -> Tensor:
    t = x.shape[-1]
    mean = nt.reduce(x, "mean", axis=-1, keepdims=True)
    centred = x - nt.expand(mean, x.shape)
    ss = nt.reduce(centred * centred, "sum", axis=-1, keepdims=True)
    norm = nt.nonlinearity(ss + t * VARIANCE_FLOOR, "sqrt")
    return centred / nt.expand(norm, x.shape)


def _bmm_right(x: Tensor, mat: np.ndarray) -> Tensor:
    """x (G, M, T) @ mat (T, K) -> (G, M, K)."""
    g, m, t = x.shape
    out = nt.matmul(nt.reshape(x, (g * m, t)), Tensor(mat))
    return nt.reshape(out, (g, m, mat.shape[1]))


def _pair_expand(a: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """(G, Ma, K), (G, Mb, K) -> both (G, Ma, Mb, K)."""
    g, ma, k = a.shape
    mb = b.shape[1]
    shape = (g, ma, mb, k)
    ea = nt.expand(nt.reshape(a, (g, ma, 1, k)), shape)
    eb = nt.expand(nt.reshape(b, (g, 1, mb, k)), shape)
    return ea, eb


def _mxcorr(a: Tensor, b: Tensor, linear: bool = False) -> Tensor:
    t = a.shape[-1]
    # 2t - 1 points hold every linear lag without wrap-around
    n = 2 * t - 1 if linear else t
    cos, sin = _full_dft(n, t)
    a_re, a_im = _bmm_right(a, cos), _bmm_right(a, sin)
    b_re, b_im = _bmm_right(b, cos), _bmm_right(b, sin)
    ar, br = _pair_expand(a_re, b_re)
    ai, bi = _pair_expand(a_im, b_im)
    # with X = F x, conj(A) * B in terms of cos/sin projections (Im X = -x @ sin)
    p_re = ar * br + ai * bi
    p_im = ai * br - ar * bi
    g, ma, mb, _ = p_re.shape
    flat = (g * ma * mb, n)
    icos, isin = _full_dft(n)
    r = nt.matmul(nt.reshape(p_re, flat), Tensor(icos)) - nt.matmul(nt.reshape(p_im, flat), Tensor(isin))
    r = nt.reshape(r, (g, ma, mb, n)) / float(n)
    return nt.reduce(r, "max", axis=-1)


def _normalised_psd(x: Tensor) -> Tensor:
    t = x.shape[-1]
    cos, sin = _onesided_dft(t)
    re, im = _bmm_right(x, cos), _bmm_right(x, sin)
    power = (re * re + im * im) / float(t)
    total = nt.reduce(power, "sum", axis=-1, keepdims=True) + 1e-12
    return power / nt.expand(total, power.shape)


def _npsd_cos(a: Tensor, b: Tensor) -> Tensor:
    pa, pb = _normalised_psd(a), _normalised_psd(b)
    dots = nt.matmul(pa, nt.transpose(pb, (0, 2, 1)))
    na = nt.nonlinearity(nt.reduce(pa * pa, "sum", axis=-1, keepdims=True), "sqrt")
    nb = nt.nonlinearity(nt.reduce(pb * pb, "sum", axis=-1, keepdims=True), "sqrt")
    outer = nt.matmul(na, nt.transpose(nb, (0, 2, 1)))
    return dots / (outer + 1e-12)


def _npsd_l2(a: Tensor, b: Tensor) -> Tensor:
    pa, pb = _pair_expand(_normalised_psd(a), _normalised_psd(b))
    d = pa - pb
    return -nt.nonlinearity(nt.reduce(d * d, "sum", axis=-1), "sqrt")


_KERNELS = {
    SimilarityKind.MXCORR: _mxcorr,
    SimilarityKind.MXCORR_LINEAR: lambda a, b: _mxcorr(a, b, linear=True),
    SimilarityKind.NPSD_COS: _npsd_cos,
    SimilarityKind.NPSD_L2: _npsd_l2,
}


def _check_degenerate(x: Tensor) -> None:
    var = x.data.var(axis=-2)
    if np.any(var <= DEGENERATE_VARIANCE):
        raise DegenerateSignalError("feature series with zero temporal variance (encoder collapse?)")


def similarity_matrix(A, B, kind: SimilarityKind | str = SimilarityKind.MXCORR, strict: bool = False) -> Tensor:
    """Entry (..., i, j) is the periodic similarity of A[..., i] and B[..., j].

    Channels are scored independently and averaged.
    """
    kind = SimilarityKind(kind)
    a, b = _as_views(A), _as_views(B)
    if a.shape[:-3] != b.shape[:-3] or a.shape[-2:] != b.shape[-2:]:
        raise DimensionError(f"incompatible feature stacks {a.shape} and {b.shape}")
    if a.shape[-2] < 4:
        raise DimensionError("periodic similarity needs at least 4 time steps")
    if strict:
        _check_degenerate(a)
        _check_degenerate(b)
    c = a.shape[-1]
    ga, lead = _channels_first(a)
    gb, _ = _channels_first(b)
    sims = _KERNELS[kind](_standardise(ga), _standardise(gb))
    g, ma, mb = sims.shape
    sims = nt.reduce(nt.reshape(sims, (g // c, c, ma, mb)), "mean", axis=1)
    return nt.reshape(sims, lead + (ma, mb))


def periodic_similarity(u, v, kind: SimilarityKind | str = SimilarityKind.MXCORR, strict: bool = True) -> Tensor:
    """Scalar similarity of two feature series; larger means more alike."""
    a, b = _as_views(u), _as_views(v)
    if a.shape != b.shape or a.shape[0] != 1:
        raise DimensionError(f"periodic_similarity needs two series of equal shape, got {a.shape} and {b.shape}")
    return nt.reshape(similarity_matrix(a, b, kind, strict=strict), ())
