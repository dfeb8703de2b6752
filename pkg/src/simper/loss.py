"""InfoNCE and the generalized (soft-target) contrastive loss."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ndtensor as nt
from .errors import ContractError, DimensionError
from .ndtensor import Tensor
from .similarity import LabelKernel, SimilarityKind, similarity_matrix, soft_targets

__all__ = [
    "LossConfig",
    "infonce_loss",
    "infonce_from_similarities",
    "generalized_loss_from_similarities",
    "simper_loss",
    "cosine_similarity_matrix",
]


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.5
    similarity: SimilarityKind = SimilarityKind.MXCORR
    label_kernel: LabelKernel = field(default_factory=LabelKernel)
    mode: str = "generalized"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.mode not in ("generalized", "infonce"):
            raise ValueError(f"unknown loss mode {self.mode!r}")
        object.__setattr__(self, "similarity", SimilarityKind(self.similarity))

    @property
    def effective_kernel(self) -> LabelKernel:
        if self.mode == "infonce":
            return LabelKernel("indicator")
        return self.label_kernel


def cosine_similarity_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Plain cosine similarity between rows of flattened features."""
    a = nt.reshape(a, (a.shape[0], -1))
    b = nt.reshape(b, (b.shape[0], -1))
    dots = nt.matmul(a, nt.transpose(b))
    na = nt.nonlinearity(nt.reduce(a * a, "sum", axis=1, keepdims=True), "sqrt")
    nb = nt.nonlinearity(nt.reduce(b * b, "sum", axis=1, keepdims=True), "sqrt")
    return dots / (nt.matmul(na, nt.transpose(nb)) + 1e-12)


def infonce_from_similarities(sims: Tensor, positive_index: int, temperature: float) -> Tensor:
    """``-log softmax(sims / nu)[positive]`` over the candidate set in ``sims``."""
    logp = nt.log_softmax(sims / temperature, axis=-1)
    return -nt.take(logp, positive_index)


def infonce_loss(anchor, positive, negatives: Sequence, cfg: LossConfig = LossConfig(), similarity=None) -> Tensor:
    """Single-anchor InfoNCE; the denominator runs over {positive} + negatives.

    ``similarity`` maps two feature tensors to a scalar tensor. It defaults to
    the periodic similarity named in ``cfg``.
    """
    if len(negatives) == 0:
        raise ContractError("InfoNCE needs at least one negative")
    if similarity is None:
        from .similarity import periodic_similarity

        def similarity(u, v):
            return periodic_similarity(u, v, cfg.similarity, strict=False)

    sims = [similarity(anchor, positive)] + [similarity(anchor, n) for n in negatives]
    stacked = nt.concat([nt.reshape(s, (1,)) for s in sims], axis=0)
    return infonce_from_similarities(stacked, 0, cfg.temperature)


def generalized_loss_from_similarities(sims: Tensor, targets: np.ndarray, temperature: float) -> Tensor:
    """Mean over leading batch dims of ``sum_i sum_j -t_ij log softmax_j(sims_i / nu)``."""
    if sims.shape[-1] != sims.shape[-2] or targets.shape != sims.shape:
        raise DimensionError(f"similarities {sims.shape} and targets {targets.shape} must be matching square stacks")
    logp = nt.log_softmax(sims / temperature, axis=-1)
    per_entry = logp * Tensor(-targets)
    per_sample = nt.reduce(nt.reshape(per_entry, (-1, sims.shape[-2] * sims.shape[-1])), "sum", axis=1)
    return nt.reduce(per_sample, "mean")


def _check_speeds(speeds: np.ndarray) -> None:
    if speeds.shape[-1] < 2:
        raise ContractError("the generalized loss needs at least two views")
    if np.any(np.diff(speeds, axis=-1) <= 0):
        raise ContractError("speed labels must be strictly increasing")


def simper_loss(A, B, speeds, cfg: LossConfig = LossConfig()) -> Tensor:
    """Generalized contrastive loss over M speed views of each sample.

    ``A`` and ``B`` hold the two invariant feature sets, shaped (M, T, C) for
    one sample or (n, M, T, C) for a batch; the batch loss is the mean of the
    per-sample sums over views.
    """
    speeds = np.asarray(speeds, dtype=np.float64)
    _check_speeds(speeds)
    sims = similarity_matrix(A, B, cfg.similarity)
    if sims.shape[:-1] != speeds.shape:
        raise DimensionError(f"speeds {speeds.shape} do not match similarity stack {sims.shape}")
    targets = soft_targets(speeds, cfg.effective_kernel)
    return generalized_loss_from_similarities(sims, targets, cfg.temperature)
