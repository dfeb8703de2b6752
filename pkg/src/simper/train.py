"""Adam, periodic contrastive pretraining, the instance-discrimination baseline and
supervised regression / fine-tuning.

Datasets are passed either as a :class:`DatasetManifest` or as an
``(N, T, ...)`` frame array with a matching frequency vector.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import ndtensor as nt
from .augment import InvariantAugConfig, SpeedAugConfig, invariant_view, make_training_views
from .encoder import EncoderConfig, encode_batch, init_params
from .errors import ConfigurationError, DegenerateSignalError, TrainingDivergenceError
from .loss import LossConfig, cosine_similarity_matrix, simper_loss
from .ndtensor import Tensor
from .rng import SplitMix64, derive_seed
from .similarity import DEGENERATE_VARIANCE
from .synthdata import DatasetManifest, load_arrays

__all__ = [
    "AdamState",
    "adam_step",
    "lr_at_epoch",
    "TrainConfig",
    "SupervisedConfig",
    "Checkpoint",
    "TrainResult",
    "pretrain_simper",
    "pretrain_instance_discrimination",
    "train_supervised",
    "predict_supervised",
]


# -------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, grads: dict[str, np.ndarray] | None = None) -> AdamState:
    """One bias-corrected Adam update, in place. Gradients default to ``p.grad``."""
    grads = grads if grads is not None else {k: p.grad if p.grad is not None else np.zeros(p.shape) for k, p in params.items()}
    for name in params:
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != params[name].shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"non-finite gradient in parameter {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - state.beta1) * g if m is None else state.beta1 * m + (1 - state.beta1) * g
        v = (1 - state.beta2) * g * g if v is None else state.beta2 * v + (1 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


def lr_at_epoch(epoch: int, base_lr: float, decay_epochs, factor: float) -> float:
    """Step schedule; ``epoch`` is 0-based and a decay applies from its listed epoch on."""
    return base_lr * factor ** sum(1 for d in decay_epochs if epoch >= d)


# ------------------------------------------------------------------ configs


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 16
    seed: int = 0
    lr: float = 1e-3
    decay_epochs: tuple[int, ...] = (40, 50)
    decay_factor: float = 0.1
    speed: SpeedAugConfig = field(default_factory=SpeedAugConfig)
    invariant: InvariantAugConfig = field(default_factory=InvariantAugConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    eval_every: int = 0
    grad_norm_limit: float = 1e4
    degenerate_abort_fraction: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(int(d) for d in self.decay_epochs))
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigurationError("lr must be positive")


@dataclass(frozen=True)
class SupervisedConfig:
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    lr: float = 1e-3
    decay_epochs: tuple[int, ...] = (12, 16)
    decay_factor: float = 0.1
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    clip_len: int = 150

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(int(d) for d in self.decay_epochs))
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")


# --------------------------------------------------------------- checkpoint


@dataclass
class Checkpoint:
    encoder: EncoderConfig
    params: dict[str, np.ndarray]
    head: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict[str, str] = field(default_factory=dict)

    def tensors(self, requires_grad: bool = True) -> dict[str, Tensor]:
        return {k: Tensor(v.copy(), requires_grad=requires_grad) for k, v in self.params.items()}

    def save(self, directory) -> Path:
        blob = {f"enc.{k}": v for k, v in self.params.items()}
        blob.update({f"head.{k}": v for k, v in self.head.items()})
        meta = dict(self.meta)
        meta["encoder"] = json.dumps(asdict(self.encoder), sort_keys=True)
        return nt.save_checkpoint(directory, blob, meta)

    @classmethod
    def load(cls, directory) -> "Checkpoint":
        blob, meta = nt.load_checkpoint(directory)
        enc = json.loads(meta.pop("encoder"))
        enc["hidden_dims"] = tuple(enc["hidden_dims"])
        params = {k[4:]: v for k, v in blob.items() if k.startswith("enc.")}
        head = {k[5:]: v for k, v in blob.items() if k.startswith("head.")}
        return cls(EncoderConfig(**enc), params, head, meta)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: list[float]
    lrs: list[float]
    degenerate_counts: list[int]
    grad_norms: list[float] = field(default_factory=list)

    def write_loss_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        h = self.checkpoint.meta.get("config_hash", "")
        rows = ["epoch,mean_loss,lr,config_hash"] + [f"{i},{l!r},{r!r},{h}" for i, (l, r) in enumerate(zip(self.losses, self.lrs))]
        path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        return path


# ------------------------------------------------------------------ helpers


def _as_arrays(dataset, freqs=None) -> tuple[np.ndarray, np.ndarray | None, float, float | None]:
    """(frames, freqs, fs, f_max) from a manifest or raw arrays."""
    if isinstance(dataset, DatasetManifest):
        frames, f = load_arrays(dataset)
        return frames, f, dataset.sample_rate, float(dataset.freq_range[1])
    frames = np.asarray(dataset, dtype=np.float64)
    return frames, None if freqs is None else np.asarray(freqs, dtype=np.float64), 30.0, None


def _frame_dim(frames: np.ndarray) -> int:
    return int(np.prod(frames.shape[2:])) if frames.ndim > 2 else 1


def _check_encoder(frames: np.ndarray, enc: EncoderConfig) -> EncoderConfig:
    d = _frame_dim(frames)
    if d != enc.frame_input_dim:
        raise ConfigurationError(f"encoder expects {enc.frame_input_dim} values per frame, data has {d}")
    return enc


def _batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    order = SplitMix64(seed, 0x45504F, epoch).permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _grad_norm(params: dict[str, Tensor]) -> float:
    return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params.values() if p.grad is not None))


def _guarded_step(params, state: AdamState, limit: float) -> float:
    gn = _grad_norm(params)
    if not math.isfinite(gn) or gn > limit:
        raise TrainingDivergenceError(f"gradient norm {gn:.3g} exceeds the divergence guard {limit:g}")
    adam_step(params, state)
    return gn


def _degenerate_samples(z: np.ndarray) -> np.ndarray:
    """(b, M, T, C) -> (b,) flags: some view with no temporal variance in any channel."""
    var = z.var(axis=2).max(axis=-1)
    return np.any(var <= DEGENERATE_VARIANCE, axis=1)


# --------------------------------------------------------------- pretraining


def pretrain_simper(dataset, cfg: TrainConfig = TrainConfig(), *, init: Checkpoint | None = None, log: Callable | None = None) -> TrainResult:
    """Self-supervised training with intra-sample speed negatives.

    Each sample contributes its own M-view loss; batches only average
    gradients, so negatives never come from other samples.
    """
    frames, _, fs, f_max = _as_arrays(dataset)
    enc = _check_encoder(frames, cfg.encoder)
    n = frames.shape[0]
    if n == 0:
        raise ConfigurationError("empty training set")
    params = init.tensors() if init is not None else init_params(enc, derive_seed(cfg.seed, 0x50524D))
    state = AdamState(lr=cfg.lr)
    losses, lrs, degens, norms = [], [], [], []
    tl = cfg.speed.target_len
    for epoch in range(cfg.epochs):
        state.lr = lr_at_epoch(epoch, cfg.lr, cfg.decay_epochs, cfg.decay_factor)
        total, count, n_degen = 0.0, 0, 0
        for batch in _batches(n, cfg.batch_size, cfg.seed, epoch):
            va, vb, sp = [], [], []
            for i in batch:
                a, b, s = make_training_views(
                    frames[i], cfg.speed, cfg.invariant, derive_seed(cfg.seed, int(i), epoch), f_max=f_max, sample_rate_hz=fs
                )
                va.append(a.views)
                vb.append(b.views)
                sp.append(s)
            bsz, m = len(batch), cfg.speed.num_views
            xa = np.stack(va).reshape((bsz * m, tl) + frames.shape[2:])
            xb = np.stack(vb).reshape((bsz * m, tl) + frames.shape[2:])
            za = nt.reshape(encode_batch(xa, params, enc), (bsz, m, tl, enc.feature_channels))
            zb = nt.reshape(encode_batch(xb, params, enc), (bsz, m, tl, enc.feature_channels))
            bad = _degenerate_samples(za.data) | _degenerate_samples(zb.data)
            n_degen += int(bad.sum())
            if bad.mean() > cfg.degenerate_abort_fraction:
                raise DegenerateSignalError(f"{int(bad.sum())} of {bsz} samples in a batch have constant features (epoch {epoch})")
            loss = simper_loss(za, zb, np.stack(sp), cfg.loss)
            if not math.isfinite(loss.item()):
                raise TrainingDivergenceError(f"non-finite loss at epoch {epoch}")
            nt.zero_grad(params.values())
            nt.backward(loss)
            norms.append(_guarded_step(params, state, cfg.grad_norm_limit))
            total += loss.item() * bsz
            count += bsz
        losses.append(total / count)
        lrs.append(state.lr)
        degens.append(n_degen)
        if log is not None:
            log(epoch, losses[-1], state.lr)
    meta = {"method": "simper", "seed": str(cfg.seed), "epochs": str(cfg.epochs)}
    ckpt = Checkpoint(enc, {k: p.data.copy() for k, p in params.items()}, meta=meta)
    return TrainResult(ckpt, losses, lrs, degens, norms)


def _id_views(x: np.ndarray, cfg: TrainConfig, seed: int) -> np.ndarray:
    tl = cfg.speed.target_len
    return np.stack([invariant_view(x, cfg.invariant, tl, derive_seed(seed, k)) for k in (1, 2)])


def instance_discrimination_loss(za: Tensor, zb: Tensor, temperature: float) -> Tensor:
    """Symmetric InfoNCE between two view sets; row i of ``za`` pairs with row i of ``zb``."""
    sims = cosine_similarity_matrix(za, zb)
    b = sims.shape[0]
    diag = (np.arange(b), np.arange(b))
    rows = nt.log_softmax(sims / temperature, axis=1)
    cols = nt.log_softmax(nt.transpose(sims) / temperature, axis=1)
    per_dir = nt.reduce(nt.take(rows, diag), "mean") + nt.reduce(nt.take(cols, diag), "mean")
    return per_dir * -0.5


def pretrain_instance_discrimination(dataset, cfg: TrainConfig = TrainConfig(), *, log: Callable | None = None) -> TrainResult:
    """Instance-discrimination baseline: other samples in the batch are the negatives."""
    if cfg.batch_size < 2:
        raise ConfigurationError("instance discrimination needs batch_size >= 2 for cross-instance negatives")
    frames, _, _, _ = _as_arrays(dataset)
    enc = _check_encoder(frames, cfg.encoder)
    n = frames.shape[0]
    if n < 2:
        raise ConfigurationError("instance discrimination needs at least two samples")
    params = init_params(enc, derive_seed(cfg.seed, 0x50524D))
    state = AdamState(lr=cfg.lr)
    losses, lrs, degens, norms = [], [], [], []
    tl = cfg.speed.target_len
    for epoch in range(cfg.epochs):
        state.lr = lr_at_epoch(epoch, cfg.lr, cfg.decay_epochs, cfg.decay_factor)
        total, count = 0.0, 0
        for batch in _batches(n, cfg.batch_size, cfg.seed, epoch):
            if len(batch) < 2:
                continue
            views = np.stack([_id_views(frames[i], cfg, derive_seed(cfg.seed, int(i), epoch)) for i in batch])
            za = encode_batch(views[:, 0], params, enc)
            zb = encode_batch(views[:, 1], params, enc)
            loss = instance_discrimination_loss(za, zb, cfg.loss.temperature)
            if not math.isfinite(loss.item()):
                raise TrainingDivergenceError(f"non-finite loss at epoch {epoch}")
            nt.zero_grad(params.values())
            nt.backward(loss)
            norms.append(_guarded_step(params, state, cfg.grad_norm_limit))
            total += loss.item() * len(batch)
            count += len(batch)
        losses.append(total / max(count, 1))
        lrs.append(state.lr)
        degens.append(0)
        if log is not None:
            log(epoch, losses[-1], state.lr)
    meta = {"method": "infonce_baseline", "seed": str(cfg.seed), "epochs": str(cfg.epochs)}
    ckpt = Checkpoint(enc, {k: p.data.copy() for k, p in params.items()}, meta=meta)
    return TrainResult(ckpt, losses, lrs, degens, norms)


# --------------------------------------------------------------- supervised


def _pooled(frames: np.ndarray, params, enc: EncoderConfig, clip_len: int) -> Tensor:
    # the head reads un-centred features; centred ones have zero temporal mean
    z = encode_batch(frames[:, :clip_len], params, enc, center=False)
    return nt.reduce(z, "mean", axis=1)


def _head_out(pooled: Tensor, head: dict[str, Tensor]) -> Tensor:
    n = pooled.shape[0]
    y = nt.matmul(pooled, head["W"]) + nt.expand(nt.reshape(head["b"], (1, 1)), (n, 1))
    return nt.reshape(y, (n,))


def train_supervised(
    dataset,
    cfg: SupervisedConfig = SupervisedConfig(),
    init: Checkpoint | None = None,
    *,
    freqs=None,
    freeze_encoder: bool = False,
    feature_fn: Callable[[np.ndarray], np.ndarray] | None = None,
    log: Callable | None = None,
) -> TrainResult:
    """Encoder + linear head on the temporal feature mean, L1 loss.

    ``init`` turns this into fine-tuning. ``feature_fn`` replaces the encoder
    with fixed (N, T, C) features and trains the head only.
    """
    frames, labels, _, _ = _as_arrays(dataset, freqs)
    if labels is None or len(labels) != frames.shape[0]:
        raise ConfigurationError("supervised training needs one frequency label per sample")
    n = frames.shape[0]
    if n == 0:
        raise ConfigurationError("empty training set")
    fixed = None
    if feature_fn is not None:
        fixed = np.asarray(feature_fn(frames), dtype=np.float64).mean(axis=1)
        enc = cfg.encoder
        params = {}
        width = fixed.shape[1]
    else:
        enc = init.encoder if init is not None else _check_encoder(frames, cfg.encoder)
        params = init.tensors(requires_grad=not freeze_encoder) if init is not None else init_params(enc, derive_seed(cfg.seed, 0x5355))
        if freeze_encoder:
            for p in params.values():
                p.requires_grad = False
        width = enc.feature_channels
    rng = SplitMix64(cfg.seed, 0x48454144)
    bound = math.sqrt(6.0 / (width + 1))
    head = {"W": Tensor(rng.uniform((width, 1), -bound, bound), requires_grad=True), "b": Tensor(np.array(float(np.mean(labels))), requires_grad=True)}
    if fixed is not None or freeze_encoder:
        trainable = dict(head)
    else:
        trainable = {**params, "head.W": head["W"], "head.b": head["b"]}
    state = AdamState(lr=cfg.lr)
    losses, lrs, norms = [], [], []
    for epoch in range(cfg.epochs):
        state.lr = lr_at_epoch(epoch, cfg.lr, cfg.decay_epochs, cfg.decay_factor)
        total = 0.0
        for batch in _batches(n, cfg.batch_size, cfg.seed, epoch):
            pooled = Tensor(fixed[batch]) if fixed is not None else _pooled(frames[batch], params, enc, cfg.clip_len)
            pred = _head_out(pooled, head)
            err = pred - Tensor(labels[batch])
            # |e| = relu(e) + relu(-e): subgradient 0 at e = 0
            loss = nt.reduce(nt.nonlinearity(err, "relu") + nt.nonlinearity(-err, "relu"), "mean")
            nt.zero_grad(trainable.values())
            nt.backward(loss)
            norms.append(_guarded_step(trainable, state, 1e12))
            total += loss.item() * len(batch)
        losses.append(total / n)
        lrs.append(state.lr)
        if log is not None:
            log(epoch, losses[-1], state.lr)
    meta = {"method": "finetune" if init is not None else "supervised", "seed": str(cfg.seed), "epochs": str(cfg.epochs)}
    if freeze_encoder:
        meta["frozen_encoder"] = "1"
    if init is not None:
        meta.update({f"init.{k}": v for k, v in init.meta.items() if "." not in k})
    ckpt = Checkpoint(enc, {k: p.data.copy() for k, p in params.items()}, {k: v.data.copy() for k, v in head.items()}, meta)
    return TrainResult(ckpt, losses, lrs, [0] * cfg.epochs, norms)


def predict_supervised(ckpt: Checkpoint, frames: np.ndarray, clip_len: int = 150, batch_size: int = 32, features: np.ndarray | None = None) -> np.ndarray:
    """Head predictions for (N, T, ...) frames, or for fixed (N, T, C) features."""
    if not ckpt.head:
        raise ConfigurationError("checkpoint has no regression head")
    head = {k: Tensor(v) for k, v in ckpt.head.items()}
    if features is not None:
        return _head_out(Tensor(np.asarray(features, dtype=np.float64).mean(axis=1)), head).data.copy()
    params = ckpt.tensors(requires_grad=False)
    frames = np.asarray(frames, dtype=np.float64)
    out = [_head_out(_pooled(frames[i : i + batch_size], params, ckpt.encoder, clip_len), head).data for i in range(0, len(frames), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)
