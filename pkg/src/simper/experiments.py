"""End-to-end pipelines shared by the CLI and the acceptance suite:
data preparation, one training method, and evaluation of the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigurationError
from .evaluation import MetricsReport, compute_metrics, encode_dataset, fft_eval, knn_eval
from .synthdata import DatasetManifest, SplitRule, build_split, generate_rotating_sprites, generate_sine1d, load_arrays
from .train import Checkpoint, TrainResult, predict_supervised, pretrain_instance_discrimination, pretrain_simper, train_supervised

__all__ = ["DataBundle", "RunOutcome", "prepare_data", "run_method", "evaluate_checkpoint", "subset_metrics"]

_SPLIT_RULES = {
    "uniform": "uniform",
    "interpolation": "interpolation_gap",
    "extrapolation": "extrapolation_gap",
    "spurious": "spurious",
    "subsample": "uniform",
}


@dataclass
class DataBundle:
    pool: DatasetManifest
    train: DatasetManifest
    test: DatasetManifest
    labelled: DatasetManifest

    @property
    def freq_range(self) -> tuple[float, float]:
        return tuple(self.pool.freq_range)


def _generate(cfg: ExperimentConfig, root: Path) -> DatasetManifest:
    d = cfg.data
    if d.preset == "rotating":
        return generate_rotating_sprites(
            d.n, (d.freq_low, d.freq_high), d.seed, root, fs=d.fs, num_frames=d.num_frames, canvas=(d.canvas, d.canvas), split="pool"
        )
    return generate_sine1d(d.n, (d.freq_low, d.freq_high), d.noise_sigma, d.seed, root, fs=d.fs, num_frames=d.num_frames, split="pool")


def prepare_data(cfg: ExperimentConfig, root) -> DataBundle:
    """Generate the pool, split it, and apply the data / label fractions.

    ``data.fraction`` shrinks the training set used for every stage;
    ``data.label_fraction`` only shrinks the labelled subset used for
    supervised training and fine-tuning.
    """
    d = cfg.data
    root = Path(root)
    pool = _generate(cfg, root)
    pool.save()
    band = tuple(d.band) if d.band else None
    rule = SplitRule(_SPLIT_RULES[d.split], band=band, test_fraction=d.test_fraction)
    train, test = build_split(pool, rule, seed=d.seed)
    if d.fraction < 1.0 or d.split == "subsample":
        train, _ = build_split(train, SplitRule("subsample", fraction=d.fraction), seed=d.seed + 1)
    labelled = train
    if d.label_fraction < 1.0:
        labelled, _ = build_split(train, SplitRule("subsample", fraction=d.label_fraction), seed=d.seed + 2)
    train = train.with_entries("train", train.entries)
    labelled = labelled.with_entries("labelled", labelled.entries)
    for m in (train, test, labelled):
        m.save()
    return DataBundle(pool, train, test, labelled)


@dataclass
class RunOutcome:
    method: str
    seed: int
    reports: dict[str, MetricsReport]
    predictions: dict[str, np.ndarray]
    checkpoint: Checkpoint
    train_result: TrainResult | None = None
    extras: dict = field(default_factory=dict)


def evaluate_checkpoint(ckpt: Checkpoint, bundle: DataBundle, cfg: ExperimentConfig, protocols=None, config_hash: str = "") -> tuple[dict, dict]:
    """FFT and / or 1-NN evaluation of the encoder in ``ckpt``."""
    protocols = tuple(protocols or cfg.eval.protocols)
    params = ckpt.tensors(requires_grad=False)
    x_te, y_te = load_arrays(bundle.test)
    z_te = encode_dataset(x_te, params, ckpt.encoder)
    reports, preds = {}, {}
    if "fft" in protocols:
        reports["fft"], preds["fft"] = fft_eval(z_te, y_te, bundle.test.sample_rate, bundle.freq_range, config_hash)
    if "knn" in protocols:
        x_tr, y_tr = load_arrays(bundle.train)
        z_tr = encode_dataset(x_tr, params, ckpt.encoder)
        reports["knn"], preds["knn"] = knn_eval(z_tr, y_tr, z_te, y_te, cfg.eval.knn_similarity, bundle.freq_range, config_hash)
    return reports, preds


def run_method(cfg: ExperimentConfig, bundle: DataBundle, seed: int, method: str | None = None, init: Checkpoint | None = None) -> RunOutcome:
    """Train one method on ``bundle`` and evaluate it.

    simper / infonce_baseline report the feature protocols; supervised and
    finetune report the regression head as protocol ``head``.
    """
    method = method or cfg.experiment.method
    h = cfg.config_hash()
    if method in ("simper", "infonce_baseline"):
        tcfg = cfg.train_config(seed)
        fn = pretrain_simper if method == "simper" else pretrain_instance_discrimination
        result = fn(bundle.train, tcfg)
        result.checkpoint.meta["config_hash"] = h
        reports, preds = evaluate_checkpoint(result.checkpoint, bundle, cfg, config_hash=h)
        return RunOutcome(method, seed, reports, preds, result.checkpoint, result)
    if method in ("supervised", "finetune"):
        if method == "finetune" and init is None:
            pre = pretrain_simper(bundle.train, cfg.train_config(seed))
            init = pre.checkpoint
        result = train_supervised(bundle.labelled, cfg.supervised_config(seed), init=init if method == "finetune" else None)
        result.checkpoint.meta["config_hash"] = h
        x_te, y_te = load_arrays(bundle.test)
        pred = predict_supervised(result.checkpoint, x_te, clip_len=cfg.data.num_frames)
        rep = compute_metrics(y_te, pred, "head", h)
        return RunOutcome(method, seed, {"head": rep}, {"head": pred}, result.checkpoint, result)
    raise ConfigurationError(f"unknown method {method!r}")


def subset_metrics(y, preds, mask) -> MetricsReport:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ConfigurationError("empty evaluation subset")
    return compute_metrics(np.asarray(y)[mask], np.asarray(preds)[mask])
