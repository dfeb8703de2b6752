"""Experiment configuration: a sectioned key/value file with strict keys.

Every section maps onto one dataclass; unknown sections or keys are rejected
before any computation starts.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .augment import InvariantAugConfig, SpeedAugConfig
from .encoder import EncoderConfig
from .errors import ConfigurationError
from .loss import LossConfig
from .similarity import LabelKernel, SimilarityKind
from .train import SupervisedConfig, TrainConfig

__all__ = [
    "OUTPUT_ROOT_ENV",
    "DataSection",
    "AugmentSection",
    "SimilaritySection",
    "LossSection",
    "EncoderSection",
    "TrainSection",
    "EvalSection",
    "ExperimentSection",
    "AblateSection",
    "ExperimentConfig",
    "load_config",
    "output_root",
]

OUTPUT_ROOT_ENV = "SIMPER_OUTPUT_ROOT"


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


@dataclass
class DataSection:
    preset: str = "rotating"
    n: int = 400
    seed: int = 0
    freq_low: float = 0.5
    freq_high: float = 5.0
    fs: float = 30.0
    num_frames: int = 150
    canvas: int = 16
    noise_sigma: float = 0.0
    split: str = "uniform"
    band: tuple[float, ...] = ()
    fraction: float = 1.0
    test_fraction: float = 0.5
    label_fraction: float = 1.0

    def validate(self):
        try:
            self.band = tuple(float(b) for b in self.band)
        except ValueError:
            raise ConfigurationError(f"data.band must be numeric, got {self.band}") from None
        if self.preset not in ("rotating", "sine1d"):
            raise ConfigurationError(f"unknown data preset {self.preset!r}")
        if self.split not in ("uniform", "interpolation", "extrapolation", "spurious", "subsample"):
            raise ConfigurationError(f"unknown split {self.split!r}")
        if self.split in ("interpolation", "extrapolation") and len(self.band) != 2:
            raise ConfigurationError("gap splits need band = low:high")
        if self.n < 2:
            raise ConfigurationError("data.n must be at least 2")
        if not 0 < self.fraction <= 1 or not 0 < self.label_fraction <= 1:
            raise ConfigurationError("fractions must lie in (0, 1]")


@dataclass
class AugmentSection:
    s_min: float = 0.5
    s_max: float = 2.0
    num_views: int = 10
    target_len: int = 64
    p_reverse: float = 0.5
    max_delay: int = 8
    noise_sigma: float = 0.05
    brightness_jitter: float = 0.1
    crop_scale_range: tuple[float, ...] = (0.8, 1.0)


@dataclass
class SimilaritySection:
    kind: str = "mxcorr"


@dataclass
class LossSection:
    temperature: float = 0.5
    mode: str = "generalized"
    label_kernel: str = "neg_l1"
    # 0 means one speed stratum: (s_max - s_min) / num_views
    label_scale: float = 0.0
    label_eps: float = 0.1


@dataclass
class EncoderSection:
    hidden_dims: tuple[int, ...] = (24,)
    feature_channels: int = 4
    temporal_context: int = 3


@dataclass
class TrainSection:
    epochs: int = 60
    batch_size: int = 16
    lr: float = 1e-3
    decay_epochs: tuple[int, ...] = (40, 50)
    decay_factor: float = 0.1
    grad_norm_limit: float = 1e4
    degenerate_abort_fraction: float = 0.5
    eval_every: int = 0
    finetune_epochs: int = 20
    finetune_lr: float = 1e-3
    finetune_decay_epochs: tuple[int, ...] = (12, 16)


@dataclass
class EvalSection:
    protocols: tuple[str, ...] = ("fft", "knn")
    knn_similarity: str = "mxcorr"

    def validate(self):
        bad = set(self.protocols) - {"fft", "knn"}
        if bad:
            raise ConfigurationError(f"unknown eval protocols {sorted(bad)}")
        SimilarityKind(self.knn_similarity)


@dataclass
class ExperimentSection:
    name: str = "default"
    output_dir: str = ""
    seeds: tuple[int, ...] = (0,)
    method: str = "simper"

    def validate(self):
        if self.method not in ("simper", "infonce_baseline", "supervised"):
            raise ConfigurationError(f"unknown method {self.method!r}")
        if not self.seeds:
            raise ConfigurationError("experiment.seeds must list at least one seed")


ABLATION_AXES = ("speed_range", "num_views", "similarity", "loss_mode", "data_fraction", "label_fraction")


@dataclass
class AblateSection:
    axis: str = ""
    values: tuple[str, ...] = ()
    parallel: bool = False

    def validate(self):
        if self.axis and self.axis not in ABLATION_AXES:
            raise ConfigurationError(f"unknown ablation axis {self.axis!r}; choose from {', '.join(ABLATION_AXES)}")


_SECTIONS = {
    "data": DataSection,
    "augment": AugmentSection,
    "similarity": SimilaritySection,
    "loss": LossSection,
    "encoder": EncoderSection,
    "train": TrainSection,
    "eval": EvalSection,
    "experiment": ExperimentSection,
    "ablate": AblateSection,
}


def _parse_value(raw: str, current):
    raw = raw.strip()
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        items = [v.strip() for v in raw.replace(":", ",").split(",") if v.strip()]
        sample = current[0] if current else ""
        if isinstance(sample, int) and not isinstance(sample, bool):
            return tuple(int(v) for v in items)
        if isinstance(sample, float):
            return tuple(float(v) for v in items)
        return tuple(items)
    return raw


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    similarity: SimilaritySection = field(default_factory=SimilaritySection)
    loss: LossSection = field(default_factory=LossSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    ablate: AblateSection = field(default_factory=AblateSection)

    # ------------------------------------------------------------ building

    def set(self, section: str, key: str, raw: str) -> None:
        """Apply one textual override; rejects unknown sections and keys."""
        if section not in _SECTIONS:
            raise ConfigurationError(f"unknown config section [{section}]")
        sec = getattr(self, section)
        names = {f.name for f in fields(sec)}
        if key not in names:
            raise ConfigurationError(f"unknown key {key!r} in [{section}]")
        try:
            setattr(sec, key, _parse_value(raw, getattr(sec, key)))
        except ValueError as exc:
            raise ConfigurationError(f"bad value for {section}.{key}: {exc}") from None

    def validate(self) -> "ExperimentConfig":
        """Build every derived config once so violations surface before compute."""
        for name in _SECTIONS:
            sec = getattr(self, name)
            if hasattr(sec, "validate"):
                sec.validate()
        try:
            self.train_config(0)
            self.supervised_config(0)
            SimilarityKind(self.similarity.kind)
        except ConfigurationError:
            raise
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        if self.augment.target_len + self.augment.max_delay > self.data.num_frames / self.augment.s_max:
            raise ConfigurationError(
                f"(target_len + max_delay) * s_max = {(self.augment.target_len + self.augment.max_delay) * self.augment.s_max:g} "
                f"exceeds num_frames = {self.data.num_frames}"
            )
        if self.experiment.method == "infonce_baseline" and self.train.batch_size < 2:
            raise ConfigurationError("infonce_baseline needs train.batch_size >= 2")
        return self

    # ------------------------------------------------------------- derived

    @property
    def frame_input_dim(self) -> int:
        if self.data.preset == "sine1d":
            return 1
        channels = 3 if self.data.split == "spurious" else 1
        return self.data.canvas * self.data.canvas * channels

    def encoder_config(self) -> EncoderConfig:
        e = self.encoder
        return EncoderConfig(self.frame_input_dim, tuple(e.hidden_dims), e.feature_channels, e.temporal_context)

    def loss_config(self) -> LossConfig:
        l, a = self.loss, self.augment
        scale = l.label_scale if l.label_scale > 0 else (a.s_max - a.s_min) / a.num_views
        kernel = LabelKernel(l.label_kernel, scale, l.label_eps)
        return LossConfig(l.temperature, SimilarityKind(self.similarity.kind), kernel, l.mode)

    def train_config(self, seed: int) -> TrainConfig:
        a, t = self.augment, self.train
        return TrainConfig(
            epochs=t.epochs,
            batch_size=t.batch_size,
            seed=seed,
            lr=t.lr,
            decay_epochs=tuple(t.decay_epochs),
            decay_factor=t.decay_factor,
            speed=SpeedAugConfig(a.s_min, a.s_max, a.num_views, a.target_len),
            invariant=InvariantAugConfig(a.p_reverse, a.max_delay, a.noise_sigma, a.brightness_jitter, tuple(a.crop_scale_range)),
            loss=self.loss_config(),
            encoder=self.encoder_config(),
            eval_every=t.eval_every,
            grad_norm_limit=t.grad_norm_limit,
            degenerate_abort_fraction=t.degenerate_abort_fraction,
        )

    def supervised_config(self, seed: int) -> SupervisedConfig:
        t = self.train
        return SupervisedConfig(
            epochs=t.finetune_epochs,
            batch_size=t.batch_size,
            seed=seed,
            lr=t.finetune_lr,
            decay_epochs=tuple(t.finetune_decay_epochs),
            decay_factor=t.decay_factor,
            encoder=self.encoder_config(),
            clip_len=self.data.num_frames,
        )

    # ---------------------------------------------------------- identity

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    def config_hash(self) -> str:
        """Hash of everything except seeds, output paths and ablation bookkeeping."""
        d = self.to_dict()
        d["experiment"] = {"name": d["experiment"]["name"], "method": d["experiment"]["method"]}
        d.pop("ablate")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def dumps(self) -> str:
        """Render back to the sectioned text format."""
        out = []
        for name in _SECTIONS:
            out.append(f"[{name}]")
            for k, v in asdict(getattr(self, name)).items():
                if isinstance(v, (tuple, list)):
                    v = ",".join(str(x) for x in v)
                out.append(f"{k} = {v}")
            out.append("")
        return "\n".join(out)

    def copy(self) -> "ExperimentConfig":
        return ExperimentConfig(**{name: replace(getattr(self, name)) for name in _SECTIONS})


def load_config(path=None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read a config file (optional) and apply ``section.key=value`` overrides."""
    cfg = ExperimentConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
        parser.optionxform = str
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigurationError(f"cannot parse {path}: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                cfg.set(section, key, raw)
    for item in overrides or []:
        lhs, sep, raw = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot:
            raise ConfigurationError(f"override {item!r} must look like section.key=value")
        cfg.set(section, key, raw)
    return cfg
