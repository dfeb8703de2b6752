"""Deterministic synthetic periodic datasets and experiment splits.

Rotating sprites are described as unions of capsules (line segments with a
radius) around the canvas centre. Each frame rotates the sample points rather
than a raster, and coverage is counted on a 2x2 sub-pixel grid, so pixel
values are exact multiples of 1/4.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import AliasingError, ConfigurationError, DataError
from .rng import SplitMix64

__all__ = [
    "GENERATOR_VERSION",
    "SPRITES",
    "PALETTE",
    "SampleSpec",
    "ManifestEntry",
    "DatasetManifest",
    "SplitRule",
    "render_sample",
    "generate_rotating_sprites",
    "generate_sine1d",
    "build_split",
    "load_arrays",
]

GENERATOR_VERSION = "1"

# (x0, y0, x1, y1, radius) in canvas-radius units. Every sprite has a stem
# whose rounded end touches the rotation centre, so the central pixels are lit
# for a single stretch of each revolution; the decorations stay clear of the
# centre. None of the shapes has rotational symmetry.
SPRITES: list[list[tuple[float, float, float, float, float]]] = [
    [(0.3, 0.0, 0.3, 0.0, 0.3)],
    [(0.13, 0.0, 0.75, 0.0, 0.13)],
    [(0.13, 0.0, 0.7, 0.0, 0.13), (0.7, 0.0, 0.7, 0.4, 0.11)],
    [(0.13, 0.0, 0.75, 0.0, 0.13), (0.75, -0.1, 0.75, 0.4, 0.11)],
    [(0.25, 0.0, 0.25, 0.0, 0.25), (0.6, 0.45, 0.6, 0.45, 0.12)],
    [(0.13, 0.0, 0.55, 0.0, 0.13), (0.55, 0.0, 0.8, -0.25, 0.11)],
    [(0.13, 0.0, 0.75, 0.0, 0.13), (0.75, 0.0, 0.75, 0.35, 0.11), (0.45, 0.0, 0.45, 0.3, 0.11)],
    [(0.13, 0.0, 0.5, 0.0, 0.13), (0.5, 0.0, 0.75, 0.3, 0.11), (0.5, 0.0, 0.75, -0.3, 0.11)],
    [(0.13, 0.0, 0.45, 0.0, 0.13), (0.45, 0.0, 0.45, -0.5, 0.11), (0.45, -0.5, 0.75, -0.5, 0.11)],
    [(0.13, 0.0, 0.75, 0.0, 0.13), (0.75, 0.0, 0.65, 0.35, 0.11), (0.65, 0.35, 0.4, 0.35, 0.11), (0.4, 0.35, 0.45, 0.0, 0.11)],
]

PALETTE = np.array(
    [
        [1.0, 0.2, 0.2],
        [0.2, 1.0, 0.2],
        [0.2, 0.2, 1.0],
        [1.0, 1.0, 0.2],
        [1.0, 0.2, 1.0],
        [0.2, 1.0, 1.0],
        [1.0, 0.6, 0.2],
        [0.6, 0.2, 1.0],
        [0.6, 1.0, 0.6],
        [1.0, 1.0, 1.0],
    ]
)


@dataclass(frozen=True)
class SampleSpec:
    freq_hz: float
    phase: float = 0.0
    sprite_id: int = 0
    color_id: int = 0
    fs: float = 30.0
    num_frames: int = 150
    canvas: tuple[int, int] = (16, 16)
    channels: int = 1
    kind: str = "rotating"
    noise_sigma: float = 0.0
    noise_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "canvas", tuple(int(c) for c in self.canvas))
        if not 0 < self.freq_hz < self.fs / 2:
            raise AliasingError(f"frequency {self.freq_hz} Hz is not inside (0, {self.fs / 2}) Hz")

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return (self.canvas[0], self.canvas[1], self.channels)


@dataclass
class ManifestEntry:
    id: str
    file: str
    spec: SampleSpec
    sha256: str

    @property
    def freq_hz(self) -> float:
        return self.spec.freq_hz

    def to_json(self) -> dict:
        return {"id": self.id, "file": self.file, "freq_hz": self.spec.freq_hz, "sha256": self.sha256, "spec": asdict(self.spec)}

    @classmethod
    def from_json(cls, d: dict) -> "ManifestEntry":
        spec = dict(d["spec"])
        spec["canvas"] = tuple(spec["canvas"])
        return cls(d["id"], d["file"], SampleSpec(**spec), d["sha256"])


@dataclass
class DatasetManifest:
    split: str
    entries: list[ManifestEntry]
    global_seed: int
    root: Path
    freq_range: tuple[float, float]
    generator_version: str = GENERATOR_VERSION
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def freqs(self) -> np.ndarray:
        return np.array([e.freq_hz for e in self.entries], dtype=np.float64)

    @property
    def sample_rate(self) -> float:
        return self.entries[0].spec.fs if self.entries else float(self.metadata.get("fs", 30.0))

    def to_json(self) -> dict:
        return {
            "split": self.split,
            "generator_version": self.generator_version,
            "global_seed": self.global_seed,
            "freq_range": list(self.freq_range),
            "metadata": self.metadata,
            "samples": [e.to_json() for e in self.entries],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)

    def checksum(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    def save(self, path=None) -> Path:
        path = Path(path) if path is not None else self.root / f"{self.split}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps() + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path, verify: bool = False) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"manifest not found: {path}")
        d = json.loads(path.read_text(encoding="utf-8"))
        m = cls(
            split=d["split"],
            entries=[ManifestEntry.from_json(e) for e in d["samples"]],
            global_seed=d["global_seed"],
            root=path.parent,
            freq_range=tuple(d["freq_range"]),
            generator_version=d["generator_version"],
            metadata=d.get("metadata", {}),
        )
        if verify:
            m.verify()
        return m

    def verify(self) -> None:
        for e in self.entries:
            p = self.root / e.file
            if not p.is_file():
                raise DataError(f"sample file missing: {p}")
            if hashlib.sha256(p.read_bytes()).hexdigest() != e.sha256:
                raise DataError(f"checksum mismatch for {p}")

    def with_entries(self, split: str, entries: list[ManifestEntry], **meta) -> "DatasetManifest":
        return replace(self, split=split, entries=list(entries), metadata={**self.metadata, **meta})


# ---------------------------------------------------------------- rendering


def _subpixel_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ys = (np.arange(2 * h) + 0.5) / 2.0
    xs = (np.arange(2 * w) + 0.5) / 2.0
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    # canvas-radius units, y pointing up
    return (gx - w / 2) / (w / 2), (h / 2 - gy) / (h / 2)


def _coverage(sprite, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    inside = np.zeros(px.shape, dtype=bool)
    for x0, y0, x1, y1, r in sprite:
        dx, dy = x1 - x0, y1 - y0
        ll = dx * dx + dy * dy
        if ll == 0:
            t = 0.0
        else:
            t = np.clip(((px - x0) * dx + (py - y0) * dy) / ll, 0.0, 1.0)
        ex, ey = px - (x0 + t * dx), py - (y0 + t * dy)
        inside |= ex * ex + ey * ey <= r * r
    return inside


def render_sample(spec: SampleSpec) -> np.ndarray:
    """Frames (T, H, W, channels) as float32."""
    t = np.arange(spec.num_frames) / spec.fs
    if spec.kind == "sine1d":
        x = np.sin(2 * np.pi * spec.freq_hz * t + spec.phase)
        if spec.noise_sigma > 0:
            x = x + spec.noise_sigma * SplitMix64(spec.noise_seed, 0x4E4F).normal(spec.num_frames)
        return x.astype(np.float32).reshape(spec.num_frames, 1, 1, 1)
    h, w = spec.canvas
    gx, gy = _subpixel_grid(h, w)
    theta = 2 * np.pi * spec.freq_hz * t + spec.phase
    c, s = np.cos(theta)[:, None, None], np.sin(theta)[:, None, None]
    # rotate sample points by -theta instead of the sprite by +theta
    px = c * gx + s * gy
    py = -s * gx + c * gy
    hits = _coverage(SPRITES[spec.sprite_id], px, py).astype(np.int32)
    counts = hits.reshape(spec.num_frames, h, 2, w, 2).sum(axis=(2, 4))
    gray = counts.astype(np.float32) / np.float32(4.0)
    if spec.channels == 1:
        return gray[..., None]
    rgb = PALETTE[spec.color_id % len(PALETTE)].astype(np.float32)
    return gray[..., None] * rgb


def _write_sample(root: Path, sid: str, spec: SampleSpec) -> ManifestEntry:
    frames = render_sample(spec)
    data = np.ascontiguousarray(frames, dtype="<f4").tobytes()
    rel = f"samples/{sid}.f32"
    path = root / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return ManifestEntry(sid, rel, spec, hashlib.sha256(data).hexdigest())


def _check_range(freq_range, fs):
    lo, hi = freq_range
    if not 0 < lo < hi:
        raise ConfigurationError(f"bad frequency range {freq_range}")
    if hi >= fs / 2:
        raise AliasingError(f"frequency range upper bound {hi} Hz reaches Nyquist {fs / 2} Hz")


def generate_rotating_sprites(
    n: int,
    freq_range: tuple[float, float] = (0.5, 5.0),
    seed: int = 0,
    root=".",
    *,
    fs: float = 30.0,
    num_frames: int = 150,
    canvas: tuple[int, int] = (16, 16),
    split: str = "all",
) -> DatasetManifest:
    _check_range(freq_range, fs)
    root = Path(root)
    entries = []
    for i in range(n):
        rng = SplitMix64(seed, i)
        spec = SampleSpec(
            freq_hz=float(rng.uniform(low=freq_range[0], high=freq_range[1])),
            phase=float(rng.uniform(low=0.0, high=2 * math.pi)),
            sprite_id=int(rng.integers(0, len(SPRITES))),
            fs=fs,
            num_frames=num_frames,
            canvas=canvas,
        )
        entries.append(_write_sample(root, f"rot-{seed}-{i:05d}", spec))
    meta = {"kind": "rotating", "fs": fs, "num_frames": num_frames, "canvas": list(canvas), "channels": 1}
    return DatasetManifest(split, entries, seed, root, tuple(freq_range), metadata=meta)


def generate_sine1d(
    n: int,
    freq_range: tuple[float, float] = (0.5, 5.0),
    noise_sigma: float = 0.0,
    seed: int = 0,
    root=".",
    *,
    fs: float = 30.0,
    num_frames: int = 150,
    split: str = "all",
) -> DatasetManifest:
    _check_range(freq_range, fs)
    root = Path(root)
    entries = []
    for i in range(n):
        rng = SplitMix64(seed, i)
        spec = SampleSpec(
            freq_hz=float(rng.uniform(low=freq_range[0], high=freq_range[1])),
            phase=float(rng.uniform(low=0.0, high=2 * math.pi)),
            fs=fs,
            num_frames=num_frames,
            canvas=(1, 1),
            kind="sine1d",
            noise_sigma=noise_sigma,
            noise_seed=int(rng.next_u64() >> 1),
        )
        entries.append(_write_sample(root, f"sin-{seed}-{i:05d}", spec))
    snr_db = math.inf if noise_sigma == 0 else 10 * math.log10(0.5 / noise_sigma**2)
    meta = {
        "kind": "sine1d",
        "fs": fs,
        "num_frames": num_frames,
        "canvas": [1, 1],
        "channels": 1,
        "noise_sigma": noise_sigma,
        "snr_db": None if math.isinf(snr_db) else snr_db,
        "low_snr": bool(snr_db < 0),
    }
    return DatasetManifest(split, entries, seed, root, tuple(freq_range), metadata=meta)


# ------------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitRule:
    """How to carve a pool manifest into train / test.

    kind: uniform | interpolation_gap | extrapolation_gap | spurious | subsample
    """

    kind: str = "uniform"
    band: tuple[float, float] | None = None
    fraction: float | None = None
    test_fraction: float = 0.5

    def __post_init__(self):
        if self.kind not in ("uniform", "interpolation_gap", "extrapolation_gap", "spurious", "subsample"):
            raise ConfigurationError(f"unknown split rule {self.kind!r}")
        if self.kind in ("interpolation_gap", "extrapolation_gap") and self.band is None:
            raise ConfigurationError(f"{self.kind} needs a frequency band")
        if self.kind == "subsample" and not (self.fraction is not None and 0 < self.fraction <= 1):
            raise ConfigurationError("subsample needs a fraction in (0, 1]")
        if not 0 < self.test_fraction < 1:
            raise ConfigurationError("test_fraction must be in (0, 1)")


def _in_band(f: float, band) -> bool:
    return band[0] <= f <= band[1]


def _uniform(entries: list[ManifestEntry], test_fraction: float, rng: SplitMix64):
    order = sorted(range(len(entries)), key=lambda i: (entries[i].freq_hz, entries[i].id))
    g = max(2, int(round(1 / test_fraction)))
    test_idx = set()
    for start in range(0, len(order), g):
        group = order[start : start + g]
        if len(group) == g or rng.uniform() < len(group) / g:
            test_idx.add(group[int(rng.integers(0, len(group)))])
    train = [e for i, e in enumerate(entries) if i not in test_idx]
    test = [e for i, e in enumerate(entries) if i in test_idx]
    return train, test


def _stratum(f: float, freq_range, n_strata: int) -> int:
    lo, hi = freq_range
    return min(int((f - lo) / (hi - lo) * n_strata), n_strata - 1)


def _recolour(m: DatasetManifest, e: ManifestEntry, sprite: int, tag: str) -> ManifestEntry:
    spec = replace(e.spec, sprite_id=sprite, color_id=sprite, channels=3)
    return _write_sample(m.root, f"{e.id}-{tag}", spec)


def build_split(manifest: DatasetManifest, rule: SplitRule, seed: int = 0) -> tuple[DatasetManifest, DatasetManifest]:
    """Return (train, test) manifests for ``rule``.

    For ``subsample`` the second manifest holds the dropped samples. The
    spurious rule re-renders samples in colour under the pool's root.
    """
    rng = SplitMix64(seed, 0x53504C)
    lo, hi = manifest.freq_range
    if rule.band is not None and not (lo <= rule.band[0] < rule.band[1] <= hi):
        raise ConfigurationError(f"band {rule.band} is not inside the frequency range {manifest.freq_range}")
    entries = manifest.entries
    info = {"rule": rule.kind, "split_seed": seed}
    if rule.kind == "subsample":
        keep_n = int(round(rule.fraction * len(entries)))
        keep = set(rng.permutation(len(entries))[:keep_n].tolist())
        train = [e for i, e in enumerate(entries) if i in keep]
        test = [e for i, e in enumerate(entries) if i not in keep]
        info["fraction"] = rule.fraction
    else:
        train, test = _uniform(entries, rule.test_fraction, rng)
        if rule.kind in ("interpolation_gap", "extrapolation_gap"):
            if rule.kind == "extrapolation_gap" and rule.band[1] < hi - 1e-9:
                raise ConfigurationError("an extrapolation gap must reach the top of the frequency range")
            train = [e for e in train if not _in_band(e.freq_hz, rule.band)]
            info["band"] = list(rule.band)
        elif rule.kind == "spurious":
            if manifest.metadata.get("kind") != "rotating":
                raise ConfigurationError("the spurious split needs a rotating-sprite pool")
            n_sprites = len(SPRITES)
            train = [_recolour(manifest, e, _stratum(e.freq_hz, (lo, hi), n_sprites), "spur") for e in train]
            by_stratum: dict[int, list[ManifestEntry]] = {}
            for e in test:
                by_stratum.setdefault(_stratum(e.freq_hz, (lo, hi), n_sprites), []).append(e)
            # cycle a fresh sprite permutation through each stratum: balanced, unpaired
            reassigned = {}
            for s in sorted(by_stratum):
                perm = rng.permutation(n_sprites)
                for j, e in enumerate(by_stratum[s]):
                    reassigned[e.id] = _recolour(manifest, e, int(perm[j % n_sprites]), "spur")
            test = [reassigned[e.id] for e in test]
            info["channels"] = 3
    if not train or (not test and rule.kind != "subsample"):
        raise ConfigurationError(f"split rule {rule.kind} produced an empty split")
    return manifest.with_entries("train", train, **info), manifest.with_entries("test", test, **info)


def load_arrays(manifest: DatasetManifest) -> tuple[np.ndarray, np.ndarray]:
    """All frames as float64 (N, T, H, W, C) plus ground-truth frequencies."""
    frames = []
    for e in manifest.entries:
        p = manifest.root / e.file
        if not p.is_file():
            raise DataError(f"sample file missing: {p}")
        raw = np.frombuffer(p.read_bytes(), dtype="<f4")
        frames.append(raw.reshape((e.spec.num_frames,) + e.spec.frame_shape))
    if not frames:
        return np.zeros((0,)), np.zeros((0,))
    return np.stack(frames).astype(np.float64), manifest.freqs
