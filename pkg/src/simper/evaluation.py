"""Feature evaluation (FFT peak and nearest neighbour) and regression metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import encode_batch
from .errors import DegenerateSignalError, MetricDomainError
from .ndtensor import Tensor
from .signal import dominant_frequency
from .similarity import DEGENERATE_VARIANCE, SimilarityKind, similarity_matrix

__all__ = [
    "GM_FLOOR",
    "MetricsReport",
    "compute_metrics",
    "encode_dataset",
    "fft_predict",
    "fft_eval",
    "knn_predict",
    "knn_eval",
    "export_features",
    "append_results_csv",
]

GM_FLOOR = 1e-6

RESULT_COLUMNS = ["experiment", "protocol", "seed", "value", "config_hash", "mae", "mape", "gm", "pearson_rho", "n", "degenerate", "status"]


@dataclass
class MetricsReport:
    mae: float
    mape: float
    gm: float
    pearson_rho: float
    n: int
    protocol: str = ""
    config_hash: str = ""
    rho_constant: bool = False
    degenerate: int = 0
    extra: dict[str, str] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [
            f"protocol={self.protocol}",
            f"config_hash={self.config_hash}",
            f"n={self.n}",
            f"mae={self.mae!r}",
            f"mape={self.mape!r}",
            f"gm={self.gm!r}",
            f"pearson_rho={self.pearson_rho!r}",
            f"rho_constant={int(self.rho_constant)}",
            f"degenerate={self.degenerate}",
            f"gm_floor={GM_FLOOR!r}",
        ]
        lines += [f"extra.{k}={v}" for k, v in sorted(self.extra.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        return cls(
            mae=float(kv["mae"]),
            mape=float(kv["mape"]),
            gm=float(kv["gm"]),
            pearson_rho=float(kv["pearson_rho"]),
            n=int(kv["n"]),
            protocol=kv.get("protocol", ""),
            config_hash=kv.get("config_hash", ""),
            rho_constant=kv.get("rho_constant", "0") == "1",
            degenerate=int(kv.get("degenerate", "0")),
            extra={k[6:]: v for k, v in kv.items() if k.startswith("extra.")},
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text(), encoding="utf-8")
        return path

    def values(self) -> tuple[float, float, float, float]:
        return (self.mae, self.mape, self.gm, self.pearson_rho)


def compute_metrics(y, y_hat, protocol: str = "", config_hash: str = "") -> MetricsReport:
    """MAE, MAPE (percent), error geometric mean and Pearson correlation.

    GM uses ``exp(mean(log(max(e, GM_FLOOR))))``; exact zero errors are floored
    rather than shifted so that non-zero errors are reported unperturbed.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.shape != y_hat.shape or y.size == 0:
        raise MetricDomainError(f"need equal non-empty vectors, got {y.shape} and {y_hat.shape}")
    if np.any(y == 0):
        raise MetricDomainError("MAPE is undefined for a zero ground-truth value")
    e = np.abs(y - y_hat)
    mae = float(e.mean())
    mape = float(100.0 * np.mean(e / np.abs(y)))
    gm = float(np.exp(np.mean(np.log(np.maximum(e, GM_FLOOR)))))
    yc, pc = y - y.mean(), y_hat - y_hat.mean()
    den = math.sqrt(float(yc @ yc) * float(pc @ pc))
    constant = den == 0.0
    rho = 0.0 if constant else float(np.clip((yc @ pc) / den, -1.0, 1.0))
    return MetricsReport(mae, mape, gm, rho, int(y.size), protocol, config_hash, constant)


def encode_dataset(frames: np.ndarray, params: dict[str, Tensor], enc, batch_size: int = 32) -> np.ndarray:
    """(N, T, ...) frames -> (N, T, C) centred features, without a tape."""
    frames = np.asarray(frames, dtype=np.float64)
    out = [encode_batch(frames[i : i + batch_size], params, enc).data for i in range(0, len(frames), batch_size)]
    return np.concatenate(out) if out else np.zeros((0,))


def _is_degenerate(z: np.ndarray) -> bool:
    return float(z.var(axis=0).max()) <= DEGENERATE_VARIANCE


def fft_predict(z: np.ndarray, sample_rate_hz: float) -> float:
    """Power-weighted mean of per-channel dominant frequencies of one (T, C) series."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    power = z.var(axis=0)
    freqs, weights = [], []
    for c in range(z.shape[1]):
        if power[c] <= DEGENERATE_VARIANCE:
            continue
        freqs.append(dominant_frequency(z[:, c], sample_rate_hz))
        weights.append(power[c])
    if not freqs:
        raise DegenerateSignalError("all feature channels are constant")
    w = np.asarray(weights)
    return float(np.dot(w, freqs) / w.sum())


def _worst_in_range(y: float, freq_range) -> float:
    lo, hi = freq_range
    return lo if abs(y - lo) >= abs(y - hi) else hi


def fft_eval(features: np.ndarray, y, sample_rate_hz: float, freq_range, config_hash: str = "") -> tuple[MetricsReport, np.ndarray]:
    """Score pre-computed (N, T, C) features; degenerate samples get the worst in-range guess."""
    y = np.asarray(y, dtype=np.float64)
    preds = np.empty(len(y))
    degenerate = 0
    for i, z in enumerate(features):
        if _is_degenerate(z):
            degenerate += 1
            preds[i] = _worst_in_range(y[i], freq_range)
        else:
            preds[i] = fft_predict(z, sample_rate_hz)
    rep = compute_metrics(y, preds, "fft", config_hash)
    rep.degenerate = degenerate
    rep.extra["degenerate_fraction"] = repr(degenerate / len(y))
    return rep, preds


def knn_predict(train_z: np.ndarray, train_y, test_z: np.ndarray, kind=SimilarityKind.MXCORR, chunk: int = 8) -> np.ndarray:
    """Label of the most similar training series; ties go to the lowest index."""
    train_y = np.asarray(train_y, dtype=np.float64)
    kind = SimilarityKind(kind)
    preds = np.empty(len(test_z))
    for s in range(0, len(test_z), chunk):
        sims = similarity_matrix(test_z[s : s + chunk], train_z, kind).data
        # argmax returns the first maximum
        preds[s : s + chunk] = train_y[np.argmax(sims, axis=1)]
    return preds


def knn_eval(train_z, train_y, test_z, test_y, kind=SimilarityKind.MXCORR, freq_range=None, config_hash: str = "") -> tuple[MetricsReport, np.ndarray]:
    test_y = np.asarray(test_y, dtype=np.float64)
    train_z = np.asarray(train_z, dtype=np.float64)
    test_z = np.asarray(test_z, dtype=np.float64)
    bad = np.array([_is_degenerate(z) for z in test_z], dtype=bool)
    preds = knn_predict(train_z, train_y, test_z, kind)
    if freq_range is not None:
        for i in np.flatnonzero(bad):
            preds[i] = _worst_in_range(test_y[i], freq_range)
    rep = compute_metrics(test_y, preds, "knn", config_hash)
    rep.degenerate = int(bad.sum())
    rep.extra["similarity"] = SimilarityKind(kind).value
    return rep, preds


def export_features(ids, freqs, features: np.ndarray, path) -> Path:
    """CSV with one row per sample: id, frequency, then the flattened (T, C) series."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    features = np.asarray(features, dtype=np.float64)
    t, c = features.shape[1], features.shape[2]
    header = ["id", "freq_hz"] + [f"z_t{i}_c{j}" for i in range(t) for j in range(c)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for sid, f, z in zip(ids, freqs, features):
            w.writerow([sid, repr(float(f))] + [repr(float(v)) for v in z.reshape(-1)])
    return path


def append_results_csv(path, row: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not path.exists()
    with path.open("a", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n", extrasaction="ignore")
        if new:
            w.writeheader()
        w.writerow({k: row.get(k, "") for k in RESULT_COLUMNS})
    return path
