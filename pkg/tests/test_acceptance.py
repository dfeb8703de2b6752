"""Acceptance suite at the reference desk profile.

Reference profile: rotating sprites, 200 train / 200 test clips of
16x16x150 frames, default encoder, 60 pretraining epochs, medians over
training seeds 0, 1, 2. Learning runs are cached per module so that each
(split, method, seed) trains once. A summary line per criterion is printed
at the end of the session.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from simper import ndtensor as nt
from simper.config import ExperimentConfig
from simper.encoder import EncoderConfig, encode_batch, init_params
from simper.evaluation import compute_metrics
from simper.experiments import prepare_data, run_method, subset_metrics
from simper.loss import LossConfig, generalized_loss_from_similarities, infonce_loss, simper_loss
from simper.ndtensor import Tensor
from simper.signal import circular_cross_correlation, dominant_frequency, fft, naive_dft, psd, resample_linear
from simper.similarity import LabelKernel, SimilarityKind, soft_targets

pytestmark = pytest.mark.acceptance

SEEDS = (0, 1, 2)
GAP = (2.0, 3.0)
FS = 30.0


# ------------------------------------------------------------------ harness


def _config(split: str, *, loss_mode: str = "generalized", fraction: float = 1.0) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.experiment.name = f"acceptance-{split}"
    if split == "gap":
        cfg.data.split = "interpolation"
        cfg.data.band = GAP
    elif split == "spurious":
        cfg.data.split = "spurious"
    cfg.data.fraction = fraction
    cfg.loss.mode = loss_mode
    return cfg.validate()


class Runs:
    def __init__(self, root):
        self.root = root
        self.bundles = {}
        self.outcomes = {}

    def bundle(self, split: str, fraction: float = 1.0):
        key = (split, fraction)
        if key not in self.bundles:
            cfg = _config(split, fraction=fraction)
            self.bundles[key] = prepare_data(cfg, self.root / f"{split}-{fraction}")
        return self.bundles[key]

    def run(self, split: str, method: str, seed: int, *, loss_mode: str = "generalized", fraction: float = 1.0, fresh: bool = False):
        key = (split, method, seed, loss_mode, fraction)
        if fresh or key not in self.outcomes:
            cfg = _config(split, loss_mode=loss_mode, fraction=fraction)
            t0 = time.perf_counter()
            outcome = run_method(cfg, self.bundle(split, fraction), seed, method)
            outcome.extras["seconds"] = time.perf_counter() - t0
            if fresh:
                return outcome
            self.outcomes[key] = outcome
        return self.outcomes[key]

    def median(self, split, method, protocol, field, **kw) -> float:
        return float(np.median([getattr(self.run(split, method, s, **kw).reports[protocol], field) for s in SEEDS]))


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return Runs(tmp_path_factory.mktemp("acceptance"))


# ------------------------------------------------------- 1: kernel oracles


def test_criterion_01_kernel_oracles(acceptance_record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    primes = [2, 3, 5, 7, 13, 31, 61, 127, 131, 211, 251]
    lengths = primes + list(rng.integers(2, 257, 200 - len(primes)))
    fft_err = ccorr_err = parseval_err = 0.0
    for n in lengths:
        n = int(n)
        x = rng.normal(size=n) + 1j * rng.normal(size=n)
        fft_err = max(fft_err, float(np.max(np.abs(fft(x) - naive_dft(x)))))
        u, v = rng.normal(size=n), rng.normal(size=n)
        parseval_err = max(parseval_err, abs(float(np.sum(np.abs(fft(u)) ** 2) / n - np.sum(u * u))))
        if n >= 2 and np.std(u) > 0 and np.std(v) > 0:
            uc, vc = u - u.mean(), v - v.mean()
            uc, vc = uc / np.linalg.norm(uc), vc / np.linalg.norm(vc)
            direct = np.array([sum(uc[t] * vc[(t + k) % n] for t in range(n)) for k in range(n)])
            ccorr_err = max(ccorr_err, float(np.max(np.abs(circular_cross_correlation(u, v) - direct))))
    seconds = time.perf_counter() - t0
    ok = fft_err < 1e-9 and ccorr_err < 1e-9 and parseval_err < 1e-9 and seconds < 10
    acceptance_record(1, ok, f"fft {fft_err:.2e}  ccorr {ccorr_err:.2e}  parseval {parseval_err:.2e}  {seconds:.1f}s")
    assert ok


# -------------------------------------------------------- 2: gradient suite


def test_criterion_02_gradient_suite(acceptance_record):
    t0 = time.perf_counter()
    cfg = EncoderConfig(frame_input_dim=4, hidden_dims=(5,), feature_channels=2, temporal_context=3)
    rng = np.random.default_rng(202)
    xa, xb = rng.normal(size=(3, 8, 2, 2)), rng.normal(size=(3, 8, 2, 2))
    speeds = [0.6, 1.1, 1.9]
    errs = {}
    for kind in SimilarityKind:
        params = init_params(cfg, 5)
        loss_cfg = LossConfig(temperature=0.5, similarity=kind)

        def loss():
            return simper_loss(encode_batch(xa, params, cfg), encode_batch(xb, params, cfg), speeds, loss_cfg)

        errs[kind.value] = nt.finite_diff_check(loss, list(params.values()), h=1e-5)
    seconds = time.perf_counter() - t0
    ok = max(errs.values()) < 1e-4 and seconds < 30
    acceptance_record(2, ok, "  ".join(f"{k} {v:.1e}" for k, v in errs.items()) + f"  {seconds:.1f}s")
    assert ok


# ------------------------------------------------------ 3: loss degeneracy


def test_criterion_03_loss_degeneracy(acceptance_record):
    rng = np.random.default_rng(303)
    worst = 0.0
    for trial in range(50):
        m = (2, 5, 10)[trial % 3]
        s = rng.uniform(-1, 1, (m, m))
        speeds = np.sort(rng.uniform(0.5, 2.0, m)) + np.arange(m) * 1e-6
        nu = float(rng.choice([0.1, 0.5, 1.0]))
        gen = generalized_loss_from_similarities(Tensor(s), soft_targets(speeds, LabelKernel("indicator")), nu).item()
        # independent route: one InfoNCE call per anchor with scalar similarity lookups
        total = 0.0
        for i in range(m):
            lookup = lambda a, b: Tensor(s[a, b])  # noqa: E731
            total += infonce_loss(i, i, [j for j in range(m) if j != i], LossConfig(temperature=nu), similarity=lookup).item()
        worst = max(worst, abs(gen - total))
    ok = worst < 1e-12
    acceptance_record(3, ok, f"max |generalized - sum InfoNCE| = {worst:.2e} over 50 matrices")
    assert ok


# ------------------------------------------- 4: augmentation frequency law


def test_criterion_04_augmentation_frequency_law(acceptance_record):
    rng = np.random.default_rng(404)
    n_in, n_out = 150, 75
    passed = 0
    for _ in range(100):
        f = rng.uniform(0.5, 5.0)
        s = rng.uniform(0.5, 2.0)
        x = np.sin(2 * np.pi * f * np.arange(n_in) / FS + rng.uniform(0, 2 * np.pi))
        y = resample_linear(x, s, n_out)
        tol = psd(y, FS).bin_width_hz + 0.1
        if abs(dominant_frequency(y, FS) - s * dominant_frequency(x, FS)) <= tol:
            passed += 1
    acceptance_record(4, passed == 100, f"{passed}/100 (tone, speed) pairs within one bin + 0.1 Hz")
    assert passed == 100


# --------------------------------------------------- 5: main comparison


def test_criterion_05_simper_vs_instance_discrimination(runs, acceptance_record):
    simper = runs.median("uniform", "simper", "fft", "mape")
    base = runs.median("uniform", "infonce_baseline", "fft", "mape")
    slowest = max(runs.run("uniform", m, s).extras["seconds"] for m in ("simper", "infonce_baseline") for s in SEEDS)
    ok = simper < 30.0 and simper <= 0.5 * base and slowest <= 15 * 60
    acceptance_record(5, ok, f"FFT MAPE simper {simper:.2f}% vs instance-disc {base:.2f}% (ratio {simper / base:.3f}); slowest run {slowest / 60:.1f} min")
    assert ok


def test_pretraining_loss_decreases(runs):
    first = np.median([runs.run("uniform", "simper", s).train_result.losses[0] for s in SEEDS])
    at_30 = np.median([runs.run("uniform", "simper", s).train_result.losses[29] for s in SEEDS])
    assert at_30 < first


# ------------------------------------------- 6: generalized vs plain InfoNCE


def test_criterion_06_generalized_loss_ablation(runs, acceptance_record):
    gen = runs.median("uniform", "simper", "fft", "mae")
    plain = runs.median("uniform", "simper", "fft", "mae", loss_mode="infonce")
    ok = gen <= 1.05 * plain
    acceptance_record(6, ok, f"FFT MAE generalized {gen:.4f} vs InfoNCE {plain:.4f} (ratio {gen / plain:.3f})")
    assert ok


# ---------------------------------------------------- 7: zero-shot gap


def _seen_unseen(outcome, y, protocol):
    unseen = (y >= GAP[0]) & (y <= GAP[1])
    p = outcome.predictions[protocol]
    return subset_metrics(y, p, ~unseen).mae, subset_metrics(y, p, unseen).mae


def test_criterion_07_zero_shot_interpolation(runs, acceptance_record):
    y = runs.bundle("gap").test.freqs
    sp = [_seen_unseen(runs.run("gap", "simper", s), y, "knn") for s in SEEDS]
    sv = [_seen_unseen(runs.run("gap", "supervised", s), y, "head") for s in SEEDS]
    fft = [_seen_unseen(runs.run("gap", "simper", s), y, "fft") for s in SEEDS]
    sp_seen, sp_unseen = np.median(sp, axis=0)
    sv_seen, sv_unseen = np.median(sv, axis=0)
    fft_seen, fft_unseen = np.median(fft, axis=0)
    sp_ratio, sv_ratio = sp_unseen / sp_seen, sv_unseen / sv_seen
    ok = sp_ratio <= 2.0 and sv_ratio > sp_ratio
    acceptance_record(
        7,
        ok,
        f"simper 1-NN seen {sp_seen:.3f} unseen {sp_unseen:.3f} (x{sp_ratio:.2f}); "
        f"supervised seen {sv_seen:.3f} unseen {sv_unseen:.3f} (x{sv_ratio:.2f}); "
        f"simper FFT seen {fft_seen:.3f} unseen {fft_unseen:.3f}",
    )
    assert ok


# ------------------------------------------------- 8: spurious correlation


def test_criterion_08_spurious_correlation(runs, acceptance_record):
    simper = runs.median("spurious", "simper", "fft", "mape")
    base = runs.median("spurious", "infonce_baseline", "fft", "mape")
    ok = simper <= 0.5 * base
    acceptance_record(8, ok, f"spurious split FFT MAPE simper {simper:.2f}% vs instance-disc {base:.2f}% (ratio {simper / base:.3f})")
    assert ok


# ---------------------------------------------------- 9: data efficiency


def test_criterion_09_data_efficiency(runs, acceptance_record):
    full = runs.median("uniform", "simper", "fft", "mape")
    small = runs.median("uniform", "simper", "fft", "mape", fraction=0.05)
    sup_full = runs.median("uniform", "supervised", "head", "mape")
    sup_small = runs.median("uniform", "supervised", "head", "mape", fraction=0.05)
    n_small = len(runs.bundle("uniform", 0.05).train)
    sp_factor, sv_factor = small / full, sup_small / sup_full
    ok = sp_factor < 2.0 and sv_factor > sp_factor
    acceptance_record(
        9,
        ok,
        f"{n_small} train clips: simper FFT MAPE {full:.2f}% -> {small:.2f}% (x{sp_factor:.2f}); "
        f"supervised {sup_full:.2f}% -> {sup_small:.2f}% (x{sv_factor:.2f})",
    )
    assert ok


# -------------------------------------------------------- 10: determinism


def test_criterion_10_determinism(runs, acceptance_record):
    checks = [("uniform", "simper", 0, {"fraction": 0.05}), ("uniform", "infonce_baseline", 0, {})]
    mismatches = []
    for split, method, seed, kw in checks:
        first = runs.run(split, method, seed, **kw)
        again = runs.run(split, method, seed, fresh=True, **kw)
        for proto, rep in first.reports.items():
            if rep.values() != again.reports[proto].values() or first.predictions[proto].tobytes() != again.predictions[proto].tobytes():
                mismatches.append(f"{method}/{proto}")
        for k, v in first.checkpoint.params.items():
            if v.tobytes() != again.checkpoint.params[k].tobytes():
                mismatches.append(f"{method}/param {k}")
        if first.train_result.losses != again.train_result.losses:
            mismatches.append(f"{method}/losses")
    ok = not mismatches
    acceptance_record(10, ok, "repeated runs bit-identical" if ok else "mismatch: " + ", ".join(mismatches))
    assert ok


# ------------------------------------------------------ 11: metric cases


def test_criterion_11_metric_hand_cases(acceptance_record):
    cases = [
        (compute_metrics([10.0, 10.0], [11.0, 6.0]).gm, 2.0),
        (compute_metrics([2.0], [1.0]).mape, 50.0),
        (compute_metrics([1.0, 2.0], [1.0, 4.0]).mae, 1.0),
        (compute_metrics([1.0, 2.0], [1.0, 4.0]).mape, 50.0),
        (compute_metrics([1.0, 2.0, 3.0], [2.0, 4.0, 6.0]).pearson_rho, 1.0),
        (compute_metrics([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]).pearson_rho, -1.0),
        (compute_metrics([1.0, 2.0, 4.0], [2.0, 1.0, 4.0]).pearson_rho, 11 / 14),
    ]
    worst = max(abs(got - want) for got, want in cases)
    ok = worst <= 1e-9
    acceptance_record(11, ok, f"{len(cases)} hand cases, max deviation {worst:.1e}")
    assert ok
