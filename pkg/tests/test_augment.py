import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simper.augment import (
    InvariantAugConfig,
    SpeedAugConfig,
    invariant_view,
    make_training_views,
    sample_speeds,
    variant_views,
)
from simper.errors import AliasingError, ConfigurationError, InsufficientLengthError
from simper.rng import SplitMix64
from simper.signal import normalize_psd, psd

FS = 30.0


def tone(f, n=150):
    return np.sin(2 * np.pi * f * np.arange(n) / FS)


def peak_hz(x):
    s = psd(np.asarray(x).reshape(len(x), -1).mean(axis=1), FS)
    return s.frequencies[np.argmax(s.bin_power[1:]) + 1], s.bin_width_hz


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SpeedAugConfig(s_min=2.0, s_max=1.0)
    with pytest.raises(ConfigurationError):
        SpeedAugConfig(num_views=1)
    with pytest.raises(ConfigurationError):
        InvariantAugConfig(p_reverse=1.5)


def test_sampled_speeds_are_stratified_and_increasing():
    cfg = SpeedAugConfig(num_views=8)
    for seed in range(20):
        s = sample_speeds(cfg, SplitMix64(seed))
        assert np.all(np.diff(s) > 0)
        strata = np.floor((s - cfg.s_min) / ((cfg.s_max - cfg.s_min) / 8)).astype(int)
        np.testing.assert_array_equal(np.minimum(strata, 7), np.arange(8))


def test_forced_adjacent_speeds_stay_strictly_increasing():
    vs = variant_views(tone(1.0), SpeedAugConfig(num_views=2), 0, speeds=[1.0 + 1e-9, 1.0])
    assert np.all(np.diff(vs.speeds) > 0)
    with pytest.raises(ConfigurationError):
        variant_views(tone(1.0), SpeedAugConfig(num_views=2), 0, speeds=[1.0, 1.0])


def test_view_frequencies_follow_speeds():
    vs = variant_views(tone(1.0), SpeedAugConfig(num_views=3, target_len=60), 0, speeds=[0.5, 1.0, 2.0])
    for view, s in zip(vs.views, vs.speeds):
        f, bw = peak_hz(view)
        assert abs(f - s * 1.0) <= bw


def test_variant_views_deterministic():
    cfg = SpeedAugConfig()
    a = variant_views(tone(1.3), cfg, 42)
    b = variant_views(tone(1.3), cfg, 42)
    assert a.views.tobytes() == b.views.tobytes() and a.speeds.tobytes() == b.speeds.tobytes()
    c = variant_views(tone(1.3), cfg, 43)
    assert not np.array_equal(a.speeds, c.speeds)


def test_variant_views_length_and_nyquist_errors():
    with pytest.raises(InsufficientLengthError):
        variant_views(tone(1.0, n=100), SpeedAugConfig(target_len=64), 0)
    with pytest.raises(AliasingError):
        variant_views(tone(1.0), SpeedAugConfig(), 0, f_max=9.0, sample_rate_hz=FS)


def test_identity_invariant_view_is_prefix():
    v = np.random.default_rng(0).normal(size=(80, 4, 4, 1))
    out = invariant_view(v, InvariantAugConfig.identity(), 64, 7)
    np.testing.assert_array_equal(out, v[:64])


def test_delay_preserves_frequency():
    cfg = InvariantAugConfig(p_reverse=0.0, max_delay=8, noise_sigma=0.0, brightness_jitter=0.0, crop_scale_range=(1.0, 1.0))
    x = tone(2.2, n=72)
    f0, bw = peak_hz(x[:64])
    for seed in range(10):
        f, _ = peak_hz(invariant_view(x, cfg, 64, seed))
        assert abs(f - f0) <= bw


def test_reverse_preserves_normalised_psd():
    cfg = InvariantAugConfig(p_reverse=1.0, max_delay=0, noise_sigma=0.0, brightness_jitter=0.0, crop_scale_range=(1.0, 1.0))
    x = tone(2.2, n=64) + 0.3 * tone(5.1, n=64)
    out = invariant_view(x, cfg, 64, 1)
    np.testing.assert_array_equal(out, x[::-1])
    np.testing.assert_allclose(normalize_psd(psd(out)), normalize_psd(psd(x)), atol=1e-9)


def test_crop_resize_keeps_shape_and_frequency():
    cfg = InvariantAugConfig(p_reverse=0.0, max_delay=0, noise_sigma=0.0, brightness_jitter=0.0, crop_scale_range=(0.6, 0.6))
    t = np.arange(64) / FS
    yy, xx = np.mgrid[0:8, 0:8]
    v = np.sin(2 * np.pi * 1.5 * t)[:, None, None, None] * (xx + yy + 1.0)[None, :, :, None]
    out = invariant_view(v, cfg, 64, 3)
    assert out.shape == v.shape
    assert abs(peak_hz(out)[0] - peak_hz(v)[0]) <= FS / 64


def test_training_views_share_speeds_and_identity_pairs():
    x = np.random.default_rng(1).normal(size=(150, 4, 4, 1))
    a, b, s = make_training_views(x, SpeedAugConfig(), InvariantAugConfig.identity(), 9)
    np.testing.assert_array_equal(a.speeds, b.speeds)
    np.testing.assert_array_equal(a.speeds, s)
    np.testing.assert_array_equal(a.views, b.views)
    assert a.views.shape == (10, 64, 4, 4, 1)


def test_training_views_agree_in_frequency():
    x = np.repeat(tone(0.9)[:, None], 4, axis=1)
    a, b, s = make_training_views(x, SpeedAugConfig(num_views=5), InvariantAugConfig(), 4)
    for va, vb in zip(a.views, b.views):
        fa, bw = peak_hz(va)
        fb, _ = peak_hz(vb)
        assert abs(fa - fb) <= bw


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([0.6, 0.9, 1.2, 1.5]), st.integers(0, 1000))
def test_speed_scaling_law(f, seed):
    cfg = SpeedAugConfig(num_views=4, target_len=64)
    vs = variant_views(tone(f), cfg, seed)
    for view, si in zip(vs.views, vs.speeds):
        got, bw = peak_hz(view)
        assert abs(got - si * f) <= bw
