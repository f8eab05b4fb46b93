import numpy as np
import pytest

from dipme import preprocess
from dipme.errors import ConfigError, NoDipMotionError
from dipme.preprocess import (
    FilterSpec,
    NormStats,
    WrenchSeries,
    butterworth_lpf,
    gravity_compensate,
    normalize,
    preprocess_recording,
    sliding_windows,
    velocity_resample,
)
from dipme.simulate import (
    MediaModel,
    OperatorProfile,
    default_media_library,
    simulate_dip,
)


def flat_series(values, n=400, rate=100.0):
    ch = np.tile(np.asarray(values, dtype=float)[:, None], (1, n))
    depth = np.arange(n) * 0.0005
    return WrenchSeries.from_channels(ch, depth, rate)


def sine_series(freq, n=2000, rate=100.0):
    t = np.arange(n) / rate
    s = np.sin(2 * np.pi * freq * t)
    return WrenchSeries.from_channels(np.stack([s, s, s]), np.arange(n) * 0.0005, rate)


def steady_amplitude(x):
    tail = x[len(x) // 2 :]
    return (tail.max() - tail.min()) / 2


class TestFilter:
    def test_cutoff_beyond_nyquist_rejected(self):
        with pytest.raises(ConfigError):
            FilterSpec(cutoff_hz=50.0, sample_rate_hz=100.0)

    def test_dc_unchanged(self):
        out = butterworth_lpf(flat_series([1.0, -2.0, 3.5]), FilterSpec(mode="zero-phase"))
        np.testing.assert_allclose(out.channels(), flat_series([1.0, -2.0, 3.5]).channels(), atol=1e-9)

    def test_dc_unchanged_causal_after_transient(self):
        out = butterworth_lpf(flat_series([2.0, 2.0, 2.0], n=3000), FilterSpec(mode="causal"))
        assert abs(out.fz[-1] - 2.0) < 1e-9

    def test_stopband_attenuation_10hz(self):
        # analytic magnitude at 10 Hz with 5 Hz cutoff: 10*log10(1 + 2^10) = 30.1 dB
        out = butterworth_lpf(sine_series(10.0), FilterSpec(mode="causal"))
        att_db = -20 * np.log10(steady_amplitude(out.fz))
        assert att_db >= 28.0

    def test_passband_1hz_within_half_db(self):
        out = butterworth_lpf(sine_series(1.0), FilterSpec(mode="causal"))
        gain_db = 20 * np.log10(steady_amplitude(out.fz))
        assert abs(gain_db) < 0.5

    def test_short_series_rejected(self):
        with pytest.raises(ValueError, match="too short"):
            butterworth_lpf(flat_series([1, 1, 1], n=15))

    def test_channels_filtered_independently(self):
        rng = np.random.default_rng(0)
        ch = rng.standard_normal((3, 500))
        series = WrenchSeries.from_channels(ch, np.arange(500) * 0.0005, 100.0)
        full = butterworth_lpf(series).channels()
        for c in range(3):
            solo = WrenchSeries.from_channels(
                np.stack([ch[c]] * 3), np.arange(500) * 0.0005, 100.0
            )
            np.testing.assert_allclose(butterworth_lpf(solo).channels()[c], full[c], atol=1e-12)

    def test_sos_poles_inside_unit_circle(self):
        sos = FilterSpec().sos()
        for sec in sos:
            poles = np.roots(sec[3:])
            assert np.all(np.abs(poles) < 1.0)

    def test_sos_json_export(self):
        import json

        d = json.loads(FilterSpec().sos_json())
        assert d["order"] == 5 and len(d["sos"]) == 3


class TestVelocityResample:
    def test_constant_speed_identity(self):
        n, v, rate = 251, 0.05, 100.0
        depth = np.arange(n) * (v / rate)
        ch = np.sin(np.linspace(0, 8, n))[None, :] * np.array([[1.0], [2.0], [3.0]])
        series = WrenchSeries.from_channels(ch, depth, rate)
        out = velocity_resample(series, nominal_speed=v)
        assert len(out) == n
        np.testing.assert_allclose(out.channels(), ch, atol=1e-9)

    def test_double_speed_doubles_samples(self):
        n, v, rate = 100, 0.05, 100.0
        depth = np.arange(n) * (2 * v / rate)
        ch = np.tile(np.linspace(0, 1, n), (3, 1))
        out = velocity_resample(WrenchSeries.from_channels(ch, depth, rate), nominal_speed=v)
        assert abs(len(out) - 2 * n) <= 2

    def test_no_dip_motion_errors(self):
        series = WrenchSeries.from_channels(np.zeros((3, 100)), np.zeros(100), 100.0)
        with pytest.raises(NoDipMotionError):
            velocity_resample(series)

    def test_depth_locked_feature_alignment(self):
        # square feature on depth [0.03, 0.06] m, speed varying +/-30 percent
        v, rate = 0.05, 100.0
        dd = v / rate

        def build(speed_profile):
            d = np.concatenate([[0.0], np.cumsum(speed_profile) / rate])
            f = ((d >= 0.03) & (d <= 0.06)).astype(float)
            return WrenchSeries.from_channels(np.stack([f, f, f]), d, rate)

        n = 300
        const = build(np.full(n, v))
        t = np.arange(n) / rate
        varying = build(v * (1 + 0.3 * np.sin(2 * np.pi * 0.7 * t)))
        out_c = velocity_resample(const, nominal_speed=v).fz
        out_v = velocity_resample(varying, nominal_speed=v).fz
        for out in (out_c, out_v):
            on = np.nonzero(out > 0.5)[0]
            assert abs(on[0] - round(0.03 / dd)) <= 1
            assert abs(on[-1] - round(0.06 / dd)) <= 1

    def test_idempotent_on_constant_speed(self):
        n, v, rate = 200, 0.05, 100.0
        depth = np.arange(n) * (v / rate)
        ch = np.random.default_rng(1).standard_normal((3, n))
        once = velocity_resample(WrenchSeries.from_channels(ch, depth, rate), nominal_speed=v)
        twice = velocity_resample(once, nominal_speed=v)
        np.testing.assert_allclose(twice.channels(), once.channels(), atol=1e-12)


class TestGravityCompensation:
    def test_stationary_vertical_near_zero(self):
        stationary = OperatorProfile(nominal_speed=0.0, speed_jitter=0.0, tilt_deg=0.0, tremor_amplitude=0.0)
        rec = simulate_dip(default_media_library()[0], stationary, seed=11)
        series = butterworth_lpf(gravity_compensate(rec))
        from dipme.simulate import SensorNoiseModel
        from dipme.sensor import DEFAULT_CALIBRATION

        sigma_fz = SensorNoiseModel().cell_sigma(DEFAULT_CALIBRATION) * np.sqrt(4 + 12 * 0.5)
        assert np.max(np.abs(series.fz)) < 3 * sigma_fz

    def test_tilted_stationary_torque_compensated(self):
        stationary = OperatorProfile(nominal_speed=0.0, speed_jitter=0.0, tilt_deg=10.0, tremor_amplitude=0.0)
        rec = simulate_dip(default_media_library()[0], stationary, seed=3)
        from dipme.sensor import DEFAULT_CALIBRATION, compose_wrench_array
        from dipme.simulate import SENSING_SIDE_MASS_KG, SENSING_SIDE_COM_M, SensorNoiseModel
        from dipme.pose import GRAVITY_M_S2

        raw = compose_wrench_array(rec.cells, DEFAULT_CALIBRATION)
        raw_torque = np.hypot(raw[:, 1], raw[:, 2]).mean()
        expected = SENSING_SIDE_MASS_KG * GRAVITY_M_S2 * np.sin(np.deg2rad(10)) * SENSING_SIDE_COM_M
        assert raw_torque == pytest.approx(expected, rel=0.15)

        comp = butterworth_lpf(gravity_compensate(rec))
        sigma_t = SensorNoiseModel().cell_sigma(DEFAULT_CALIBRATION) * 0.05  # kx * sigma at rho=0.5
        interior = np.hypot(comp.mx, comp.my)[10:-10]  # skip zero-phase edge transients
        assert np.max(interior) < 3 * sigma_t
        assert np.max(interior) < expected  # well under the uncompensated gravity torque

    def test_compensation_is_constant_shift_at_equal_pose(self):
        op = OperatorProfile(nominal_speed=0.05, speed_jitter=0.0, tilt_deg=8.0, tremor_amplitude=0.0)
        rec = simulate_dip(default_media_library()[3], op, seed=5)
        from dipme.sensor import DEFAULT_CALIBRATION, compose_wrench_array

        raw = compose_wrench_array(rec.cells, DEFAULT_CALIBRATION)
        comp = gravity_compensate(rec)
        shift = raw[:, 0] - comp.fz
        assert np.ptp(shift) < 1e-9  # constant pose -> constant compensation

    def test_non_unit_quaternion_warns(self):
        op = OperatorProfile(nominal_speed=0.05)
        rec = simulate_dip(default_media_library()[0], op, seed=1)
        rec.traj.quats[10] *= 1.01
        with pytest.warns(UserWarning, match="normaliz"):
            gravity_compensate(rec)


class TestNormalize:
    def test_train_stats_zero_mean_unit_var(self):
        rng = np.random.default_rng(0)
        w = rng.normal(3.0, 2.5, size=(40, 3, 64))
        out, stats = normalize(w)
        np.testing.assert_allclose(out.mean(axis=(0, 2)), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.var(axis=(0, 2)), 1.0, atol=1e-9)

    def test_frozen_stats_do_not_recenter(self):
        rng = np.random.default_rng(0)
        train = rng.normal(0.0, 1.0, size=(40, 3, 64))
        _, stats = normalize(train)
        shifted, _ = normalize(train + 5.0, stats)
        assert shifted.mean() == pytest.approx(5.0, abs=0.01)

    def test_constant_channel_no_faults(self):
        w = np.ones((10, 3, 16))
        with pytest.warns(UserWarning, match="zero-variance"):
            out, stats = normalize(w)
        assert np.all(np.isfinite(out)) and np.all(out == 0.0)
        np.testing.assert_array_equal(stats.std, 1.0)


class TestSlidingWindows:
    def test_full_length_single_window(self):
        series = flat_series([1, 2, 3], n=251)
        assert len(sliding_windows(series, 251, stride=100)) == 1

    def test_offsets_251_128_41(self):
        series = flat_series([1, 2, 3], n=251)
        ws = sliding_windows(series, 128, stride=41)
        assert [w.start for w in ws] == [0, 41, 82, 123]

    def test_too_short_empty_with_warning(self):
        series = flat_series([1, 2, 3], n=100)
        with pytest.warns(UserWarning, match="shorter"):
            assert sliding_windows(series, 128) == []

    def test_label_inherited(self):
        ws = sliding_windows(flat_series([1, 2, 3], n=260), 128, label=4, source_id=9)
        assert all(w.label == 4 and w.source_id == 9 for w in ws)


class TestEndToEnd:
    def test_pipeline_finite_3x128_over_seeds(self):
        media = default_media_library()
        op = OperatorProfile()
        for seed in range(25):
            rec = simulate_dip(media[seed % 6], op, seed=seed)
            series = preprocess_recording(rec)
            ws = sliding_windows(series, 128, label=rec.label)
            assert len(ws) >= 1
            assert ws[0].data.shape == (3, 128)
            assert np.all(np.isfinite(ws[0].data))
