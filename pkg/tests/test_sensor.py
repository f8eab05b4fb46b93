import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dipme import sensor
from dipme.errors import CalibrationError
from dipme.sensor import (
    CalibrationParams,
    LoadCellReading,
    WrenchSample,
    calibrate,
    check_range,
    compose_wrench,
    compose_wrench_array,
    invert_wrench_array,
)


def make_calib(kx=0.05, ky=0.05, **kw):
    return CalibrationParams(kx=kx, ky=ky, **kw)


class TestCompose:
    def test_symmetric_load_torques_cancel(self):
        w = compose_wrench(LoadCellReading(1, 1, 1, 1), make_calib())
        assert w.fz == pytest.approx(4.0)
        assert w.mx == pytest.approx(0.0)
        assert w.my == pytest.approx(0.0)

    def test_single_cell_torque(self):
        w = compose_wrench(LoadCellReading(0, 0, 2, 0), make_calib(kx=0.05))
        assert w.mx == pytest.approx(0.1)

    def test_swapping_opposing_cells_negates_mx(self):
        calib = make_calib()
        a = compose_wrench(LoadCellReading(0.3, -1.2, 2.5, 0.7), calib)
        b = compose_wrench(LoadCellReading(0.3, -1.2, 0.7, 2.5), calib)
        assert b.mx == pytest.approx(-a.mx)
        assert b.fz == pytest.approx(a.fz)

    def test_biases_added(self):
        calib = make_calib(bias_fz=0.5, bias_mx=0.01, bias_my=-0.02)
        w = compose_wrench(LoadCellReading(0, 0, 0, 0), calib)
        assert (w.fz, w.mx, w.my) == pytest.approx((0.5, 0.01, -0.02))

    @given(
        a=st.lists(st.floats(-40, 40), min_size=4, max_size=4),
        b=st.lists(st.floats(-40, 40), min_size=4, max_size=4),
    )
    def test_linearity_in_cells(self, a, b):
        calib = make_calib(bias_fz=0.3, bias_mx=0.01)
        wa = compose_wrench_array(np.array([a]), calib)[0]
        wb = compose_wrench_array(np.array([b]), calib)[0]
        wab = compose_wrench_array(np.array([np.add(a, b)]), calib)[0]
        bias = np.array([calib.bias_fz, calib.bias_mx, calib.bias_my])
        np.testing.assert_allclose(wab, wa + wb - bias, rtol=0, atol=1e-9)

    def test_central_load_yields_bias_torques_exactly(self):
        calib = make_calib(bias_mx=0.004, bias_my=-0.007)
        for f in (0.0, 3.7, -12.0):
            w = compose_wrench(LoadCellReading(f, f, f, f), calib)
            assert w.mx == calib.bias_mx
            assert w.my == calib.bias_my

    def test_invert_is_right_inverse(self):
        calib = make_calib(kx=0.043, ky=0.061, bias_fz=0.2, bias_mx=0.003, bias_my=-0.004)
        rng = np.random.default_rng(7)
        wrench = np.column_stack([rng.uniform(0, 100, 50), rng.uniform(-1, 1, 50), rng.uniform(-1, 1, 50)])
        cells = invert_wrench_array(wrench, calib)
        np.testing.assert_allclose(compose_wrench_array(cells, calib), wrench, atol=1e-10)


class TestRange:
    def test_midrange_all_in(self):
        flags = check_range(WrenchSample(fz=50.0, mx=0.0, my=0.0))
        assert flags == {"fz": True, "mx": True, "my": True}

    def test_fz_above_range(self):
        assert check_range(WrenchSample(fz=101.0, mx=0, my=0))["fz"] is False

    def test_torque_boundary_inclusive(self):
        flags = check_range(WrenchSample(fz=0.0, mx=-1.0, my=1.0))
        assert flags["mx"] is True and flags["my"] is True and flags["fz"] is True

    def test_accuracy_constants(self):
        assert sensor.FZ_ACCURACY_N == pytest.approx(1.5)
        assert sensor.TORQUE_ACCURACY_NM == pytest.approx(0.02)

    def test_cell_clamping_flagged(self):
        r = LoadCellReading(55.0, 0.0, 0.0, 0.0)
        assert r.saturated
        c = r.clamped()
        assert c.f1 == 40.0 and not c.clamped().saturated


def synth_loads(kx, ky, biases=(0.0, 0.0, 0.0), n=24, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    cells = rng.uniform(-30, 30, size=(n, 4))
    calib = CalibrationParams(kx=kx, ky=ky, bias_fz=biases[0], bias_mx=biases[1], bias_my=biases[2])
    true = compose_wrench_array(cells, calib)
    noisy = cells + noise * rng.standard_normal(cells.shape) * np.abs(cells).max()
    return [
        (LoadCellReading(*noisy[i], t=i * 0.01), WrenchSample(fz=true[i, 0], mx=true[i, 1], my=true[i, 2]))
        for i in range(n)
    ]


class TestCalibrate:
    def test_noise_free_recovery(self):
        fitted = calibrate(synth_loads(kx=0.05, ky=0.06, biases=(0.4, 0.01, -0.02)))
        assert fitted.kx == pytest.approx(0.05, abs=1e-9)
        assert fitted.ky == pytest.approx(0.06, abs=1e-9)
        assert fitted.bias_fz == pytest.approx(0.4, abs=1e-9)
        assert fitted.residual_rms < 1e-9

    def test_single_sample_errors(self):
        with pytest.raises(CalibrationError, match="insufficient"):
            calibrate(synth_loads(kx=0.05, ky=0.05)[:1])

    def test_no_torque_variation_errors(self):
        calib = CalibrationParams(kx=0.05, ky=0.05)
        cells = np.array([[1.0, 2.0, 3.0, 3.0]] * 5)  # f3 == f4 always
        true = compose_wrench_array(cells, calib)
        loads = [
            (LoadCellReading(*cells[i]), WrenchSample(fz=true[i, 0], mx=true[i, 1], my=true[i, 2]))
            for i in range(5)
        ]
        with pytest.raises(CalibrationError):
            calibrate(loads)

    def test_noisy_recovery_within_one_percent(self):
        # 0.1% additive noise, Monte Carlo over 100 seeds
        errs = []
        for seed in range(100):
            fitted = calibrate(synth_loads(kx=0.05, ky=0.05, noise=0.001, seed=seed))
            errs.append(abs(fitted.kx - 0.05) / 0.05)
        assert max(errs) < 0.01

    def test_json_round_trip(self):
        fitted = calibrate(synth_loads(kx=0.05, ky=0.06, biases=(0.4, 0.01, -0.02)))
        loaded = CalibrationParams.from_json(fitted.to_json())
        assert loaded == fitted
        keys = set(json.loads(fitted.to_json()))
        assert keys == {"kx", "ky", "bias_fz", "bias_mx", "bias_my", "residual_rms"}
