"""Composing four load cells into a wrench and fitting the calibration.

Walks through the sensor algebra: symmetric loads cancel torques, opposing
cells encode them, and a least-squares fit recovers the torque
coefficients and biases from standard loads.
"""

import numpy as np

from dipme.sensor import (
    CalibrationParams,
    LoadCellReading,
    WrenchSample,
    calibrate,
    compose_wrench,
    compose_wrench_array,
)

# A symmetric 1 N load on each cell: pure axial force, torques cancel.
calib = CalibrationParams(kx=0.05, ky=0.05)
w = compose_wrench(LoadCellReading(1, 1, 1, 1), calib)
print(f"symmetric load -> fz={w.fz:.2f} N, mx={w.mx:.3f} Nm, my={w.my:.3f} Nm")

# Loading only cell 3 produces a positive x torque through the couple.
w = compose_wrench(LoadCellReading(0, 0, 2, 0), calib)
print(f"single-cell load -> mx={w.mx:.3f} Nm (= kx * 2 N)")

# Fit calibration from synthetic standard loads, with and without noise.
rng = np.random.default_rng(0)
true = CalibrationParams(kx=0.047, ky=0.053, bias_fz=0.8, bias_mx=0.012, bias_my=-0.02)
cells = rng.uniform(-30, 30, size=(24, 4))
wrench = compose_wrench_array(cells, true)
loads = [
    (LoadCellReading(*cells[i]), WrenchSample(fz=wrench[i, 0], mx=wrench[i, 1], my=wrench[i, 2]))
    for i in range(len(cells))
]
fitted = calibrate(loads)
print(f"\nnoise-free fit: kx={fitted.kx:.9f} (true 0.047), residual RMS={fitted.residual_rms:.2e}")

noisy_loads = [
    (LoadCellReading(*(cells[i] + 0.05 * rng.standard_normal(4))),
     WrenchSample(fz=wrench[i, 0], mx=wrench[i, 1], my=wrench[i, 2]))
    for i in range(len(cells))
]
fitted_noisy = calibrate(noisy_loads)
print(f"noisy fit:      kx={fitted_noisy.kx:.5f}, residual RMS={fitted_noisy.residual_rms:.4f}")
print(f"\ncalibration JSON: {fitted.to_json()}")
