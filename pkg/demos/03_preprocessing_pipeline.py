"""The preprocessing chain, step by step, on one simulated dip.

Gravity compensation removes the orientation-dependent offset, the
Butterworth low-pass strips sensor noise and hand vibration, and velocity
resampling maps the series from time onto a uniform depth grid so
different probing speeds become comparable.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from dipme.preprocess import (
    FilterSpec,
    butterworth_lpf,
    gravity_compensate,
    normalize,
    sliding_windows,
    velocity_resample,
)
from dipme.sensor import DEFAULT_CALIBRATION, compose_wrench_array
from dipme.simulate import OperatorProfile, default_media_library, simulate_dip

# a fast, tilted, shaky operator makes the raw trace messy
op = OperatorProfile(nominal_speed=0.065, speed_jitter=0.25, tilt_deg=10, tremor_amplitude=0.6)
rec = simulate_dip(default_media_library()[3], op, seed=3)

raw = compose_wrench_array(rec.cells, DEFAULT_CALIBRATION)
comp = gravity_compensate(rec)
filt = butterworth_lpf(comp, FilterSpec(cutoff_hz=5.0))
resamp = velocity_resample(filt, nominal_speed=0.05)

fig, axes = plt.subplots(4, 1, figsize=(9, 9))
t = np.arange(len(rec.cells)) / rec.rate_hz
axes[0].plot(t, raw[:, 0], lw=0.7)
axes[0].set_title("raw composed Fz (gravity offset + noise)")
axes[1].plot(t, comp.fz, lw=0.7)
axes[1].set_title("gravity compensated")
axes[2].plot(t, filt.fz, lw=0.9)
axes[2].set_title("after 5th-order Butterworth (5 Hz)")
axes[3].plot(resamp.depth * 100, resamp.fz, lw=0.9)
axes[3].set_title("resampled onto the depth grid (0.5 mm steps)")
axes[3].set_xlabel("depth [cm]")
fig.tight_layout()
fig.savefig("demo_preprocess.png", dpi=110)
print("wrote demo_preprocess.png")
print(f"raw samples: {len(rec.cells)}, resampled depth samples: {len(resamp)}")

windows = sliding_windows(resamp, length=128, stride=64, label=rec.label)
stack = np.stack([w.data for w in windows])
normed, stats = normalize(stack)
print(f"windows: {stack.shape}, per-channel stats mean={np.round(stats.mean, 3)}, std={np.round(stats.std, 3)}")
print(f"filter sections as JSON: {FilterSpec().sos_json()[:80]}...")
