"""Simulated dips into the six media, plotted as filtered wrench traces.

Shows the per-class character: soft fine soil, linear millet, stiff cement
powder, firm sand, and the increasingly spiky coarse media.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from dipme.preprocess import butterworth_lpf, gravity_compensate
from dipme.simulate import OperatorProfile, default_media_library, simulate_dip

media = default_media_library()
op = OperatorProfile()

fig, axes = plt.subplots(2, 3, figsize=(13, 6), sharex=True)
for ax, m in zip(axes.flat, media):
    rec = simulate_dip(m, op, seed=7)
    series = butterworth_lpf(gravity_compensate(rec))
    t = [i / series.rate_hz for i in range(len(series))]
    ax.plot(t, series.fz, lw=0.9, label="Fz [N]")
    ax.plot(t, 50 * series.mx, lw=0.7, label="50x Mx [Nm]")
    ax.plot(t, 50 * series.my, lw=0.7, label="50x My [Nm]")
    ax.set_title(f"{m.name} ({m.particle_size_band[0]}-{m.particle_size_band[1]} mm)")
    ax.set_xlabel("t [s]")
axes[0, 0].legend(fontsize=8)
fig.tight_layout()
fig.savefig("demo_media_traces.png", dpi=110)
print("wrote demo_media_traces.png")

for m in media:
    rec = simulate_dip(m, op, seed=7)
    series = butterworth_lpf(gravity_compensate(rec))
    print(f"{m.name:>9}: peak Fz {series.fz.max():6.1f} N, "
          f"fluctuation scale {m.fluctuation_scale:5.2f} N, "
          f"stick-slip {m.stickslip_rate:.2f}/cm")
