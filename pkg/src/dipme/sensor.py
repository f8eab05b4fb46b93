"""Four-cell force/torque composition, calibration, and measuring-range checks.

The probe's combined sensor is built from four one-axis load cells in a
square layout. Opposing cells form a force couple, so the axial force is
the sum of all four readings and each torque is proportional to the
difference of one opposing pair.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError

# Per-cell measuring range, newtons.
CELL_RANGE_N = 40.0

# Combined-sensor measuring ranges (boundaries inclusive).
FZ_RANGE_N = (0.0, 100.0)
TORQUE_RANGE_NM = (-1.0, 1.0)

# Accuracy bands: 1.5% of full scale for the axial force, 2% of full scale
# for each torque. Exposed for the simulator's noise model.
FZ_ACCURACY_N = 0.015 * FZ_RANGE_N[1]
TORQUE_ACCURACY_NM = 0.02 * TORQUE_RANGE_NM[1]


@dataclass(frozen=True)
class LoadCellReading:
    """Simultaneous reading of the four cells at time ``t`` (seconds)."""

    f1: float
    f2: float
    f3: float
    f4: float
    t: float = 0.0

    def as_array(self):
        return np.array([self.f1, self.f2, self.f3, self.f4])

    @property
    def saturated(self) -> bool:
        return bool(np.any(np.abs(self.as_array()) > CELL_RANGE_N))

    def clamped(self) -> "LoadCellReading":
        """Clamp cells to their measuring range; use ``saturated`` to detect it."""
        c = np.clip(self.as_array(), -CELL_RANGE_N, CELL_RANGE_N)
        return LoadCellReading(*c, t=self.t)


@dataclass(frozen=True)
class CalibrationParams:
    """Torque coefficients (meters) and additive per-axis bias corrections."""

    kx: float
    ky: float
    bias_fz: float = 0.0
    bias_mx: float = 0.0
    bias_my: float = 0.0
    residual_rms: float = 0.0

    def __post_init__(self):
        if not (self.kx > 0 and self.ky > 0):
            raise ValueError(f"torque coefficients must be positive, got kx={self.kx}, ky={self.ky}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "kx": self.kx,
                "ky": self.ky,
                "bias_fz": self.bias_fz,
                "bias_mx": self.bias_mx,
                "bias_my": self.bias_my,
                "residual_rms": self.residual_rms,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "CalibrationParams":
        return cls(**json.loads(text))


#: Nominal bench calibration used throughout the toolkit when no fitted
#: parameters are supplied (5 cm effective lever arm, no bias).
DEFAULT_CALIBRATION = CalibrationParams(kx=0.05, ky=0.05)


@dataclass(frozen=True)
class WrenchSample:
    """Composed axial force (N) and lateral torques (Nm) at time ``t``."""

    fz: float
    mx: float
    my: float
    t: float = 0.0
    in_range: dict = field(default_factory=dict)


def compose_wrench(reading: LoadCellReading, calib: CalibrationParams) -> WrenchSample:
    """Compose one four-cell reading into the calibrated wrench.

    fz = f1 + f2 + f3 + f4 + bias_fz
    mx = kx * (f3 - f4) + bias_mx
    my = ky * (f2 - f1) + bias_my
    """
    fz = reading.f1 + reading.f2 + reading.f3 + reading.f4 + calib.bias_fz
    mx = calib.kx * (reading.f3 - reading.f4) + calib.bias_mx
    my = calib.ky * (reading.f2 - reading.f1) + calib.bias_my
    w = WrenchSample(fz=fz, mx=mx, my=my, t=reading.t)
    return WrenchSample(fz=fz, mx=mx, my=my, t=reading.t, in_range=check_range(w))


def compose_wrench_array(cells: np.ndarray, calib: CalibrationParams) -> np.ndarray:
    """Vectorized composition: cells (T, 4) -> wrench columns (T, 3) as (fz, mx, my)."""
    cells = np.asarray(cells, dtype=float)
    fz = cells.sum(axis=1) + calib.bias_fz
    mx = calib.kx * (cells[:, 2] - cells[:, 3]) + calib.bias_mx
    my = calib.ky * (cells[:, 1] - cells[:, 0]) + calib.bias_my
    return np.column_stack([fz, mx, my])


def invert_wrench_array(wrench: np.ndarray, calib: CalibrationParams) -> np.ndarray:
    """Distribute wrench columns (T, 3) as (fz, mx, my) onto four cells (T, 4).

    The symmetric (least-norm) solution: common mode carries the axial
    force, each opposing pair splits its torque differentially. Exact
    right-inverse of :func:`compose_wrench_array`.
    """
    wrench = np.asarray(wrench, dtype=float)
    common = (wrench[:, 0] - calib.bias_fz) / 4.0
    d34 = (wrench[:, 1] - calib.bias_mx) / calib.kx  # f3 - f4
    d21 = (wrench[:, 2] - calib.bias_my) / calib.ky  # f2 - f1
    f1 = common - d21 / 2.0
    f2 = common + d21 / 2.0
    f3 = common + d34 / 2.0
    f4 = common - d34 / 2.0
    return np.column_stack([f1, f2, f3, f4])


def check_range(w: WrenchSample) -> dict:
    """Per-axis in-range flags against the combined sensor's measuring ranges."""
    return {
        "fz": FZ_RANGE_N[0] <= w.fz <= FZ_RANGE_N[1],
        "mx": TORQUE_RANGE_NM[0] <= w.mx <= TORQUE_RANGE_NM[1],
        "my": TORQUE_RANGE_NM[0] <= w.my <= TORQUE_RANGE_NM[1],
    }


def calibrate(known_loads) -> CalibrationParams:
    """Least-squares fit of (kx, ky, bias_fz, bias_mx, bias_my) from known loads.

    Parameters
    ----------
    known_loads : list of (LoadCellReading, WrenchSample)
        Readings paired with the true wrench applied by a standard load.

    The three axes decouple: bias_fz is the mean residual of the cell sum;
    (kx, bias_mx) and (ky, bias_my) come from 2-parameter linear fits on
    the respective cell differences. Raises :class:`CalibrationError` when
    the poses cannot determine the coefficients (fewer than 3 loads, or no
    variation in a cell difference).
    """
    if len(known_loads) < 3:
        raise CalibrationError(
            f"insufficient calibration poses: need >= 3 linearly independent loads, got {len(known_loads)}"
        )
    cells = np.array([r.as_array() for r, _ in known_loads])
    true = np.array([[w.fz, w.mx, w.my] for _, w in known_loads])

    d34 = cells[:, 2] - cells[:, 3]
    d21 = cells[:, 1] - cells[:, 0]

    bias_fz = float(np.mean(true[:, 0] - cells.sum(axis=1)))

    def fit_axis(x, y, name):
        # y = k * x + b; rank-deficient when x has no spread
        a = np.column_stack([x, np.ones_like(x)])
        if np.linalg.matrix_rank(a) < 2:
            raise CalibrationError(f"insufficient calibration poses: no variation to determine {name}")
        coef, *_ = np.linalg.lstsq(a, y, rcond=None)
        return float(coef[0]), float(coef[1])

    kx, bias_mx = fit_axis(d34, true[:, 1], "kx")
    ky, bias_my = fit_axis(d21, true[:, 2], "ky")
    if kx <= 0 or ky <= 0:
        raise CalibrationError(f"calibration produced non-positive torque coefficients (kx={kx}, ky={ky})")

    fitted = CalibrationParams(kx=kx, ky=ky, bias_fz=bias_fz, bias_mx=bias_mx, bias_my=bias_my)
    pred = compose_wrench_array(cells, fitted)
    residual_rms = float(np.sqrt(np.mean((pred - true) ** 2)))
    return CalibrationParams(
        kx=kx, ky=ky, bias_fz=bias_fz, bias_mx=bias_mx, bias_my=bias_my, residual_rms=residual_rms
    )
