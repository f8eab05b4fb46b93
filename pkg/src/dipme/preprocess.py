"""Raw dip recordings -> fixed-length normalized windows.

Chain: compose the wrench, subtract the sensing side's gravity using the
tracked pose, low-pass filter each channel, re-parameterize from time to
penetration depth (so every series looks like a constant-speed dip), then
cut sliding windows and z-score them with training-set statistics.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from . import pose
from .errors import ConfigError, NoDipMotionError
from .sensor import CalibrationParams, DEFAULT_CALIBRATION, compose_wrench_array
from .simulate import RawRecording, ProbeTrajectory, SENSING_SIDE_MASS_KG, SENSING_SIDE_COM_M

#: Window lengths supported by the recognition models.
RECOGNITION_LENGTHS = (32, 64, 128, 251)

#: Canonical series length of a fully preprocessed dip.
SERIES_LENGTH = 251

#: Depth step equivalent to one sample of a constant-speed reference dip.
DEFAULT_NOMINAL_SPEED = 0.05


@dataclass(frozen=True)
class FilterSpec:
    """5th-order Butterworth low-pass, realized as second-order sections."""

    order: int = 5
    cutoff_hz: float = 5.0
    sample_rate_hz: float = 100.0
    mode: str = "zero-phase"  # or "causal"

    def __post_init__(self):
        if not (0 < self.cutoff_hz < self.sample_rate_hz / 2):
            raise ConfigError(
                f"cutoff must lie in (0, Nyquist)={self.sample_rate_hz / 2} Hz, got {self.cutoff_hz}"
            )
        if self.mode not in ("zero-phase", "causal"):
            raise ConfigError(f"unknown filter mode {self.mode!r}")

    def sos(self) -> np.ndarray:
        return signal.butter(self.order, self.cutoff_hz, btype="low", fs=self.sample_rate_hz, output="sos")

    def sos_json(self) -> str:
        """Coefficients as JSON second-order sections for cross-checking."""
        return json.dumps(
            {
                "order": self.order,
                "cutoff_hz": self.cutoff_hz,
                "sample_rate_hz": self.sample_rate_hz,
                "sos": self.sos().tolist(),
            }
        )


@dataclass
class WrenchSeries:
    """Composed channels plus per-sample penetration depth."""

    mx: np.ndarray
    my: np.ndarray
    fz: np.ndarray
    depth: np.ndarray
    rate_hz: float = 100.0

    def __post_init__(self):
        n = len(self.fz)
        if not (len(self.mx) == len(self.my) == len(self.depth) == n):
            raise ValueError("channel and depth arrays must share length")
        for name in ("mx", "my", "fz"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite values in channel {name}")

    def __len__(self):
        return len(self.fz)

    def channels(self) -> np.ndarray:
        """(3, T) in the model's channel order: x-torque, y-torque, z-force."""
        return np.stack([self.mx, self.my, self.fz])

    @classmethod
    def from_channels(cls, ch: np.ndarray, depth: np.ndarray, rate_hz: float = 100.0) -> "WrenchSeries":
        return cls(mx=ch[0], my=ch[1], fz=ch[2], depth=np.asarray(depth, dtype=float), rate_hz=rate_hz)


@dataclass(frozen=True)
class ProcessedWindow:
    """3xN classifier input with provenance."""

    data: np.ndarray
    label: int | None
    source_id: int
    start: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.data)):
            raise ValueError("window contains non-finite values")


def penetration_depth(traj: ProbeTrajectory) -> np.ndarray:
    """Depth along the probing axis from the trajectory's start pose."""
    quats, _ = pose.quat_normalize(traj.quats)
    axis = pose.probing_axis_world(quats)
    disp = traj.positions - traj.positions[0]
    return np.clip(np.sum(disp * axis, axis=1), 0.0, None)


def gravity_compensate(
    rec: RawRecording,
    device_mass_kg: float = SENSING_SIDE_MASS_KG,
    device_com_offset_m: float = SENSING_SIDE_COM_M,
    calib: CalibrationParams = DEFAULT_CALIBRATION,
) -> WrenchSeries:
    """Compose the wrench and subtract the sensing side's gravity wrench."""
    quats, deviation = pose.quat_normalize(rec.traj.quats)
    if deviation > 1e-3:
        warnings.warn(f"trajectory quaternions deviate from unit norm by {deviation:.2e}; normalizing")
    wrench = compose_wrench_array(rec.cells, calib)
    grav = pose.gravity_wrench(quats, device_mass_kg, device_com_offset_m)
    comp = wrench - grav
    depth = penetration_depth(rec.traj)
    return WrenchSeries(mx=comp[:, 1], my=comp[:, 2], fz=comp[:, 0], depth=depth, rate_hz=rec.rate_hz)


def butterworth_lpf(series: WrenchSeries, spec: FilterSpec = FilterSpec()) -> WrenchSeries:
    """Filter each channel independently with the spec's Butterworth cascade."""
    if len(series) <= 3 * spec.order:
        raise ValueError(f"series length {len(series)} too short for order-{spec.order} filter")
    sos = spec.sos()
    ch = series.channels()
    if spec.mode == "zero-phase":
        padlen = min(len(series) - 1, 3 * spec.order)
        out = np.stack([np.ascontiguousarray(signal.sosfiltfilt(sos, c, padlen=padlen)) for c in ch])
    else:
        out = np.stack([signal.sosfilt(sos, c) for c in ch])
    return WrenchSeries.from_channels(out, series.depth.copy(), series.rate_hz)


def _increasing_envelope(depth: np.ndarray) -> np.ndarray:
    """Indices forming a strictly increasing depth sequence, anchored at onset.

    The anchor is the last sample before depth first rises; subsequent
    indices are kept only when they exceed the running maximum.
    """
    positive = np.nonzero(depth > 0)[0]
    if len(positive) == 0:
        raise NoDipMotionError("no dip motion: penetration depth never exceeds zero")
    anchor = positive[0] - 1 if positive[0] > 0 else 0
    idx = [anchor]
    cur = depth[anchor]
    for i in range(anchor + 1, len(depth)):
        if depth[i] > cur:
            idx.append(i)
            cur = depth[i]
    if len(idx) < 2:
        raise NoDipMotionError("no dip motion: depth has no increasing segment")
    return np.asarray(idx)


def velocity_resample(
    series: WrenchSeries,
    traj: ProbeTrajectory | None = None,
    nominal_speed: float = DEFAULT_NOMINAL_SPEED,
) -> WrenchSeries:
    """Re-parameterize from time to depth at uniform steps nominal_speed/rate.

    Output sample i sits at depth i*dd, i.e. the series an equal-length
    constant-speed dip would have produced, with linear interpolation
    between recorded samples.
    """
    if nominal_speed <= 0:
        raise ValueError("nominal_speed must be positive")
    depth = penetration_depth(traj) if traj is not None else series.depth
    idx = _increasing_envelope(depth)
    dd = nominal_speed / series.rate_hz
    d_knots = depth[idx].copy()
    d_knots[0] = 0.0  # anchor the onset sample at depth zero
    n_out = int(np.floor(d_knots[-1] / dd + 1e-9)) + 1
    grid = np.arange(n_out) * dd
    ch = series.channels()[:, idx]
    out = np.stack([np.interp(grid, d_knots, c) for c in ch])
    return WrenchSeries.from_channels(out, grid, series.rate_hz)


@dataclass(frozen=True)
class NormStats:
    """Per-channel z-score statistics, frozen on the training partition."""

    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=np.asarray(d["mean"], dtype=float), std=np.asarray(d["std"], dtype=float))


def normalize(windows: np.ndarray, stats: NormStats | None = None) -> tuple[np.ndarray, NormStats]:
    """Per-channel z-score of stacked windows (M, 3, N).

    With stats=None the statistics are computed from the input (training
    partition) and returned for verbatim reuse on validation/test data.
    Zero-variance channels divide by one, with a warning.
    """
    windows = np.asarray(windows, dtype=float)
    if stats is None:
        mean = windows.mean(axis=(0, 2))
        std = windows.std(axis=(0, 2))
        if np.any(std == 0):
            warnings.warn("zero-variance channel during normalization; using unit divisor")
            std = np.where(std == 0, 1.0, std)
        stats = NormStats(mean=mean, std=std)
    return (windows - stats.mean[None, :, None]) / stats.std[None, :, None], stats


def sliding_windows(
    series: WrenchSeries | np.ndarray,
    length: int,
    stride: int | None = None,
    label: int | None = None,
    source_id: int = 0,
) -> list[ProcessedWindow]:
    """Windows at offsets 0, stride, 2*stride, ... inheriting the recording label."""
    if stride is None:
        stride = max(1, length // 2)
    ch = series.channels() if isinstance(series, WrenchSeries) else np.asarray(series, dtype=float)
    n = ch.shape[1]
    if n < length:
        warnings.warn(f"series length {n} shorter than window {length}; no windows emitted")
        return []
    return [
        ProcessedWindow(data=ch[:, start : start + length], label=label, source_id=source_id, start=start)
        for start in range(0, n - length + 1, stride)
    ]


def preprocess_recording(
    rec: RawRecording,
    filter_spec: FilterSpec = FilterSpec(),
    nominal_speed: float = DEFAULT_NOMINAL_SPEED,
    calib: CalibrationParams = DEFAULT_CALIBRATION,
    device_mass_kg: float = SENSING_SIDE_MASS_KG,
    device_com_offset_m: float = SENSING_SIDE_COM_M,
    target_len: int | None = SERIES_LENGTH,
) -> WrenchSeries:
    """Full chain: gravity compensation -> LPF -> velocity resampling.

    With target_len set, the resampled series is truncated to that length
    (raises if the dip is too shallow to supply it). target_len=None keeps
    the full resampled depth range, as the mapping pipeline needs.
    """
    series = gravity_compensate(rec, device_mass_kg, device_com_offset_m, calib)
    series = butterworth_lpf(series, filter_spec)
    series = velocity_resample(series, nominal_speed=nominal_speed)
    if target_len is not None:
        if len(series) < target_len:
            raise ValueError(
                f"resampled series has {len(series)} samples, need {target_len}; dip too shallow"
            )
        ch = series.channels()[:, :target_len]
        series = WrenchSeries.from_channels(ch, series.depth[:target_len], series.rate_hz)
    return series


# ---------------------------------------------------------------------------
# Dataset assembly and the processed-window wire format


@dataclass
class WindowDataset:
    """Stacked windows with recording-level provenance for leakage-free splits."""

    windows: np.ndarray  # (M, 3, N)
    labels: np.ndarray  # (M,)
    rec_ids: np.ndarray  # (M,) recording index each window came from
    operators: np.ndarray  # (M,)

    def __len__(self):
        return len(self.labels)

    def subset_by_recordings(self, rec_ids) -> "WindowDataset":
        mask = np.isin(self.rec_ids, np.asarray(list(rec_ids)))
        return WindowDataset(
            windows=self.windows[mask],
            labels=self.labels[mask],
            rec_ids=self.rec_ids[mask],
            operators=self.operators[mask],
        )


def build_window_dataset(
    recordings,
    length: int = 128,
    stride: int | None = None,
    filter_spec: FilterSpec = FilterSpec(),
    nominal_speed: float = DEFAULT_NOMINAL_SPEED,
    calib: CalibrationParams = DEFAULT_CALIBRATION,
    series_cache: list | None = None,
) -> WindowDataset:
    """Preprocess recordings and cut labeled windows.

    series_cache, when provided, is filled with (or reused for) the
    preprocessed 251-length series so multiple window lengths can share one
    preprocessing pass.
    """
    windows, labels, rec_ids, operators = [], [], [], []
    for i, rec in enumerate(recordings):
        if series_cache is not None and i < len(series_cache):
            series = series_cache[i]
        else:
            series = preprocess_recording(rec, filter_spec, nominal_speed, calib)
            if series_cache is not None:
                series_cache.append(series)
        for w in sliding_windows(series, length, stride, label=rec.label, source_id=i):
            windows.append(w.data)
            labels.append(w.label)
            rec_ids.append(i)
            operators.append(rec.operator)
    return WindowDataset(
        windows=np.asarray(windows),
        labels=np.asarray(labels, dtype=int),
        rec_ids=np.asarray(rec_ids, dtype=int),
        operators=np.asarray(operators, dtype=int),
    )


def build_offset_jittered_dataset(
    recordings,
    length: int = 128,
    windows_per_recording: int = 4,
    seed: int = 0,
    filter_spec: FilterSpec = FilterSpec(),
    nominal_speed: float = DEFAULT_NOMINAL_SPEED,
    calib: CalibrationParams = DEFAULT_CALIBRATION,
) -> WindowDataset:
    """Windows at random offsets over each full-depth resampled series.

    Matches the window-position distribution the mapping pipeline's depth
    nodes sample from, unlike the stride-locked 251-length training cut.
    Used for recognizers that back the interactive service.
    """
    rng = np.random.default_rng(np.random.SeedSequence([0x0FF5, seed]))
    windows, labels, rec_ids, operators = [], [], [], []
    for i, rec in enumerate(recordings):
        series = preprocess_recording(rec, filter_spec, nominal_speed, calib=calib, target_len=None)
        ch = series.channels()
        n = ch.shape[1]
        if n < length:
            warnings.warn(f"recording {i} too short ({n} < {length}); skipped")
            continue
        for start in rng.integers(0, n - length + 1, size=windows_per_recording):
            windows.append(ch[:, start : start + length])
            labels.append(rec.label)
            rec_ids.append(i)
            operators.append(rec.operator)
    return WindowDataset(
        windows=np.asarray(windows),
        labels=np.asarray(labels, dtype=int),
        rec_ids=np.asarray(rec_ids, dtype=int),
        operators=np.asarray(operators, dtype=int),
    )


def save_windows_jsonl(path, ds: WindowDataset):
    with open(path, "w") as f:
        for i in range(len(ds)):
            rec = {
                "window": ds.windows[i].tolist(),
                "label": int(ds.labels[i]),
                "meta": {"rec_id": int(ds.rec_ids[i]), "operator": int(ds.operators[i])},
            }
            f.write(json.dumps(rec) + "\n")


def load_windows_jsonl(path) -> WindowDataset:
    windows, labels, rec_ids, operators = [], [], [], []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            windows.append(np.asarray(d["window"], dtype=float))
            labels.append(d["label"])
            rec_ids.append(d["meta"].get("rec_id", 0))
            operators.append(d["meta"].get("operator", 0))
    return WindowDataset(
        windows=np.asarray(windows),
        labels=np.asarray(labels, dtype=int),
        rec_ids=np.asarray(rec_ids, dtype=int),
        operators=np.asarray(operators, dtype=int),
    )
