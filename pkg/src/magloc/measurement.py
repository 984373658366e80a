"""Synthetic magnetometer readings and the streaming denoise stage.

Sensor readings are produced as truth + Gaussian noise, quantized to the
ADC resolution and clipped at full scale. Random numbers come from numpy's
PCG64 bit generator seeded with the caller's integer seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .field_model import MagnetPose, MagnetSpec, flux_array
from .sensor_array import SensorArray

UT = 1e-6

STREAM_HEADER = ["frame", "sensor", "bx", "by", "bz", "saturated"]


@dataclass(frozen=True)
class SensorModel:
    """Per-axis magnetometer characteristics (tesla).

    Defaults follow the MLX90393: 0.161 uT per LSB, 44000 uT full scale.
    ``noise_sigma`` is a scalar or an (x, y, z) triple.
    """

    resolution: float = 0.161 * UT
    full_scale: float = 44000 * UT
    noise_sigma: float | tuple[float, float, float] = 0.0
    quantize: bool = True

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        if not self.full_scale > self.resolution:
            raise ValueError("full_scale must exceed resolution")
        sigma = np.broadcast_to(np.asarray(self.noise_sigma, dtype=float), (3,))
        if np.any(sigma < 0) or not np.all(np.isfinite(sigma)):
            raise ValueError("noise_sigma must be non-negative")

    @property
    def sigma(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.noise_sigma, dtype=float), (3,)).copy()


@dataclass(frozen=True)
class ReadingSet:
    """One frame: (N, 3) flux readings plus per-sensor saturation flags."""

    readings: np.ndarray
    saturated: np.ndarray | None = None

    def __post_init__(self):
        r = np.ascontiguousarray(self.readings, dtype=float)
        if r.ndim != 2 or r.shape[1] != 3:
            raise ValueError(f"readings must have shape (N, 3), got {r.shape}")
        s = np.zeros(len(r), bool) if self.saturated is None else np.asarray(self.saturated, bool)
        if s.shape != (len(r),):
            raise ValueError("saturated flags must have one entry per sensor")
        r.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "readings", r)
        object.__setattr__(self, "saturated", s)

    def __len__(self):
        return len(self.readings)


@dataclass(frozen=True)
class ReadingStream:
    """Time-ordered frames: readings (F, N, 3), saturated (F, N)."""

    frames: np.ndarray
    saturated: np.ndarray | None = None
    sample_index: np.ndarray | None = None

    def __post_init__(self):
        f = np.ascontiguousarray(self.frames, dtype=float)
        if f.ndim != 3 or f.shape[2] != 3:
            raise ValueError(f"frames must have shape (F, N, 3), got {f.shape}")
        s = np.zeros(f.shape[:2], bool) if self.saturated is None else np.asarray(self.saturated, bool)
        idx = np.arange(len(f)) if self.sample_index is None else np.asarray(self.sample_index, int)
        if s.shape != f.shape[:2] or idx.shape != (len(f),):
            raise ValueError("saturated/sample_index shapes do not match frames")
        for a in (f, s, idx):
            a.flags.writeable = False
        object.__setattr__(self, "frames", f)
        object.__setattr__(self, "saturated", s)
        object.__setattr__(self, "sample_index", idx)

    def __len__(self):
        return len(self.frames)

    @property
    def n_sensors(self) -> int:
        return self.frames.shape[1]

    def frame(self, k: int) -> ReadingSet:
        return ReadingSet(self.frames[k], self.saturated[k])

    @classmethod
    def from_sets(cls, sets) -> "ReadingStream":
        sets = list(sets)
        if len({len(s) for s in sets}) > 1:
            raise ValueError("all frames must have the same sensor count")
        return cls(np.stack([s.readings for s in sets]), np.stack([s.saturated for s in sets]))


def _digitize(values: np.ndarray, model: SensorModel) -> tuple[np.ndarray, np.ndarray]:
    if model.quantize:
        values = np.round(values / model.resolution) * model.resolution
    clipped = np.clip(values, -model.full_scale, model.full_scale)
    saturated = np.any(np.abs(values) > model.full_scale, axis=-1)
    return clipped, saturated


def simulate_readings(
    array: SensorArray,
    pose: MagnetPose,
    spec: MagnetSpec,
    model: SensorModel,
    seed: int | None = 0,
) -> ReadingSet:
    """Noisy, quantized, clipped readings of one frame."""
    truth = flux_array(pose, spec, array.sensors)
    rng = np.random.Generator(np.random.PCG64(seed))
    values = truth + rng.standard_normal(truth.shape) * model.sigma
    return ReadingSet(*_digitize(values, model))


def simulate_stream(
    array: SensorArray,
    pose: MagnetPose,
    spec: MagnetSpec,
    model: SensorModel,
    n_frames: int,
    seed: int | None = 0,
) -> ReadingStream:
    """``n_frames`` independent noisy frames of a static magnet."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    truth = flux_array(pose, spec, array.sensors)
    rng = np.random.Generator(np.random.PCG64(seed))
    noise = rng.standard_normal((n_frames,) + truth.shape) * model.sigma
    return ReadingStream(*_digitize(truth[None] + noise, model))


def moving_average_filter(stream: ReadingStream, window: int = 4) -> ReadingStream:
    """Causal moving average: frame k becomes the mean of frames max(0, k-w+1)..k."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if window == 1:
        return stream
    f = stream.frames
    out = np.empty_like(f)
    # average deviations from the newest frame so constant input passes through exactly
    for k in range(len(f)):
        lo = max(0, k - window + 1)
        out[k] = f[k] + (f[lo:k + 1] - f[k]).mean(axis=0)
    # flag a filtered sample if any input in its window was saturated
    sat = np.cumsum(stream.saturated, axis=0)
    sat[window:] = sat[window:] - sat[:-window]
    return ReadingStream(out, sat > 0, stream.sample_index)


def warmup_trim(stream: ReadingStream, cycles: int) -> ReadingStream:
    """Drop the first ``cycles`` frames."""
    if cycles < 0:
        raise ValueError("cycles must be >= 0")
    if cycles >= len(stream):
        raise ValueError(f"trimming {cycles} frames would leave an empty stream of {len(stream)}")
    if cycles == 0:
        return stream
    return ReadingStream(stream.frames[cycles:], stream.saturated[cycles:], stream.sample_index[cycles:])


def noise_residual_stats(raw: ReadingStream, filtered: ReadingStream) -> np.ndarray:
    """Mean |raw - filtered| per axis over all frames and sensors (tesla)."""
    if raw.frames.shape != filtered.frames.shape:
        raise ValueError(f"stream shapes differ: {raw.frames.shape} vs {filtered.frames.shape}")
    return np.abs(raw.frames - filtered.frames).mean(axis=(0, 1))


def write_stream(stream: ReadingStream, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STREAM_HEADER)
        for k in range(len(stream)):
            idx = int(stream.sample_index[k])
            for l in range(stream.n_sensors):
                bx, by, bz = stream.frames[k, l]
                w.writerow([idx, l, repr(float(bx)), repr(float(by)), repr(float(bz)), int(stream.saturated[k, l])])


def read_stream(path) -> ReadingStream:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != STREAM_HEADER:
            raise ValueError(f"{path}: expected header {','.join(STREAM_HEADER)}")
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                frame, sensor = int(row[0]), int(row[1])
                b = [float(v) for v in row[2:5]]
                sat = bool(int(row[5]))
            except (ValueError, IndexError):
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from None
            rows.setdefault(frame, {})[sensor] = (b, sat)
    if not rows:
        raise ValueError(f"{path}: no readings")
    frames = sorted(rows)
    n = len(rows[frames[0]])
    data = np.empty((len(frames), n, 3))
    sat = np.zeros((len(frames), n), bool)
    for k, fr in enumerate(frames):
        if sorted(rows[fr]) != list(range(n)):
            raise ValueError(f"{path}: frame {fr} does not list sensors 0..{n - 1}")
        for l in range(n):
            data[k, l], sat[k, l] = rows[fr][l]
    return ReadingStream(data, sat, np.array(frames))
