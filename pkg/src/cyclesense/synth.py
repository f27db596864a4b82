"""Synthetic ride generation with injected incidents.

Rides mimic the newer Android recording profile: sensor rows at roughly
4 Hz with jittered spacing, GPS fixes about every 3 s attached to the
nearest sensor row, plausible urban coordinates and occasional bad-accuracy
fixes that exercise the outlier fences downstream.

Two incident profiles are injected on top of zero-mean sensor noise:

* ``brake``: a 1 s decaying exponential on one accelerometer axis with a
  sharp onset; clearly visible to anything watching for jumps.
* ``swerve``: a 1 s sinusoid on one gyroscope axis, plus a weak smooth
  accelerometer lean. Nearly invisible in the accelerometer jumps, obvious
  in the gyroscope.

Amplitudes scale with ``amplitude_sigma`` times the channel noise level, so
detectability is controlled by a single knob. Generation is deterministic
per (seed, ride index), so datasets are reproducible file by file.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .preprocess import BUCKET_SAMPLES, GRID_STEP_MS
from .rides import DatasetPartition, IncidentRecord, RawRide, SensorRecord, write_ride
from .training import derive_seed
from .validation import check_fraction, check_positive

__all__ = ["SynthSpec", "generate_rides", "generate_dataset"]

_BASE_EPOCH_MS = 1_700_000_000_000
# Degrees of latitude per meter, for converting speeds to coordinate rates.
_DEG_PER_M = 1.0 / 111_320.0
_WINDOW_MS = BUCKET_SAMPLES * GRID_STEP_MS

INCIDENT_TYPE_BRAKE = 1
INCIDENT_TYPE_SWERVE = 2


@dataclass(frozen=True)
class SynthSpec:
    """Knobs of the synthetic dataset generator."""

    n_rides: int = 500
    duration_range_s: tuple = (45.0, 90.0)
    amplitude_sigma: float = 6.0
    incident_rate: float = 1.6          # mean incidents per ride (Poisson)
    brake_fraction: float = 0.7         # remaining incidents are swerves
    acc_noise: float = 0.4              # m/s^2, per axis
    gyr_noise: float = 0.15             # rad/s, per axis
    sensor_period_ms: float = 250.0     # ~4 Hz rows
    sensor_jitter_ms: float = 40.0
    gps_period_s: float = 3.0
    swerve_hz: float = 1.0
    swerve_acc_scale: float = 0.35      # accelerometer lean relative to amplitude
    brake_tau_ms: float = 325.0
    bad_fix_rate: float = 0.01          # fraction of GPS fixes with huge accuracy
    seed: int = 0
    region: str = "synthtown"

    def __post_init__(self):
        check_positive(self.n_rides, "n_rides")
        lo, hi = self.duration_range_s
        if not 30.0 <= lo <= hi:
            raise ValueError(
                f"duration range must satisfy 30 <= lo <= hi, got {self.duration_range_s}"
            )
        check_positive(self.amplitude_sigma, "amplitude_sigma")
        check_positive(self.acc_noise, "acc_noise")
        check_positive(self.gyr_noise, "gyr_noise")
        check_fraction(self.brake_fraction, "brake_fraction")
        check_fraction(self.bad_fix_rate, "bad_fix_rate")
        if self.incident_rate < 0:
            raise ValueError(f"incident_rate must be >= 0, got {self.incident_rate}")


def _incident_times(rng, t0: int, t_end: int, count: int) -> list[int]:
    """Injection start times, kept away from the ride edges and each other.

    Times are also constrained so the 1 s profile, its interpolation smear,
    and the snap to the nearest sensor row all stay inside a single 10 s
    labeling window; otherwise part of the signal bleeds into a
    neighbouring window that carries the opposite label.
    """
    lo = t0 + 8_000
    hi = t_end - 12_000
    if hi <= lo:
        return []
    times: list[int] = []
    for _ in range(count):
        for _attempt in range(50):
            t = int(rng.integers(lo, hi))
            if not 600 <= (t - t0) % _WINDOW_MS <= 8_400:
                continue
            if all(abs(t - other) >= 12_000 for other in times):
                times.append(t)
                break
    return sorted(times)


def _generate_ride(spec: SynthSpec, index: int) -> RawRide:
    rng = np.random.default_rng(derive_seed(spec.seed, f"ride:{index}"))
    duration_ms = rng.uniform(*spec.duration_range_s) * 1000.0
    t0 = _BASE_EPOCH_MS + index * 10_000_000

    # Sensor row times: jittered around the nominal period.
    steps = rng.uniform(spec.sensor_period_ms - spec.sensor_jitter_ms,
                        spec.sensor_period_ms + spec.sensor_jitter_ms,
                        size=int(duration_ms / spec.sensor_period_ms) + 8)
    ts = t0 + np.cumsum(steps).astype(np.int64)
    ts = np.concatenate(([t0], ts[ts < t0 + duration_ms]))
    n = len(ts)

    acc = rng.normal(0.0, spec.acc_noise, (n, 3))
    gyr = rng.normal(0.0, spec.gyr_noise, (n, 3))

    # GPS random walk: cycling speed with a slowly drifting heading.
    gps_rows = np.searchsorted(
        ts, np.arange(t0, ts[-1] + 1, int(spec.gps_period_s * 1000), dtype=np.int64))
    gps_rows = np.unique(np.clip(gps_rows, 0, n - 1))
    lat = np.full(n, np.nan)
    lon = np.full(n, np.nan)
    accuracy = np.full(n, np.nan)
    base_lat = 52.45 + rng.uniform(0.0, 0.1)
    base_lon = 13.30 + rng.uniform(0.0, 0.15)
    heading = rng.uniform(0.0, 2.0 * np.pi)
    position = np.array([base_lat, base_lon])
    prev_t = None
    for row in gps_rows:
        t = float(ts[row])
        if prev_t is not None:
            dt = (t - prev_t) / 1000.0
            heading += rng.normal(0.0, 0.15)
            speed = max(0.0, rng.normal(4.0, 1.0))          # m/s
            position = position + dt * speed * _DEG_PER_M * np.array(
                [np.cos(heading), np.sin(heading) / np.cos(np.deg2rad(position[0]))])
        prev_t = t
        fix_accuracy = (rng.uniform(40.0, 80.0) if rng.random() < spec.bad_fix_rate
                        else rng.uniform(3.0, 8.0))
        noise = rng.normal(0.0, 0.3 * fix_accuracy * _DEG_PER_M, 2)
        lat[row] = position[0] + noise[0]
        lon[row] = position[1] + noise[1]
        accuracy[row] = fix_accuracy

    # Incidents.
    count = int(rng.poisson(spec.incident_rate))
    incidents: list[IncidentRecord] = []
    for t_inj in _incident_times(rng, int(ts[0]), int(ts[-1]), count):
        # Snap to the nearest sensor row so the annotation matches a row
        # timestamp exactly.
        row = int(np.argmin(np.abs(ts - t_inj)))
        t_start = int(ts[row])
        in_window = (ts >= t_start) & (ts < t_start + 1000)
        rel = (ts[in_window] - t_start) / 1000.0            # seconds into the window
        if rng.random() < spec.brake_fraction:
            axis = int(rng.integers(0, 3))
            sign = 1.0 if rng.random() < 0.5 else -1.0
            amp = spec.amplitude_sigma * spec.acc_noise
            acc[in_window, axis] += sign * amp * np.exp(
                -rel * 1000.0 / spec.brake_tau_ms)
            kind = INCIDENT_TYPE_BRAKE
        else:
            g_axis = int(rng.integers(0, 3))
            a_axis = int(rng.integers(0, 2))                # horizontal axes
            sign = 1.0 if rng.random() < 0.5 else -1.0
            g_amp = spec.amplitude_sigma * spec.gyr_noise
            a_amp = spec.swerve_acc_scale * spec.amplitude_sigma * spec.acc_noise
            gyr[in_window, g_axis] += g_amp * np.sin(
                2.0 * np.pi * spec.swerve_hz * rel)
            # the lean of the bike: smooth enough to slip past a jump
            # detector while still leaving an accelerometer pattern
            acc[in_window, a_axis] += sign * a_amp * np.sin(np.pi * rel)
            kind = INCIDENT_TYPE_SWERVE
        near_fix = gps_rows[np.argmin(np.abs(ts[gps_rows] - t_start))]
        incidents.append(IncidentRecord(
            timestamp=t_start,
            lat=float(lat[near_fix]),
            lon=float(lon[near_fix]),
            incident_type=kind,
        ))

    records = []
    for i in range(n):
        has_fix = not np.isnan(accuracy[i])
        records.append(SensorRecord(
            timestamp=int(ts[i]),
            acc_x=float(acc[i, 0]), acc_y=float(acc[i, 1]), acc_z=float(acc[i, 2]),
            lat=float(lat[i]) if has_fix else None,
            lon=float(lon[i]) if has_fix else None,
            gps_accuracy=float(accuracy[i]) if has_fix else None,
            gyr_a=float(gyr[i, 0]), gyr_b=float(gyr[i, 1]), gyr_c=float(gyr[i, 2]),
        ))
    ride_id = f"ride_{index:05d}"
    return RawRide(
        ride_id=ride_id,
        incidents=incidents,
        records=records,
        partition=DatasetPartition.ANDROID_NEW,
    )


def generate_rides(spec: SynthSpec) -> list[RawRide]:
    """Generate the dataset in memory."""
    return [_generate_ride(spec, i) for i in range(spec.n_rides)]


def generate_dataset(out_dir, spec: SynthSpec) -> list[Path]:
    """Generate the dataset as ride files under ``out_dir``.

    Files land in ``<out_dir>/<region>/<partition>/<ride_id>.csv`` and are
    byte-identical across runs with the same spec. Returns the written
    paths.
    """
    out_dir = Path(out_dir)
    paths = []
    for ride in generate_rides(spec):
        path = out_dir / spec.region / ride.partition.value / f"{ride.ride_id}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(write_ride(ride), encoding="utf-8")
        paths.append(path)
    return paths
