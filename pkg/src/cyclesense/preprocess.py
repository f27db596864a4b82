"""Ride cleaning and conversion into fixed-size labeled buckets.

The stages, applied per ride in order:

1. sort sensor rows by timestamp, drop duplicate timestamps, reject rides
   with a recording gap above :data:`MAX_GAP_MS`;
2. clear GPS fixes whose reported accuracy is a Tukey outlier (k = 1.5),
   derive velocities from the surviving fixes, then clear velocity outliers
   (k = 3.0), each fence computed within the ride;
3. resample every channel onto a uniform 10 Hz grid by linear interpolation;
4. scale each channel by its maximum absolute value, fitted on the training
   split only;
5. cut the grid into non-overlapping 10 s buckets of exactly 100 samples and
   label a bucket positive when any incident timestamp falls inside it.

Velocities are expressed in degrees per second directly from the coordinate
differences; the detection models only need a consistent magnitude, not
meters.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .rides import DatasetPartition, IncidentRecord, RawRide
from .validation import as_float_array, check_shape

__all__ = [
    "CHANNELS",
    "MAX_GAP_MS",
    "GRID_STEP_MS",
    "BUCKET_SAMPLES",
    "RideRejected",
    "EmptyInput",
    "CleanRide",
    "UniformRide",
    "LabeledBucket",
    "BucketSet",
    "NormalizationStats",
    "MaxAbsNormalizer",
    "tukey_bounds",
    "clean_ride",
    "gps_to_velocity",
    "filter_outliers",
    "resample_uniform",
    "fit_maxabs",
    "apply_maxabs",
    "bucketize_and_label",
    "ride_id_hash",
]

#: Channel order used everywhere downstream.
CHANNELS = ("acc_x", "acc_y", "acc_z", "gyr_a", "gyr_b", "gyr_c", "vel_lat", "vel_lon")

#: A ride with any adjacent-timestamp gap above this is unusable.
MAX_GAP_MS = 6000

#: Uniform grid step: 10 Hz.
GRID_STEP_MS = 100

#: Samples per bucket: 10 s at 10 Hz.
BUCKET_SAMPLES = 100

GPS_ACCURACY_TUKEY_K = 1.5
VELOCITY_TUKEY_K = 3.0


class RideRejected(Exception):
    """The ride cannot be used; ``reason`` says why."""

    def __init__(self, ride_id: str, reason: str, detail: str = ""):
        self.ride_id = ride_id
        self.reason = reason
        self.detail = detail
        message = f"ride {ride_id!r} rejected ({reason})"
        if detail:
            message += f": {detail}"
        super().__init__(message)


class EmptyInput(ValueError):
    pass


@dataclass
class CleanRide:
    """Column view of a ride after sorting, gap check and outlier clearing.

    Arrays share one length ``n`` with strictly increasing ``timestamps``.
    Missing values are NaN. ``vel_lat``/``vel_lon`` hold the velocity
    attributed to the earlier fix of each GPS pair, NaN elsewhere.
    """

    ride_id: str
    partition: DatasetPartition
    incidents: list[IncidentRecord]
    timestamps: np.ndarray            # [n] int64, epoch ms
    acc: np.ndarray                   # [n, 3] float64
    gyr: np.ndarray                   # [n, 3] float64, NaN where absent
    lat: np.ndarray                   # [n] float64, NaN where absent
    lon: np.ndarray
    gps_accuracy: np.ndarray
    vel_lat: np.ndarray               # [n] float64, NaN where undefined
    vel_lon: np.ndarray
    gps_missing: bool = False
    warnings: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.timestamps)


@dataclass
class UniformRide:
    """A ride resampled onto the uniform 10 Hz grid.

    ``data`` is ``[m, 8]`` in :data:`CHANNELS` order; sample ``i`` sits at
    ``start_ms + i * 100`` ms.
    """

    ride_id: str
    partition: DatasetPartition
    incidents: list[IncidentRecord]
    start_ms: int
    data: np.ndarray
    gps_missing: bool = False
    normalized: bool = False
    warnings: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.data)

    def timestamps(self) -> np.ndarray:
        return self.start_ms + GRID_STEP_MS * np.arange(self.n, dtype=np.int64)


@dataclass
class LabeledBucket:
    """One 10 s window of a ride: 100 samples x 8 channels plus a label."""

    ride_id: str
    bucket_index: int
    samples: np.ndarray               # [100, 8] float32
    label: int
    start_ms: int = 0


def ride_id_hash(ride_id: str) -> int:
    """Stable 64-bit hash of a ride id, for compact storage and grouping."""
    digest = hashlib.blake2b(ride_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass
class BucketSet:
    """A stack of labeled buckets from one dataset split."""

    samples: np.ndarray               # [n, 100, 8] float32
    labels: np.ndarray                # [n] uint8
    ride_hash: np.ndarray             # [n] uint64
    bucket_index: np.ndarray          # [n] uint32
    split: str = ""
    ride_ids: tuple | None = None

    def __post_init__(self):
        n = len(self.samples)
        check_shape(self.samples, (n, BUCKET_SAMPLES, len(CHANNELS)), "samples")
        for name in ("labels", "ride_hash", "bucket_index"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length {len(getattr(self, name))} != {n}")

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def n_positive(self) -> int:
        return int(self.labels.sum())

    @classmethod
    def from_buckets(cls, buckets: Sequence[LabeledBucket], split: str = "") -> "BucketSet":
        if not buckets:
            return cls(
                samples=np.zeros((0, BUCKET_SAMPLES, len(CHANNELS)), np.float32),
                labels=np.zeros(0, np.uint8),
                ride_hash=np.zeros(0, np.uint64),
                bucket_index=np.zeros(0, np.uint32),
                split=split,
                ride_ids=(),
            )
        return cls(
            samples=np.stack([b.samples for b in buckets]).astype(np.float32),
            labels=np.array([b.label for b in buckets], np.uint8),
            ride_hash=np.array([ride_id_hash(b.ride_id) for b in buckets], np.uint64),
            bucket_index=np.array([b.bucket_index for b in buckets], np.uint32),
            split=split,
            ride_ids=tuple(b.ride_id for b in buckets),
        )


def tukey_bounds(values, k: float) -> tuple[float, float]:
    """Tukey fences (q25 - k*IQR, q75 + k*IQR) of a nonempty sample.

    Quantiles interpolate linearly between order statistics. Values strictly
    outside the fences count as outliers; with zero spread nothing does.
    """
    arr = as_float_array(values, "values").ravel()
    if arr.size == 0:
        raise EmptyInput("tukey_bounds needs at least one value")
    if np.isnan(arr).any():
        raise ValueError("tukey_bounds input contains NaN")
    q25, q75 = np.quantile(arr, [0.25, 0.75])
    iqr = q75 - q25
    return float(q25 - k * iqr), float(q75 + k * iqr)


def _ride_arrays(ride: RawRide):
    n = len(ride.records)
    ts = np.empty(n, np.int64)
    acc = np.empty((n, 3))
    gyr = np.full((n, 3), np.nan)
    lat = np.full(n, np.nan)
    lon = np.full(n, np.nan)
    accuracy = np.full(n, np.nan)
    for i, r in enumerate(ride.records):
        ts[i] = r.timestamp
        acc[i] = (r.acc_x, r.acc_y, r.acc_z)
        if r.has_gyro:
            gyr[i] = (r.gyr_a, r.gyr_b, r.gyr_c)
        if r.has_gps:
            lat[i], lon[i], accuracy[i] = r.lat, r.lon, r.gps_accuracy
    return ts, acc, gyr, lat, lon, accuracy


def clean_ride(ride: RawRide) -> CleanRide:
    """Sort rows, drop duplicate timestamps, enforce the maximum gap.

    Raises :class:`RideRejected` when any adjacent gap exceeds 6000 ms or no
    sensor rows remain. Velocity columns come back NaN; see
    :func:`filter_outliers` for the rest of the cleaning.
    """
    if not ride.records:
        raise RideRejected(ride.ride_id, "no_sensor_rows")
    ts, acc, gyr, lat, lon, accuracy = _ride_arrays(ride)
    order = np.argsort(ts, kind="stable")
    ts = ts[order]
    warnings: list[str] = []
    keep = np.concatenate(([True], np.diff(ts) > 0))
    if not keep.all():
        warnings.append(f"{int((~keep).sum())} duplicate-timestamp row(s) dropped")
    idx = order[keep]
    ts = ts[keep]
    gaps = np.diff(ts)
    if gaps.size and gaps.max() > MAX_GAP_MS:
        raise RideRejected(ride.ride_id, "gap_too_large", f"{int(gaps.max())} ms")
    n = len(ts)
    return CleanRide(
        ride_id=ride.ride_id,
        partition=ride.partition,
        incidents=list(ride.incidents),
        timestamps=ts,
        acc=acc[idx],
        gyr=gyr[idx],
        lat=lat[idx],
        lon=lon[idx],
        gps_accuracy=accuracy[idx],
        vel_lat=np.full(n, np.nan),
        vel_lon=np.full(n, np.nan),
        warnings=warnings,
    )


def gps_to_velocity(timestamps_ms, lat, lon):
    """Per-pair coordinate velocity in degrees per second.

    For ``m`` fixes returns two arrays of length ``m - 1``; entry ``i`` is
    the velocity over (fix i, fix i+1), attributed to the earlier fix. A pair
    with zero time difference yields NaN and is counted in the returned skip
    count.
    """
    ts = as_float_array(timestamps_ms, "timestamps_ms").ravel()
    la = as_float_array(lat, "lat").ravel()
    lo = as_float_array(lon, "lon").ravel()
    if not (len(ts) == len(la) == len(lo)):
        raise ValueError("timestamps, lat and lon must have equal length")
    if len(ts) < 2:
        return np.zeros(0), np.zeros(0), 0
    dt = np.diff(ts) / 1000.0
    with np.errstate(divide="ignore", invalid="ignore"):
        vel_lat = np.diff(la) / dt
        vel_lon = np.diff(lo) / dt
    zero = dt == 0
    vel_lat[zero] = np.nan
    vel_lon[zero] = np.nan
    return vel_lat, vel_lon, int(zero.sum())


def filter_outliers(ride: CleanRide) -> CleanRide:
    """Clear accuracy outliers, compute velocities, clear velocity outliers.

    GPS fixes whose accuracy falls strictly outside the k=1.5 fences lose
    lat/lon/accuracy. Velocities are then derived from the surviving fixes
    and samples outside the k=3.0 fences are cleared per component. A ride
    without usable fixes is flagged ``gps_missing`` and keeps NaN velocities.
    """
    out = replace(
        ride,
        lat=ride.lat.copy(),
        lon=ride.lon.copy(),
        gps_accuracy=ride.gps_accuracy.copy(),
        vel_lat=np.full(ride.n, np.nan),
        vel_lon=np.full(ride.n, np.nan),
        warnings=list(ride.warnings),
    )
    has_fix = ~np.isnan(out.gps_accuracy)
    if has_fix.any():
        low, high = tukey_bounds(out.gps_accuracy[has_fix], GPS_ACCURACY_TUKEY_K)
        bad = has_fix & ((out.gps_accuracy < low) | (out.gps_accuracy > high))
        if bad.any():
            out.warnings.append(f"{int(bad.sum())} GPS fix(es) cleared by accuracy fences")
        out.lat[bad] = np.nan
        out.lon[bad] = np.nan
        out.gps_accuracy[bad] = np.nan

    fix_idx = np.flatnonzero(~np.isnan(out.lat) & ~np.isnan(out.lon))
    if fix_idx.size < 2:
        out.gps_missing = True
        out.warnings.append("no usable GPS fixes; velocity channels empty")
        return out

    vel_lat, vel_lon, skipped = gps_to_velocity(
        out.timestamps[fix_idx], out.lat[fix_idx], out.lon[fix_idx]
    )
    if skipped:
        out.warnings.append(f"{skipped} zero-interval GPS pair(s) skipped")
    anchor = fix_idx[:-1]
    out.vel_lat[anchor] = vel_lat
    out.vel_lon[anchor] = vel_lon

    for name in ("vel_lat", "vel_lon"):
        col = getattr(out, name)
        defined = ~np.isnan(col)
        if not defined.any():
            continue
        low, high = tukey_bounds(col[defined], VELOCITY_TUKEY_K)
        bad = defined & ((col < low) | (col > high))
        if bad.any():
            out.warnings.append(f"{int(bad.sum())} {name} sample(s) cleared by fences")
        col[bad] = np.nan
    if not (~np.isnan(out.vel_lat)).any() and not (~np.isnan(out.vel_lon)).any():
        out.gps_missing = True
    return out


def _interp_channel(grid: np.ndarray, t: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Linear interpolation with edge clamping; all-NaN gives zeros."""
    mask = ~np.isnan(values)
    if not mask.any():
        return np.zeros(len(grid))
    return np.interp(grid, t[mask].astype(np.float64), values[mask])


def resample_uniform(ride: CleanRide) -> UniformRide:
    """Resample every channel onto the shared 100 ms grid.

    The grid starts at the first timestamp and ends at or before the last.
    Channels are interpolated linearly between the samples where they are
    defined and clamped to the edge values outside that span. Channels with
    no data at all (typically velocities on a GPS-less ride) become zeros.
    """
    if ride.n == 0:
        raise RideRejected(ride.ride_id, "no_sensor_rows")
    t = ride.timestamps
    span = int(t[-1] - t[0])
    m = span // GRID_STEP_MS + 1
    grid = t[0] + GRID_STEP_MS * np.arange(m, dtype=np.int64)
    gridf = grid.astype(np.float64)
    data = np.empty((m, len(CHANNELS)))
    for j in range(3):
        data[:, j] = _interp_channel(gridf, t, ride.acc[:, j])
    warnings = list(ride.warnings)
    if np.isnan(ride.gyr).all():
        warnings.append("no gyroscope data; channels zero-filled")
    for j in range(3):
        data[:, 3 + j] = _interp_channel(gridf, t, ride.gyr[:, j])
    data[:, 6] = _interp_channel(gridf, t, ride.vel_lat)
    data[:, 7] = _interp_channel(gridf, t, ride.vel_lon)
    return UniformRide(
        ride_id=ride.ride_id,
        partition=ride.partition,
        incidents=list(ride.incidents),
        start_ms=int(t[0]),
        data=data,
        gps_missing=ride.gps_missing,
        warnings=warnings,
    )


@dataclass
class NormalizationStats:
    """Per-channel maximum absolute values fitted on the training split."""

    max_abs: np.ndarray               # [8] float64
    channels: tuple = CHANNELS

    def to_dict(self) -> dict:
        return {"channels": list(self.channels), "max_abs": [float(v) for v in self.max_abs]}

    @classmethod
    def from_dict(cls, raw: dict) -> "NormalizationStats":
        return cls(
            max_abs=np.asarray(raw["max_abs"], np.float64),
            channels=tuple(raw["channels"]),
        )


def fit_maxabs(rides: Iterable[UniformRide]) -> NormalizationStats:
    """Fit per-channel max-abs divisors over a collection of rides.

    A channel that never deviates from zero keeps divisor 1 so scaling stays
    well defined.
    """
    max_abs = np.zeros(len(CHANNELS))
    count = 0
    for ride in rides:
        if ride.n:
            max_abs = np.maximum(max_abs, np.abs(ride.data).max(axis=0))
        count += 1
    if count == 0:
        raise EmptyInput("fit_maxabs needs at least one ride")
    max_abs[max_abs == 0.0] = 1.0
    return NormalizationStats(max_abs=max_abs)


def apply_maxabs(ride: UniformRide, stats: NormalizationStats) -> UniformRide:
    """Scale a ride by fitted divisors; training values land in [-1, 1]."""
    return replace(
        ride,
        incidents=list(ride.incidents),
        data=ride.data / stats.max_abs,
        normalized=True,
        warnings=list(ride.warnings),
    )


class MaxAbsNormalizer(BaseEstimator, TransformerMixin):
    """Max-abs channel scaling over lists of uniform rides.

    Fit on the training split only; transform any split with the fitted
    divisors. The estimator form exists so the scaling step composes with
    standard tooling; :func:`fit_maxabs` / :func:`apply_maxabs` do the work.
    """

    def fit(self, X: Sequence[UniformRide], y=None):
        self.stats_ = fit_maxabs(X)
        return self

    def transform(self, X: Sequence[UniformRide]) -> list:
        if not hasattr(self, "stats_"):
            raise RuntimeError("MaxAbsNormalizer is not fitted")
        return [apply_maxabs(r, self.stats_) for r in X]


BUCKET_SPAN_MS = GRID_STEP_MS * BUCKET_SAMPLES


def bucketize_and_label(ride: UniformRide) -> list[LabeledBucket]:
    """Cut a uniform ride into 10 s buckets and label them from incidents.

    Bucket ``b`` covers ``[start + b*10s, start + (b+1)*10s)`` and gets label
    1 iff any incident timestamp falls inside that half-open span. Trailing
    samples that do not fill a whole bucket are dropped.
    """
    nb = ride.n // BUCKET_SAMPLES
    incident_ts = np.array([inc.timestamp for inc in ride.incidents], np.int64)
    out = []
    for b in range(nb):
        start = ride.start_ms + b * BUCKET_SPAN_MS
        label = bool(((incident_ts >= start) & (incident_ts < start + BUCKET_SPAN_MS)).any())
        out.append(
            LabeledBucket(
                ride_id=ride.ride_id,
                bucket_index=b,
                samples=ride.data[b * BUCKET_SAMPLES:(b + 1) * BUCKET_SAMPLES].astype(np.float32),
                label=int(label),
                start_ms=start,
            )
        )
    return out
