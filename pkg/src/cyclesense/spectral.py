"""Short-window discrete Fourier features over sensor buckets.

Each 100-sample bucket is cut into ``T = 100 / f`` consecutive windows of
``f`` samples. Every accelerometer and gyroscope axis gets an unnormalized
forward DFT per window::

    X_k = sum_n x_n * exp(-2 pi i k n / f),  k = 0 .. f-1

stored as separate real and imaginary channels. The slow GPS velocity
channels carry no useful spectrum at these window lengths, so they are
reduced to their per-window mean instead.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .preprocess import BUCKET_SAMPLES, BucketSet
from .validation import check_finite, check_shape

__all__ = [
    "FrequencySpec",
    "SensorTensorSet",
    "TensorBatch",
    "dft_f_point",
    "bucket_to_tensors",
    "DftFeatureExtractor",
]


@dataclass(frozen=True)
class FrequencySpec:
    """Window length ``f`` for the per-bucket DFT; must divide 100."""

    f: int = 10

    def __post_init__(self):
        if self.f < 2:
            raise ValueError(f"f must be at least 2, got {self.f}")
        if BUCKET_SAMPLES % self.f != 0:
            raise ValueError(f"f must divide {BUCKET_SAMPLES}, got {self.f}")

    @property
    def windows(self) -> int:
        return BUCKET_SAMPLES // self.f


def dft_f_point(window, f: int | None = None) -> np.ndarray:
    """Unnormalized forward DFT of one window (or a stack of windows).

    Input may be any shape ``[..., f]``; the transform runs over the last
    axis, whose length must equal ``f`` when given. No scaling is applied in
    either direction, so the inverse is ``ifft * f``.
    """
    arr = np.asarray(window, dtype=np.float64)
    if arr.shape[-1] < 1:
        raise ValueError("window must hold at least one sample")
    if f is not None and arr.shape[-1] != f:
        raise ValueError(f"window length {arr.shape[-1]} does not match f={f}")
    return np.fft.fft(arr, axis=-1)


@dataclass
class SensorTensorSet:
    """Frequency-domain view of one bucket, separated per sensor.

    ``accel`` and ``gyro`` are ``[3, f, T, 2]`` (axis, frequency bin, window,
    re/im); ``gps`` is ``[2, 1, T, 1]`` holding per-window velocity means.
    """

    accel: np.ndarray
    gyro: np.ndarray
    gps: np.ndarray

    def __post_init__(self):
        f, t = self.accel.shape[1], self.accel.shape[2]
        check_shape(self.accel, (3, f, t, 2), "accel")
        check_shape(self.gyro, (3, f, t, 2), "gyro")
        check_shape(self.gps, (2, 1, t, 1), "gps")
        for name in ("accel", "gyro", "gps"):
            check_finite(getattr(self, name), name)

    @property
    def f(self) -> int:
        return self.accel.shape[1]

    @property
    def windows(self) -> int:
        return self.accel.shape[2]


def _windowed(samples: np.ndarray, f: int) -> np.ndarray:
    """[100, c] -> [c, T, f]: per-channel consecutive windows."""
    t = BUCKET_SAMPLES // f
    return samples.T.reshape(samples.shape[1], t, f)


def _spectrum(samples: np.ndarray, f: int, use_dft: bool) -> np.ndarray:
    """[100, c] -> [c, f, T, 2] re/im feature block."""
    win = _windowed(np.asarray(samples, np.float64), f)
    if use_dft:
        spec = dft_f_point(win)                     # [c, T, f] complex
        re = spec.real.transpose(0, 2, 1)
        im = spec.imag.transpose(0, 2, 1)
    else:
        # Identity fallback: raw window samples in the real channel. Keeps
        # shapes so the downstream model is unchanged.
        re = win.transpose(0, 2, 1)
        im = np.zeros_like(re)
    return np.stack([re, im], axis=-1)


def bucket_to_tensors(samples, spec: FrequencySpec, use_dft: bool = True) -> SensorTensorSet:
    """Build the per-sensor tensor set for one bucket of [100, 8] samples."""
    arr = np.asarray(samples, dtype=np.float64)
    check_shape(arr, (BUCKET_SAMPLES, 8), "samples")
    f = spec.f
    accel = _spectrum(arr[:, 0:3], f, use_dft)
    gyro = _spectrum(arr[:, 3:6], f, use_dft)
    vel = _windowed(arr[:, 6:8], f)                 # [2, T, f]
    gps = vel.mean(axis=-1)[:, None, :, None]       # [2, 1, T, 1]
    return SensorTensorSet(accel=accel, gyro=gyro, gps=gps)


@dataclass
class TensorBatch:
    """Stacked tensor sets of one split, aligned with labels and provenance.

    Arrays are float32: ``accel``/``gyro`` ``[n, 3, f, T, 2]``, ``gps``
    ``[n, 2, 1, T, 1]``.
    """

    accel: np.ndarray
    gyro: np.ndarray
    gps: np.ndarray
    labels: np.ndarray                # [n] uint8
    ride_hash: np.ndarray             # [n] uint64
    bucket_index: np.ndarray          # [n] uint32
    split: str = ""

    def __post_init__(self):
        n, f, t = self.accel.shape[0], self.accel.shape[2], self.accel.shape[3]
        check_shape(self.accel, (n, 3, f, t, 2), "accel")
        check_shape(self.gyro, (n, 3, f, t, 2), "gyro")
        check_shape(self.gps, (n, 2, 1, t, 1), "gps")
        for name in ("labels", "ride_hash", "bucket_index"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length mismatch")

    @property
    def n(self) -> int:
        return self.accel.shape[0]

    @property
    def f(self) -> int:
        return self.accel.shape[2]

    @property
    def windows(self) -> int:
        return self.accel.shape[3]

    @property
    def n_positive(self) -> int:
        return int(self.labels.sum())

    def take(self, idx) -> "TensorBatch":
        return TensorBatch(
            accel=self.accel[idx],
            gyro=self.gyro[idx],
            gps=self.gps[idx],
            labels=self.labels[idx],
            ride_hash=self.ride_hash[idx],
            bucket_index=self.bucket_index[idx],
            split=self.split,
        )

    @classmethod
    def concatenate(cls, parts: Sequence["TensorBatch"]) -> "TensorBatch":
        if not parts:
            raise ValueError("nothing to concatenate")
        split = parts[0].split
        return cls(
            accel=np.concatenate([p.accel for p in parts]),
            gyro=np.concatenate([p.gyro for p in parts]),
            gps=np.concatenate([p.gps for p in parts]),
            labels=np.concatenate([p.labels for p in parts]),
            ride_hash=np.concatenate([p.ride_hash for p in parts]),
            bucket_index=np.concatenate([p.bucket_index for p in parts]),
            split=split,
        )


class DftFeatureExtractor(BaseEstimator, TransformerMixin):
    """Turns a :class:`BucketSet` into a :class:`TensorBatch`.

    ``use_dft=False`` swaps the DFT for an identity windowing with a zero
    imaginary channel, which keeps every shape intact; it exists to measure
    what the frequency-domain view itself contributes.
    """

    def __init__(self, f: int = 10, use_dft: bool = True):
        self.f = f
        self.use_dft = use_dft

    def fit(self, X=None, y=None):
        return self

    def transform(self, X: BucketSet) -> TensorBatch:
        spec = FrequencySpec(f=self.f)
        t = spec.windows
        n = X.n
        accel = np.empty((n, 3, spec.f, t, 2), np.float32)
        gyro = np.empty((n, 3, spec.f, t, 2), np.float32)
        gps = np.empty((n, 2, 1, t, 1), np.float32)
        for i in range(n):
            ts = bucket_to_tensors(X.samples[i], spec, use_dft=self.use_dft)
            accel[i] = ts.accel
            gyro[i] = ts.gyro
            gps[i] = ts.gps
        return TensorBatch(
            accel=accel,
            gyro=gyro,
            gps=gps,
            labels=X.labels.copy(),
            ride_hash=X.ride_hash.copy(),
            bucket_index=X.bucket_index.copy(),
            split=X.split,
        )
