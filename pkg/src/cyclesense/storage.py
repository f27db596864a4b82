"""Binary file formats for preprocessed buckets and model checkpoints.

Both formats are little-endian with float32 payloads.

Bucket files (magic ``CSNB``)::

    magic       4 bytes
    version     u16 (currently 1)
    flags       u16 (bit 0: tensor payload present)
    f           u16 (DFT window length; 0 when no tensors)
    windows     u16
    count       u64
    per bucket:
        ride_hash    u64
        bucket_index u32
        label        u8
        samples      100*8 f32
        [tensors]    accel 3*f*w*2 f32, gyro 3*f*w*2 f32, gps 2*w f32

Checkpoint files (magic ``CSNW``) hold named arrays::

    magic 4 bytes, version u16, count u32
    per entry: name_len u16, name utf-8, rank u8, extents u32 each, f32 data

Checkpoints include batch-norm running statistics alongside the trainable
parameters; both are needed to reproduce inference exactly.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .preprocess import BUCKET_SAMPLES, CHANNELS, BucketSet
from .spectral import TensorBatch

__all__ = [
    "StorageError",
    "save_bucket_file",
    "load_bucket_file",
    "save_weights",
    "load_weights",
]

BUCKET_MAGIC = b"CSNB"
WEIGHTS_MAGIC = b"CSNW"
FORMAT_VERSION = 1

_BUCKET_HEADER = struct.Struct("<4sHHHHQ")
_BUCKET_ROW = struct.Struct("<QIB")
_WEIGHTS_HEADER = struct.Struct("<4sHI")


class StorageError(ValueError):
    """A file does not contain what its header promises."""


def save_bucket_file(path, buckets: BucketSet, tensors: TensorBatch | None = None):
    """Write one split's buckets, optionally with their tensor sets."""
    if tensors is not None:
        if tensors.n != buckets.n:
            raise ValueError(
                f"tensor batch has {tensors.n} entries for {buckets.n} buckets"
            )
        f, w = tensors.f, tensors.windows
        flags = 1
    else:
        f = w = flags = 0
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_BUCKET_HEADER.pack(BUCKET_MAGIC, FORMAT_VERSION, flags, f, w, buckets.n))
        for i in range(buckets.n):
            fh.write(_BUCKET_ROW.pack(int(buckets.ride_hash[i]),
                                      int(buckets.bucket_index[i]),
                                      int(buckets.labels[i])))
            fh.write(np.ascontiguousarray(buckets.samples[i], "<f4").tobytes())
            if tensors is not None:
                fh.write(np.ascontiguousarray(tensors.accel[i], "<f4").tobytes())
                fh.write(np.ascontiguousarray(tensors.gyro[i], "<f4").tobytes())
                fh.write(np.ascontiguousarray(tensors.gps[i], "<f4").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise StorageError(f"truncated file while reading {what}")
    return data


def load_bucket_file(path, split: str = "") -> tuple[BucketSet, TensorBatch | None]:
    """Read a bucket file back; the split tag is supplied by the caller."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic, version, flags, f, w, count = _BUCKET_HEADER.unpack(
            _read_exact(fh, _BUCKET_HEADER.size, "header"))
        if magic != BUCKET_MAGIC:
            raise StorageError(f"{path} is not a bucket file (magic {magic!r})")
        if version != FORMAT_VERSION:
            raise StorageError(f"unsupported bucket file version {version}")
        with_tensors = bool(flags & 1)
        n_channels = len(CHANNELS)
        samples = np.empty((count, BUCKET_SAMPLES, n_channels), np.float32)
        labels = np.empty(count, np.uint8)
        hashes = np.empty(count, np.uint64)
        indices = np.empty(count, np.uint32)
        if with_tensors:
            accel = np.empty((count, 3, f, w, 2), np.float32)
            gyro = np.empty((count, 3, f, w, 2), np.float32)
            gps = np.empty((count, 2, 1, w, 1), np.float32)
        sample_bytes = BUCKET_SAMPLES * n_channels * 4
        spec_bytes = 3 * f * w * 2 * 4
        gps_bytes = 2 * w * 4
        for i in range(count):
            hashes[i], indices[i], labels[i] = _BUCKET_ROW.unpack(
                _read_exact(fh, _BUCKET_ROW.size, f"bucket {i}"))
            samples[i] = np.frombuffer(
                _read_exact(fh, sample_bytes, f"bucket {i} samples"), "<f4"
            ).reshape(BUCKET_SAMPLES, n_channels)
            if with_tensors:
                accel[i] = np.frombuffer(
                    _read_exact(fh, spec_bytes, f"bucket {i} accel"), "<f4"
                ).reshape(3, f, w, 2)
                gyro[i] = np.frombuffer(
                    _read_exact(fh, spec_bytes, f"bucket {i} gyro"), "<f4"
                ).reshape(3, f, w, 2)
                gps[i] = np.frombuffer(
                    _read_exact(fh, gps_bytes, f"bucket {i} gps"), "<f4"
                ).reshape(2, 1, w, 1)
        if fh.read(1):
            raise StorageError(f"{path} has trailing bytes")
    buckets = BucketSet(samples=samples, labels=labels, ride_hash=hashes,
                        bucket_index=indices, split=split)
    tensors = None
    if with_tensors:
        tensors = TensorBatch(accel=accel, gyro=gyro, gps=gps,
                              labels=labels.copy(), ride_hash=hashes.copy(),
                              bucket_index=indices.copy(), split=split)
    return buckets, tensors


def save_weights(path, named_arrays: dict):
    """Write a checkpoint of named float arrays."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_WEIGHTS_HEADER.pack(WEIGHTS_MAGIC, FORMAT_VERSION, len(named_arrays)))
        for name in sorted(named_arrays):
            arr = np.ascontiguousarray(named_arrays[name], "<f4")
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise ValueError(f"parameter name too long: {name[:40]}...")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<I", extent))
            fh.write(arr.tobytes())


def load_weights(path) -> dict:
    """Read a checkpoint back into a name -> float32 array mapping."""
    path = Path(path)
    out: dict = {}
    with open(path, "rb") as fh:
        magic, version, count = _WEIGHTS_HEADER.unpack(
            _read_exact(fh, _WEIGHTS_HEADER.size, "header"))
        if magic != WEIGHTS_MAGIC:
            raise StorageError(f"{path} is not a checkpoint (magic {magic!r})")
        if version != FORMAT_VERSION:
            raise StorageError(f"unsupported checkpoint version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4, "extent"))[0]
                for _ in range(rank)
            )
            n_values = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(
                _read_exact(fh, n_values * 4, f"data of {name}"), "<f4"
            ).reshape(shape)
            out[name] = data.copy()
        if fh.read(1):
            raise StorageError(f"{path} has trailing bytes")
    return out
