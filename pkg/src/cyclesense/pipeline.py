"""End-to-end orchestration: rides in, split tensor batches out.

Ties the stages together with the leakage rules enforced: the ride-level
split happens before any fitting, normalization statistics come from the
training split only, and only the training split is ever augmented
(downstream, via the model's own training).
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .preprocess import (BucketSet, MaxAbsNormalizer, NormalizationStats,
                         RideRejected, UniformRide, apply_maxabs,
                         bucketize_and_label, clean_ride, filter_outliers,
                         fit_maxabs, resample_uniform)
from .rides import (ColumnMap, DEFAULT_COLUMN_MAP, DatasetPartition, RawRide,
                    load_ride_file, partition_dataset)
from .spectral import DftFeatureExtractor, FrequencySpec, TensorBatch
from .training import SplitAssignment, SplitPlan, split_rides

__all__ = ["PreparedData", "load_rides", "prepare_dataset", "prepare_from_dir",
           "save_prepared", "load_prepared", "ride_to_buckets"]

SPLIT_NAMES = ("train", "val", "test")


@dataclass
class PreparedData:
    """Everything the models need, separated by split."""

    buckets: dict
    tensors: dict
    stats: NormalizationStats
    assignment: SplitAssignment
    freq: FrequencySpec
    rejected: list = field(default_factory=list)    # (ride_id, reason)
    warnings: list = field(default_factory=list)


def load_rides(data_dir, region: str | None = None,
               partition: DatasetPartition | None = None,
               column_map: ColumnMap = DEFAULT_COLUMN_MAP,
               max_workers: int = 1) -> tuple[list[RawRide], list]:
    """Scan a directory and parse every usable ride, with optional filters."""
    scan = partition_dataset(data_dir, region=region, column_map=column_map,
                             max_workers=max_workers)
    wanted = [rid for rid, part in scan.entries
              if partition is None or part == partition]
    errors = list(scan.errors)

    def _load(rid):
        try:
            return load_ride_file(data_dir, rid, column_map=column_map), None
        except Exception as exc:            # noqa: BLE001 - reported per file
            return None, (rid, str(exc))

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(_load, wanted))
    else:
        results = [_load(rid) for rid in wanted]
    rides = []
    for ride, error in results:
        if ride is not None:
            rides.append(ride)
        else:
            errors.append(error)
    return rides, errors


def _clean_resample(ride: RawRide):
    return resample_uniform(filter_outliers(clean_ride(ride)))


def prepare_dataset(rides: list[RawRide], plan: SplitPlan,
                    freq: FrequencySpec | None = None, use_dft: bool = True,
                    normalize: bool = True) -> PreparedData:
    """Run the full preprocessing pipeline over parsed rides.

    Rides that fail cleaning are recorded under ``rejected`` and excluded
    before the split so ratios refer to usable rides.
    """
    freq = freq if freq is not None else FrequencySpec()
    uniform: dict[str, UniformRide] = {}
    rejected = []
    warnings = []
    for ride in rides:
        try:
            u = _clean_resample(ride)
        except RideRejected as exc:
            rejected.append((ride.ride_id, exc.reason))
            continue
        uniform[ride.ride_id] = u
        warnings.extend(f"{ride.ride_id}: {w}" for w in u.warnings)

    assignment = split_rides(sorted(uniform), plan)
    split_of = {rid: name for name in SPLIT_NAMES
                for rid in getattr(assignment, name)}

    if normalize:
        stats = fit_maxabs([uniform[rid] for rid in assignment.train])
        for rid in uniform:
            uniform[rid] = apply_maxabs(uniform[rid], stats)
    else:
        stats = NormalizationStats(max_abs=np.ones(8))

    extractor = DftFeatureExtractor(f=freq.f, use_dft=use_dft)
    buckets = {}
    tensors = {}
    for name in SPLIT_NAMES:
        split_buckets = []
        for rid in getattr(assignment, name):
            split_buckets.extend(bucketize_and_label(uniform[rid]))
        bucket_set = BucketSet.from_buckets(split_buckets, split=name)
        buckets[name] = bucket_set
        tensors[name] = extractor.transform(bucket_set)
    return PreparedData(buckets=buckets, tensors=tensors, stats=stats,
                        assignment=assignment, freq=freq,
                        rejected=rejected, warnings=warnings)


def prepare_from_dir(data_dir, plan: SplitPlan, freq: FrequencySpec | None = None,
                     use_dft: bool = True, normalize: bool = True,
                     region: str | None = None,
                     partition: DatasetPartition | None = None,
                     column_map: ColumnMap = DEFAULT_COLUMN_MAP,
                     max_workers: int = 1) -> PreparedData:
    rides, errors = load_rides(data_dir, region=region, partition=partition,
                               column_map=column_map, max_workers=max_workers)
    prepared = prepare_dataset(rides, plan, freq=freq, use_dft=use_dft,
                               normalize=normalize)
    prepared.warnings.extend(f"{rid}: unreadable ({msg})" for rid, msg in errors)
    return prepared


def ride_to_buckets(ride: RawRide, stats: NormalizationStats,
                    freq: FrequencySpec, use_dft: bool = True
                    ) -> tuple[BucketSet, TensorBatch]:
    """Prepare a single ride with previously fitted normalization.

    Used at detection time: the ride is cleaned and resampled exactly like
    training data, scaled with the stored statistics, and cut into buckets.
    """
    u = apply_maxabs(_clean_resample(ride), stats)
    bucket_set = BucketSet.from_buckets(bucketize_and_label(u), split="detect")
    extractor = DftFeatureExtractor(f=freq.f, use_dft=use_dft)
    return bucket_set, extractor.transform(bucket_set)


def save_prepared(out_dir, prepared: PreparedData, with_tensors: bool = True):
    """Persist a prepared dataset: one bucket file per split plus metadata."""
    from .storage import save_bucket_file

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in SPLIT_NAMES:
        save_bucket_file(out_dir / f"{name}.csnb", prepared.buckets[name],
                         prepared.tensors[name] if with_tensors else None)
    meta = {
        "f": prepared.freq.f,
        "normalization": prepared.stats.to_dict(),
        "splits": {name: sorted(getattr(prepared.assignment, name))
                   for name in SPLIT_NAMES},
        "rejected": [[rid, reason] for rid, reason in prepared.rejected],
    }
    with open(out_dir / "dataset.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_prepared(out_dir) -> tuple[dict, dict, NormalizationStats, FrequencySpec]:
    """Load bucket files and metadata written by :func:`save_prepared`."""
    from .storage import load_bucket_file

    out_dir = Path(out_dir)
    with open(out_dir / "dataset.json", "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    buckets = {}
    tensors = {}
    for name in SPLIT_NAMES:
        bucket_set, tensor_batch = load_bucket_file(out_dir / f"{name}.csnb", split=name)
        buckets[name] = bucket_set
        tensors[name] = tensor_batch
    stats = NormalizationStats.from_dict(meta["normalization"])
    return buckets, tensors, stats, FrequencySpec(f=meta["f"])
