"""Cleaning, outlier fences, resampling, scaling and bucketing."""
import numpy as np
import pytest

from cyclesense.preprocess import (BUCKET_SAMPLES, CHANNELS, EmptyInput,
                                   LabeledBucket, BucketSet, MaxAbsNormalizer,
                                   NormalizationStats, RideRejected,
                                   UniformRide, apply_maxabs,
                                   bucketize_and_label, clean_ride,
                                   filter_outliers, fit_maxabs,
                                   gps_to_velocity, resample_uniform,
                                   ride_id_hash, tukey_bounds)
from cyclesense.rides import (DatasetPartition, IncidentRecord, RawRide,
                              SensorRecord)


def make_ride(rows, incidents=(), ride_id="r"):
    return RawRide(ride_id=ride_id, incidents=list(incidents), records=rows,
                   partition=DatasetPartition.ANDROID_NEW)


def rec(ts, acc=(0.0, 0.0, 0.0), gps=None, gyr=None):
    kw = {}
    if gps is not None:
        kw.update(lat=gps[0], lon=gps[1], gps_accuracy=gps[2])
    if gyr is not None:
        kw.update(gyr_a=gyr[0], gyr_b=gyr[1], gyr_c=gyr[2])
    return SensorRecord(timestamp=ts, acc_x=acc[0], acc_y=acc[1], acc_z=acc[2], **kw)


class TestTukeyBounds:
    def test_hand_computed_quartile_fences(self):
        # {1,2,3,4}: q25=1.75, q75=3.25, IQR=1.5 -> 1.75-2.25, 3.25+2.25
        low, high = tukey_bounds([1.0, 2.0, 3.0, 4.0], k=1.5)
        assert low == pytest.approx(-0.5)
        assert high == pytest.approx(5.5)

    def test_five_values_k15(self):
        # sorted [3,4,5,6,50]: q25=4, q75=6, IQR=2 -> (1, 9)
        low, high = tukey_bounds([50.0, 3.0, 6.0, 4.0, 5.0], k=1.5)
        assert (low, high) == pytest.approx((1.0, 9.0))

    def test_k_scales_the_fence_width(self):
        l15, h15 = tukey_bounds([1.0, 2.0, 3.0, 4.0], k=1.5)
        l30, h30 = tukey_bounds([1.0, 2.0, 3.0, 4.0], k=3.0)
        assert l30 == pytest.approx(l15 - 1.5 * 1.5)
        assert h30 == pytest.approx(h15 + 1.5 * 1.5)

    def test_zero_spread_keeps_everything(self):
        low, high = tukey_bounds([7.0] * 10, k=1.5)
        assert low == high == 7.0

    def test_empty_raises(self):
        with pytest.raises(EmptyInput):
            tukey_bounds([], k=1.5)

    def test_nan_raises(self):
        with pytest.raises(ValueError):
            tukey_bounds([1.0, np.nan], k=1.5)


class TestCleanRide:
    def test_sorts_by_timestamp(self):
        ride = make_ride([rec(3000, acc=(3, 0, 0)), rec(1000, acc=(1, 0, 0)),
                          rec(2000, acc=(2, 0, 0))])
        out = clean_ride(ride)
        assert out.timestamps.tolist() == [1000, 2000, 3000]
        assert out.acc[:, 0].tolist() == [1.0, 2.0, 3.0]

    def test_duplicate_timestamp_keeps_first(self):
        ride = make_ride([rec(1000, acc=(0.1, 0, 0)), rec(1000, acc=(0.9, 0, 0)),
                          rec(2000)])
        out = clean_ride(ride)
        assert out.n == 2
        assert out.acc[0, 0] == pytest.approx(0.1)
        assert any("duplicate" in w for w in out.warnings)

    def test_gap_at_limit_accepted(self):
        out = clean_ride(make_ride([rec(1000), rec(7000)]))
        assert out.n == 2

    def test_gap_over_limit_rejected(self):
        with pytest.raises(RideRejected) as ei:
            clean_ride(make_ride([rec(1000), rec(7001)]))
        assert ei.value.reason == "gap_too_large"

    def test_empty_ride_rejected(self):
        with pytest.raises(RideRejected):
            clean_ride(make_ride([]))


class TestGpsToVelocity:
    def test_hand_computed_pairs(self):
        ts = [1000, 2000, 4000]
        lat = [10.0, 10.002, 10.001]
        lon = [20.0, 20.001, 20.004]
        vlat, vlon, skipped = gps_to_velocity(ts, lat, lon)
        assert skipped == 0
        assert vlat == pytest.approx([0.002, -0.0005])
        assert vlon == pytest.approx([0.001, 0.0015])

    def test_velocities_telescope_back_to_positions(self):
        rng = np.random.default_rng(3)
        ts = np.cumsum(rng.integers(200, 1500, 40)) + 1000
        lat = np.cumsum(rng.normal(0, 1e-3, 40)) + 52.0
        lon = np.cumsum(rng.normal(0, 1e-3, 40)) + 13.0
        vlat, vlon, _ = gps_to_velocity(ts, lat, lon)
        dt = np.diff(ts) / 1000.0
        assert lat[0] + np.sum(vlat * dt) == pytest.approx(lat[-1], abs=1e-12)
        assert lon[0] + np.sum(vlon * dt) == pytest.approx(lon[-1], abs=1e-12)

    def test_zero_interval_pair_is_nan_and_counted(self):
        vlat, vlon, skipped = gps_to_velocity([1000, 1000, 2000],
                                              [1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
        assert skipped == 1
        assert np.isnan(vlat[0]) and not np.isnan(vlat[1])

    def test_single_fix_yields_empty(self):
        vlat, vlon, skipped = gps_to_velocity([1000], [1.0], [2.0])
        assert len(vlat) == 0 and len(vlon) == 0 and skipped == 0


class TestFilterOutliers:
    def test_accuracy_outlier_fix_cleared(self):
        # accuracies [3,4,5,6,50]: fences (1, 9), only the 50 falls outside
        rows = [rec(1000 + 1000 * i, gps=(52.0 + 0.001 * i, 13.0, a))
                for i, a in enumerate([3.0, 4.0, 5.0, 6.0, 50.0])]
        out = filter_outliers(clean_ride(make_ride(rows)))
        assert np.isnan(out.lat[4]) and np.isnan(out.gps_accuracy[4])
        assert not np.isnan(out.lat[:4]).any()

    def test_velocity_spike_cleared_per_component(self):
        lat = 52.0 + np.concatenate([0.001 * np.arange(11), [0.001 * 10 + 1.0]])
        rows = [rec(1000 + 1000 * i, gps=(lat[i], 13.0, 4.0)) for i in range(12)]
        out = filter_outliers(clean_ride(make_ride(rows)))
        # ten steps of 0.001 deg/s and one of 1.0; the spike alone is outside
        assert np.isnan(out.vel_lat[10])
        assert np.nanmax(np.abs(out.vel_lat)) == pytest.approx(0.001)
        # longitude never moved, so its velocities all survive as zeros
        assert np.nanmax(np.abs(out.vel_lon)) == 0.0

    def test_velocity_anchored_to_earlier_fix(self):
        rows = [rec(1000), rec(2000, gps=(10.0, 20.0, 3.0)), rec(3000),
                rec(4000, gps=(10.002, 20.0, 3.0))]
        out = filter_outliers(clean_ride(make_ride(rows)))
        assert out.vel_lat[1] == pytest.approx(0.001)
        assert np.isnan(out.vel_lat[[0, 2, 3]]).all()

    def test_too_few_fixes_flags_gps_missing(self):
        out = filter_outliers(clean_ride(make_ride(
            [rec(1000, gps=(52.0, 13.0, 4.0)), rec(2000)])))
        assert out.gps_missing
        assert np.isnan(out.vel_lat).all()


class TestResampleUniform:
    def test_linear_signal_reproduced_exactly(self):
        # acc_x = 1e-3 * t is linear, so interpolation must return the line
        rows = [rec(ts, acc=(1e-3 * ts, 0, 0)) for ts in (1000, 1250, 1600, 2000)]
        uni = resample_uniform(filter_outliers(clean_ride(make_ride(rows))))
        assert uni.start_ms == 1000
        assert uni.n == 11
        expect = 1e-3 * (1000 + 100 * np.arange(11))
        assert uni.data[:, 0] == pytest.approx(expect, abs=1e-12)

    def test_grid_never_extends_past_last_sample(self):
        rows = [rec(1000), rec(2050)]
        uni = resample_uniform(filter_outliers(clean_ride(make_ride(rows))))
        assert uni.timestamps()[-1] == 2000

    def test_missing_gyro_becomes_zeros_with_warning(self):
        rows = [rec(1000), rec(2000)]
        uni = resample_uniform(filter_outliers(clean_ride(make_ride(rows))))
        assert np.all(uni.data[:, 3:6] == 0.0)
        assert any("gyroscope" in w for w in uni.warnings)

    def test_gps_missing_ride_has_zero_velocity_channels(self):
        uni = resample_uniform(filter_outliers(clean_ride(
            make_ride([rec(1000), rec(2000)]))))
        assert uni.gps_missing
        assert np.all(uni.data[:, 6:8] == 0.0)

    def test_velocity_gap_interpolated_between_anchors(self):
        rows = [rec(1000, gps=(10.0, 20.0, 3.0)), rec(2000),
                rec(3000, gps=(10.004, 20.0, 3.0)),
                rec(5000, gps=(10.004, 20.0, 3.0))]
        uni = resample_uniform(filter_outliers(clean_ride(make_ride(rows))))
        # anchors: 0.002 deg/s at t=1000, 0.0 at t=3000; t=2000 sits halfway
        i = (2000 - uni.start_ms) // 100
        assert uni.data[i, 6] == pytest.approx(0.001)


def uniform(data, incidents=(), start_ms=1000, ride_id="u"):
    return UniformRide(ride_id=ride_id, partition=DatasetPartition.IOS,
                       incidents=list(incidents), start_ms=start_ms,
                       data=np.asarray(data, np.float64))


class TestMaxAbs:
    def test_divisors_are_channel_maxima_over_all_rides(self):
        a = np.zeros((5, 8)); a[2, 0] = -2.0; a[3, 1] = 0.5
        b = np.zeros((4, 8)); b[0, 0] = 3.0; b[1, 7] = -4.0
        stats = fit_maxabs([uniform(a), uniform(b)])
        assert stats.max_abs[0] == 3.0
        assert stats.max_abs[1] == 0.5
        assert stats.max_abs[7] == 4.0

    def test_flat_channel_keeps_divisor_one(self):
        stats = fit_maxabs([uniform(np.zeros((4, 8)))])
        assert stats.max_abs.tolist() == [1.0] * 8

    def test_apply_divides_and_marks_normalized(self):
        data = np.zeros((3, 8)); data[:, 2] = [1.0, -2.0, 4.0]
        ride = uniform(data)
        out = apply_maxabs(ride, fit_maxabs([ride]))
        assert out.normalized
        assert out.data[:, 2] == pytest.approx([0.25, -0.5, 1.0])
        assert np.all(ride.data[:, 2] == [1.0, -2.0, 4.0])  # input untouched

    def test_empty_fit_raises(self):
        with pytest.raises(EmptyInput):
            fit_maxabs([])

    def test_estimator_roundtrip_and_unfitted_error(self):
        data = np.zeros((3, 8)); data[:, 0] = [2.0, 1.0, -1.0]
        train = [uniform(data)]
        norm = MaxAbsNormalizer().fit(train)
        out = norm.transform(train)[0]
        assert out.data[:, 0] == pytest.approx([1.0, 0.5, -0.5])
        with pytest.raises(RuntimeError):
            MaxAbsNormalizer().transform(train)

    def test_stats_dict_roundtrip(self):
        stats = NormalizationStats(max_abs=np.arange(1.0, 9.0))
        back = NormalizationStats.from_dict(stats.to_dict())
        assert back.max_abs.tolist() == stats.max_abs.tolist()
        assert back.channels == CHANNELS


class TestBucketize:
    def test_partial_trailing_bucket_dropped(self):
        buckets = bucketize_and_label(uniform(np.zeros((250, 8))))
        assert [b.bucket_index for b in buckets] == [0, 1]

    def test_samples_are_contiguous_slices(self):
        data = np.arange(200 * 8, dtype=np.float64).reshape(200, 8)
        buckets = bucketize_and_label(uniform(data))
        assert buckets[0].samples == pytest.approx(data[:100])
        assert buckets[1].samples == pytest.approx(data[100:200])

    def test_incident_labels_half_open_span(self):
        def labels(ts):
            inc = [IncidentRecord(timestamp=ts, lat=0.0, lon=0.0, incident_type=1)]
            return [b.label for b in
                    bucketize_and_label(uniform(np.zeros((200, 8)), incidents=inc))]

        assert labels(1000) == [1, 0]          # first sample of bucket 0
        assert labels(10999) == [1, 0]         # last ms before the boundary
        assert labels(11000) == [0, 1]         # boundary belongs to bucket 1
        assert labels(21000) == [0, 0]         # past the bucketed span

    def test_bucket_set_stacks_and_hashes(self):
        data = np.arange(200 * 8, dtype=np.float64).reshape(200, 8)
        bs = BucketSet.from_buckets(bucketize_and_label(uniform(data)), split="train")
        assert bs.n == 2 and bs.n_positive == 0
        assert bs.split == "train"
        assert bs.samples.dtype == np.float32
        assert bs.ride_hash[0] == bs.ride_hash[1] == ride_id_hash("u")

    def test_empty_bucket_set(self):
        bs = BucketSet.from_buckets([], split="val")
        assert bs.n == 0 and bs.samples.shape == (0, BUCKET_SAMPLES, len(CHANNELS))


class TestRideIdHash:
    def test_stable_and_distinct(self):
        ids = [f"ride-{i}" for i in range(200)]
        hashes = {ride_id_hash(i) for i in ids}
        assert len(hashes) == 200
        assert ride_id_hash("ride-0") == ride_id_hash("ride-0")
        assert all(0 <= h < 2 ** 64 for h in hashes)
