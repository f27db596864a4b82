"""Estimator behaviour: heuristic, neural classifiers, GAN augmentation."""

import numpy as np
import pytest

from cyclesense.models import (
    BucketGan,
    CycleSenseClassifier,
    FcnClassifier,
    JumpHeuristicDetector,
    NoPositivesError,
    augment_dataset,
)
from cyclesense.preprocess import BUCKET_SAMPLES, CHANNELS, BucketSet, ride_id_hash
from cyclesense.spectral import DftFeatureExtractor, TensorBatch


def make_buckets(n: int, seed: int, split: str = "") -> BucketSet:
    rng = np.random.default_rng(seed)
    return BucketSet(
        samples=rng.normal(0.0, 0.1, (n, BUCKET_SAMPLES, len(CHANNELS))).astype(np.float32),
        labels=np.zeros(n, np.uint8),
        ride_hash=np.arange(n, dtype=np.uint64),
        bucket_index=np.arange(n, dtype=np.uint32),
        split=split,
    )


def planted_buckets(n: int, seed: int, split: str = "") -> BucketSet:
    """Noise buckets where the first third carries a step on one acc axis."""
    rng = np.random.default_rng(seed)
    buckets = make_buckets(n, seed, split)
    buckets.labels[: n // 3] = 1
    for i in range(n // 3):
        start = int(rng.integers(0, 80))
        axis = int(rng.integers(0, 3))
        buckets.samples[i, start:start + 12, axis] += 2.0
    return buckets


def make_tensors(n: int, n_pos: int, seed: int = 0, f: int = 4, windows: int = 5,
                 split: str = "train") -> TensorBatch:
    rng = np.random.default_rng(seed)
    labels = np.zeros(n, np.uint8)
    labels[:n_pos] = 1
    return TensorBatch(
        accel=rng.normal(0, 1, (n, 3, f, windows, 2)).astype(np.float32),
        gyro=rng.normal(0, 1, (n, 3, f, windows, 2)).astype(np.float32),
        gps=rng.normal(0, 1, (n, 2, 1, windows, 1)).astype(np.float32),
        labels=labels,
        ride_hash=np.arange(n, dtype=np.uint64),
        bucket_index=np.arange(n, dtype=np.uint32),
        split=split,
    )


class TestJumpHeuristic:
    def test_hand_computed_scores(self):
        # three flat buckets; one jump of 2 in bucket 0, one jump of 4 in
        # bucket 1: window score = mean of top 2 jumps = half the jump, so
        # after min-max over the split the scores are 0.5, 1.0, 0.0
        buckets = make_buckets(3, 0)
        buckets.samples[:] = 0.0
        buckets.samples[0, 50:, 0] = 2.0
        buckets.samples[1, 50:, 0] = 4.0
        scores = JumpHeuristicDetector().fit_score(buckets)
        assert scores == pytest.approx([0.5, 1.0, 0.0], abs=1e-12)

    def test_scores_live_in_unit_interval(self):
        buckets = planted_buckets(24, 1)
        scores = JumpHeuristicDetector().fit_score(buckets)
        assert scores.shape == (24,)
        assert np.all((scores >= 0.0) & (scores <= 1.0))

    def test_planted_jumps_outrank_noise(self):
        buckets = planted_buckets(30, 2)
        scores = JumpHeuristicDetector().fit_score(buckets)
        assert scores[buckets.labels == 1].min() > scores[buckets.labels == 0].max()

    def test_channel_rescaling_is_invariant(self):
        # min-max normalization cancels any per-split gain factor; a power
        # of two keeps the float32 scaling exact
        buckets = planted_buckets(12, 3)
        scaled = BucketSet(samples=buckets.samples * 8.0, labels=buckets.labels,
                           ride_hash=buckets.ride_hash,
                           bucket_index=buckets.bucket_index)
        a = JumpHeuristicDetector().fit_score(buckets)
        b = JumpHeuristicDetector().fit_score(scaled)
        np.testing.assert_array_equal(a, b)

    def test_unfitted_raises(self):
        with pytest.raises(RuntimeError, match="not fitted"):
            JumpHeuristicDetector().decision_function(make_buckets(2, 0))

    def test_get_params_roundtrip(self):
        det = JumpHeuristicDetector(window_samples=20, stride_samples=5, top_jumps=3)
        assert JumpHeuristicDetector(**det.get_params()).get_params() == det.get_params()


class TestBucketGan:
    def tiny_gan(self, **kw):
        args = dict(latent_dim=4, width=8, steps=2, batch_size=8, seed=0)
        args.update(kw)
        return BucketGan(**args)

    def test_needs_positive_examples(self):
        with pytest.raises(NoPositivesError):
            self.tiny_gan().fit(make_tensors(10, 0))

    def test_sample_shapes_and_labels(self):
        gan = self.tiny_gan().fit(make_tensors(12, 6))
        out = gan.sample(5)
        assert out.accel.shape == (5, 3, 4, 5, 2)
        assert out.gyro.shape == (5, 3, 4, 5, 2)
        assert out.gps.shape == (5, 2, 1, 5, 1)
        assert np.all(out.labels == 1)
        assert out.split == "train"
        assert np.all(out.ride_hash == ride_id_hash("synthetic"))

    def test_sample_zero_is_empty(self):
        gan = self.tiny_gan().fit(make_tensors(12, 6))
        out = gan.sample(0)
        assert out.n == 0
        assert out.accel.shape == (0, 3, 4, 5, 2)

    def test_sample_negative_rejected(self):
        gan = self.tiny_gan().fit(make_tensors(12, 6))
        with pytest.raises(ValueError):
            gan.sample(-1)

    def test_sample_before_fit_rejected(self):
        with pytest.raises(RuntimeError, match="not fitted"):
            self.tiny_gan().sample(1)

    def test_sampling_is_deterministic(self):
        a = self.tiny_gan().fit(make_tensors(12, 6)).sample(3)
        b = self.tiny_gan().fit(make_tensors(12, 6)).sample(3)
        np.testing.assert_array_equal(a.accel, b.accel)
        np.testing.assert_array_equal(a.gps, b.gps)

    def test_discriminator_learns_to_spot_fakes(self):
        # by the end of training the discriminator should beat its
        # untrained self on the real-versus-generated game
        gan = self.tiny_gan(width=16, latent_dim=8, steps=200, batch_size=16, seed=1)
        gan.fit(make_tensors(32, 24, seed=5))
        losses = [step["d_loss"] for step in gan.loss_history_]
        assert len(losses) == 200
        assert all(np.isfinite(losses))
        assert np.mean(losses[-20:]) < losses[0]


class TestAugmentDataset:
    def tiny_gan(self):
        return BucketGan(latent_dim=4, width=8, steps=2, batch_size=8, seed=0)

    def test_closes_a_tenth_of_the_gap(self):
        # 3 positive / 23 negative: floor(0.1 * 20) = 2 extra positives
        train = make_tensors(26, 3)
        out = augment_dataset(train, self.tiny_gan(), gap_fraction=0.10)
        assert out.n == 28
        assert int(out.labels.sum()) == 5

    def test_hand_computed_counts(self):
        train = make_tensors(110, 5)                # gap 100 -> 10 extras
        out = augment_dataset(train, self.tiny_gan(), gap_fraction=0.10)
        assert out.n == 120
        assert int(out.labels.sum()) == 15

    def test_balanced_split_passes_through(self):
        train = make_tensors(12, 6)
        out = augment_dataset(train, self.tiny_gan(), gap_fraction=0.10)
        assert out is train

    def test_original_rows_preserved(self):
        train = make_tensors(26, 3)
        out = augment_dataset(train, self.tiny_gan(), gap_fraction=0.10)
        np.testing.assert_array_equal(out.accel[:26], train.accel)
        np.testing.assert_array_equal(out.labels[:26], train.labels)

    def test_only_training_split_allowed(self):
        with pytest.raises(ValueError, match="training split"):
            augment_dataset(make_tensors(26, 3, split="val"), self.tiny_gan())

    def test_needs_positives(self):
        with pytest.raises(NoPositivesError):
            augment_dataset(make_tensors(26, 0), self.tiny_gan())

    def test_gap_fraction_validated(self):
        with pytest.raises(ValueError):
            augment_dataset(make_tensors(26, 3), self.tiny_gan(), gap_fraction=1.5)

    def test_prefitted_generator_is_reused(self):
        gan = self.tiny_gan().fit(make_tensors(12, 6, seed=9))
        gen_before = gan.gen_
        augment_dataset(make_tensors(26, 3), gan, gap_fraction=0.10)
        assert gan.gen_ is gen_before


def extract(buckets: BucketSet) -> "TensorBatch":
    return DftFeatureExtractor(f=10).transform(buckets)


def tiny_clf(**kw):
    args = dict(kernels=4, gru_units=6, gru_layers=1, dropout_rate=0.0,
                epochs=2, patience=1, stacking=False, augment=False, seed=3)
    args.update(kw)
    return CycleSenseClassifier(**args)


class TestCycleSenseClassifier:
    def test_fit_predict_save_load(self, tmp_path):
        train = extract(planted_buckets(18, 0, split="train"))
        val = extract(planted_buckets(9, 1, split="val"))
        clf = tiny_clf().fit(train, val=val)

        scores = clf.decision_function(val)
        assert scores.shape == (9,)
        assert np.all((scores > 0.0) & (scores < 1.0))
        proba = clf.predict_proba(val)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(clf.predict(val), (scores >= 0.5).astype(np.uint8))
        assert clf.n_parameters_ == clf.net_.param_count() > 0

        clf.save(tmp_path / "model")
        loaded = CycleSenseClassifier.load(tmp_path / "model")
        np.testing.assert_array_equal(loaded.decision_function(val), scores)
        assert loaded.get_params() == clf.get_params()
        assert loaded.n_parameters_ == clf.n_parameters_

    def test_stacking_reports_solo_aucs(self):
        train = extract(planted_buckets(18, 0, split="train"))
        val = extract(planted_buckets(9, 1, split="val"))
        clf = tiny_clf(stacking=True, pretrain_epochs=1).fit(train, val=val)
        assert set(clf.pretrain_val_auc_) == {"accel", "gyro", "gps"}
        for auc in clf.pretrain_val_auc_.values():
            assert 0.0 <= auc <= 1.0
        frozen = [p.name for p in clf.net_.parameters() if p.frozen]
        assert frozen and all(name.split("/")[0] in
                              {"accel", "gyro", "gps"} for name in frozen)

    def test_solo_aucs_track_where_the_signal_lives(self):
        # braking incidents touch the accelerometer only, so its subnet
        # should separate the classes alone while the gyro one cannot
        from cyclesense.pipeline import prepare_dataset
        from cyclesense.synth import SynthSpec, generate_rides
        from cyclesense.training import SplitPlan

        rides = generate_rides(SynthSpec(n_rides=120, brake_fraction=1.0,
                                         seed=11))
        prep = prepare_dataset(rides, SplitPlan(seed=11))
        clf = CycleSenseClassifier(epochs=2, patience=1, pretrain_epochs=4,
                                   augment=False, seed=11)
        clf.fit(prep.tensors["train"], val=prep.tensors["val"])
        assert clf.pretrain_val_auc_["accel"] > 0.8
        assert abs(clf.pretrain_val_auc_["gyro"] - 0.5) < 0.15

    def test_explicit_labels_override_batch_labels(self):
        train = extract(planted_buckets(18, 0, split="train"))
        val = extract(planted_buckets(9, 1, split="val"))
        blank = TensorBatch(accel=train.accel, gyro=train.gyro, gps=train.gps,
                            labels=np.zeros(train.n, np.uint8),
                            ride_hash=train.ride_hash,
                            bucket_index=train.bucket_index, split=train.split)
        # class weighting would reject the all-zero batch labels, so this
        # only fits if the explicit y wins
        clf = tiny_clf().fit(blank, y=train.labels, val=val)
        assert hasattr(clf, "net_")

    def test_validation_batch_required(self):
        with pytest.raises(ValueError, match="val"):
            tiny_clf().fit(extract(planted_buckets(18, 0, split="train")))

    def test_frequency_mismatch_rejected(self):
        train = extract(planted_buckets(18, 0, split="train"))
        with pytest.raises(ValueError, match="f=5"):
            tiny_clf(f=5).fit(train, val=train)

    def test_unfitted_raises(self):
        with pytest.raises(RuntimeError, match="not fitted"):
            tiny_clf().decision_function(extract(planted_buckets(6, 0)))


class TestFcnClassifier:
    def test_fit_save_load(self, tmp_path):
        train = planted_buckets(18, 0, split="train")
        val = planted_buckets(9, 1, split="val")
        clf = FcnClassifier(epochs=2, patience=1, seed=0).fit(train, val=val)
        scores = clf.decision_function(val)
        assert scores.shape == (9,)
        assert np.all((scores > 0.0) & (scores < 1.0))
        assert clf.n_parameters_ == 268_929

        clf.save(tmp_path / "model")
        loaded = FcnClassifier.load(tmp_path / "model")
        np.testing.assert_array_equal(loaded.decision_function(val), scores)

    def test_validation_batch_required(self):
        with pytest.raises(ValueError, match="val"):
            FcnClassifier(epochs=2, patience=1).fit(planted_buckets(18, 0))

    def test_unfitted_raises(self):
        with pytest.raises(RuntimeError, match="not fitted"):
            FcnClassifier().decision_function(make_buckets(2, 0))
