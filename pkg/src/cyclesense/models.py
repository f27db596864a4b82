"""Detection models with a scikit-learn style estimator surface.

Three detectors share the ``fit`` / ``decision_function`` / ``predict_proba``
interface:

* :class:`CycleSenseClassifier` - the convolutional fusion network over
  frequency-domain tensor batches, with optional GAN augmentation and
  per-sensor subnet pretraining;
* :class:`FcnClassifier` - a fully convolutional baseline over raw bucket
  samples, accelerometer and velocity channels only;
* :class:`JumpHeuristicDetector` - a training-free jump statistic.

:class:`BucketGan` generates synthetic positive tensor sets for
:func:`augment_dataset`.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .autodiff import (Adam, NonFiniteLossError, bce_loss_weighted, record,
                       recalibrate_stats)
from .evaluate import roc_auc
from .nets import (CycleSenseNet, FcnNet, GanDiscriminator, GanGenerator,
                   pack_spectra, unpack_spectra)
from .preprocess import BUCKET_SAMPLES, BucketSet, ride_id_hash
from .spectral import TensorBatch
from .training import class_weights, derive_seed, fit_epochs, minibatches
from .validation import check_fraction

__all__ = [
    "NoPositivesError",
    "CycleSenseClassifier",
    "FcnClassifier",
    "JumpHeuristicDetector",
    "BucketGan",
    "gan_train_step",
    "augment_dataset",
]

#: Bucket channels the FCN baseline consumes (no gyroscope).
FCN_CHANNELS = (0, 1, 2, 6, 7)

PREDICT_CHUNK = 512

#: Training samples used to refresh batch-norm running stats before each
#: validation scoring; enough for stable channel moments without a full pass.
RECAL_SAMPLES = 1024


def _recal_indices(n: int, seed: int) -> np.ndarray:
    if n <= RECAL_SAMPLES:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, RECAL_SAMPLES, replace=False))


class NoPositivesError(ValueError):
    """Augmentation needs at least one positive example to learn from."""


def _require_val(val):
    if val is None:
        raise ValueError("fit needs a validation batch (val=...) for early stopping")


class CycleSenseClassifier(BaseEstimator, ClassifierMixin):
    """Sensor-fusion incident detector over frequency-domain tensor batches.

    ``fit`` expects :class:`~cyclesense.spectral.TensorBatch` inputs for the
    training and validation splits; labels ride inside the batches. Training
    runs weighted binary cross entropy under Adam with early stopping on
    validation AUC (best weights restored). ``stacking`` pretrains each
    sensor subnet with a temporary head and freezes it before the fusion
    stage trains; ``augment`` tops up positive training examples from a
    :class:`BucketGan`.
    """

    def __init__(self, f: int | None = None, gru_units: int = 120,
                 gru_layers: int = 2, cell: str = "gru", kernels: int = 64,
                 dropout_rate: float = 0.2, learning_rate: float = 1e-4,
                 epochs: int = 60, batch_size: int = 64, patience: int = 10,
                 class_weighting: bool = True, augment: bool = True,
                 stacking: bool = True, pretrain_epochs: int = 6,
                 gan_steps: int = 200, gan_batch_size: int = 64,
                 gan_learning_rate: float = 2e-4, gap_fraction: float = 0.10,
                 seed: int = 0):
        self.f = f
        self.gru_units = gru_units
        self.gru_layers = gru_layers
        self.cell = cell
        self.kernels = kernels
        self.dropout_rate = dropout_rate
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.class_weighting = class_weighting
        self.augment = augment
        self.stacking = stacking
        self.pretrain_epochs = pretrain_epochs
        self.gan_steps = gan_steps
        self.gan_batch_size = gan_batch_size
        self.gan_learning_rate = gan_learning_rate
        self.gap_fraction = gap_fraction
        self.seed = seed

    # -- training ----------------------------------------------------------

    def fit(self, X: TensorBatch, y=None, val: TensorBatch | None = None):
        _require_val(val)
        if self.f is not None and self.f != X.f:
            raise ValueError(f"estimator f={self.f} but batch has f={X.f}")
        train = X if y is None else TensorBatch(
            accel=X.accel, gyro=X.gyro, gps=X.gps,
            labels=np.asarray(y, np.uint8), ride_hash=X.ride_hash,
            bucket_index=X.bucket_index, split=X.split,
        )
        if self.augment:
            gan = BucketGan(
                latent_dim=100, steps=self.gan_steps,
                batch_size=self.gan_batch_size,
                learning_rate=self.gan_learning_rate,
                seed=derive_seed(self.seed, "gan"),
            )
            train = augment_dataset(train, gan=gan, gap_fraction=self.gap_fraction)
        weights = class_weights(train.labels) if self.class_weighting else (1.0, 1.0)
        self.class_weights_ = weights

        net = CycleSenseNet(
            f=train.f, windows=train.windows, kernels=self.kernels,
            gru_units=self.gru_units, gru_layers=self.gru_layers,
            dropout=self.dropout_rate, cell=self.cell,
            seed=derive_seed(self.seed, "init"),
        )
        self.net_ = net
        self.n_parameters_ = net.param_count()
        rng_drop = np.random.default_rng(derive_seed(self.seed, "dropout"))
        rng_shuffle = np.random.default_rng(derive_seed(self.seed, "shuffle"))

        if self.stacking:
            self.pretrain_val_auc_ = self._pretrain_subnets(
                net, train, val, weights, rng_drop)
            net.freeze_subnets()

        opt = Adam([p for p in net.parameters() if not p.frozen], lr=self.learning_rate)
        labels = train.labels.astype(np.float32)
        recal = _recal_indices(train.n, derive_seed(self.seed, "recal"))

        def refresh_stats():
            # momentum-0.99 averages lag far behind the weights on short
            # runs; rebuild them from the current weights before scoring
            recalibrate_stats(net.bn_layers(), lambda: [
                net.forward(train.accel[recal[i:i + PREDICT_CHUNK]],
                            train.gyro[recal[i:i + PREDICT_CHUNK]],
                            train.gps[recal[i:i + PREDICT_CHUNK]],
                            training=False)
                for i in range(0, len(recal), PREDICT_CHUNK)])

        def run_epoch(epoch: int) -> float:
            losses = []
            for bi, idx in enumerate(minibatches(train.n, self.batch_size, rng_shuffle)):
                with record() as tape:
                    p = net.forward(train.accel[idx], train.gyro[idx],
                                    train.gps[idx], training=True, rng=rng_drop)
                    loss = bce_loss_weighted(p, labels[idx], *weights)
                    value = loss.item()
                    if not np.isfinite(value):
                        raise NonFiniteLossError(
                            f"training loss became {value} at epoch {epoch}, batch {bi}",
                            epoch=epoch, batch=bi)
                    tape.backward(loss)
                opt.step()
                opt.zero_grad()
                losses.append(value)
            return float(np.mean(losses))

        def score_val() -> float:
            refresh_stats()
            return roc_auc(self._scores(val), val.labels).auc

        history, stopper = fit_epochs(
            epochs=self.epochs, patience=self.patience,
            run_epoch=run_epoch,
            score_val=score_val,
            get_state=net.state_dict,
            set_state=net.load_state_dict,
        )
        self.history_ = history
        self.best_epoch_ = stopper.best_epoch
        self.best_val_auc_ = stopper.best_auc
        return self

    def _pretrain_subnets(self, net, train, val, weights, rng_drop) -> dict:
        """Train each sensor subnet with a throwaway head; returns solo AUCs."""
        from .autodiff import layers as L
        from .autodiff import tensor as T

        rng_shuffle = np.random.default_rng(derive_seed(self.seed, "pretrain-shuffle"))
        inputs = {"accel": train.accel, "gyro": train.gyro, "gps": train.gps}
        val_inputs = {"accel": val.accel, "gyro": val.gyro, "gps": val.gps}
        labels = train.labels.astype(np.float32)
        recal = _recal_indices(train.n, derive_seed(self.seed, "pretrain-recal"))
        aucs = {}
        for sensor in ("accel", "gyro", "gps"):
            head_rng = np.random.default_rng(derive_seed(self.seed, f"pretrain-{sensor}"))
            head = L.Dense(self.kernels, 1, head_rng, name=f"pre/{sensor}", dtype=net.dtype)
            subnet = getattr(net, f"subnet_{sensor}")
            opt = Adam(subnet.parameters() + head.parameters(), lr=self.learning_rate)

            def forward(x, training):
                feats = net.subnet_features(sensor, x, training=training,
                                            rng=rng_drop if training else None)
                pooled = T.mean(feats, axis=(1, 2, 3))
                return T.sigmoid(head(pooled))

            for epoch in range(self.pretrain_epochs):
                for idx in minibatches(train.n, self.batch_size, rng_shuffle):
                    with record() as tape:
                        p = forward(inputs[sensor][idx], True)
                        loss = bce_loss_weighted(p, labels[idx], *weights)
                        if not np.isfinite(loss.item()):
                            raise NonFiniteLossError(
                                f"{sensor} pretraining loss became non-finite",
                                epoch=epoch)
                        tape.backward(loss)
                    opt.step()
                    opt.zero_grad()
            # freezing pins the running stats for the whole fusion stage,
            # so refresh them from the trained weights first
            recalibrate_stats(subnet.bn_layers(), lambda: [
                net.subnet_features(sensor, inputs[sensor][recal[i:i + PREDICT_CHUNK]],
                                    training=False)
                for i in range(0, len(recal), PREDICT_CHUNK)])
            scores = np.concatenate([
                forward(val_inputs[sensor][i:i + PREDICT_CHUNK], False).data.ravel()
                for i in range(0, val.n, PREDICT_CHUNK)
            ])
            aucs[sensor] = roc_auc(scores, val.labels).auc
        return aucs

    # -- inference ---------------------------------------------------------

    def _scores(self, batch: TensorBatch) -> np.ndarray:
        net = self.net_
        parts = []
        for i in range(0, batch.n, PREDICT_CHUNK):
            sl = slice(i, i + PREDICT_CHUNK)
            parts.append(net.forward(batch.accel[sl], batch.gyro[sl],
                                     batch.gps[sl], training=False).data.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def decision_function(self, X: TensorBatch) -> np.ndarray:
        """Incident probability per bucket."""
        if not hasattr(self, "net_"):
            raise RuntimeError("estimator is not fitted")
        return self._scores(X)

    def predict_proba(self, X: TensorBatch) -> np.ndarray:
        p = self.decision_function(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X: TensorBatch) -> np.ndarray:
        return (self.decision_function(X) >= 0.5).astype(np.uint8)

    # -- persistence -------------------------------------------------------

    def save(self, model_dir):
        """Write weights and configuration into a directory."""
        from .storage import save_weights

        model_dir = Path(model_dir)
        model_dir.mkdir(parents=True, exist_ok=True)
        save_weights(model_dir / "cyclesense.ckpt", self.net_.state_dict())
        meta = {
            "kind": "cyclesense",
            "params": self.get_params(),
            "input": {"f": self.net_.f, "windows": self.net_.windows},
            "best_epoch": self.best_epoch_,
            "best_val_auc": self.best_val_auc_,
        }
        with open(model_dir / "cyclesense.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, model_dir) -> "CycleSenseClassifier":
        from .storage import load_weights

        model_dir = Path(model_dir)
        with open(model_dir / "cyclesense.json", "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        est = cls(**meta["params"])
        est.net_ = CycleSenseNet(
            f=meta["input"]["f"], windows=meta["input"]["windows"],
            kernels=est.kernels, gru_units=est.gru_units,
            gru_layers=est.gru_layers, dropout=est.dropout_rate, cell=est.cell,
            seed=derive_seed(est.seed, "init"),
        )
        est.net_.load_state_dict(load_weights(model_dir / "cyclesense.ckpt"))
        est.n_parameters_ = est.net_.param_count()
        est.best_epoch_ = meta.get("best_epoch", -1)
        est.best_val_auc_ = meta.get("best_val_auc", float("nan"))
        return est


class FcnClassifier(BaseEstimator, ClassifierMixin):
    """Fully convolutional baseline over raw bucket samples.

    Consumes :class:`~cyclesense.preprocess.BucketSet` splits and ignores
    the gyroscope channels entirely, matching the sensors the architecture
    was designed around.
    """

    def __init__(self, learning_rate: float = 1e-3, epochs: int = 30,
                 batch_size: int = 64, patience: int = 7,
                 class_weighting: bool = True, seed: int = 0):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.class_weighting = class_weighting
        self.seed = seed

    @staticmethod
    def _inputs(X: BucketSet) -> np.ndarray:
        return np.ascontiguousarray(X.samples[:, :, FCN_CHANNELS], dtype=np.float32)

    def fit(self, X: BucketSet, y=None, val: BucketSet | None = None):
        _require_val(val)
        labels_u8 = X.labels if y is None else np.asarray(y, np.uint8)
        weights = class_weights(labels_u8) if self.class_weighting else (1.0, 1.0)
        self.class_weights_ = weights
        net = FcnNet(channels=len(FCN_CHANNELS), seed=derive_seed(self.seed, "fcn-init"))
        self.net_ = net
        self.n_parameters_ = net.param_count()
        rng_shuffle = np.random.default_rng(derive_seed(self.seed, "fcn-shuffle"))
        opt = Adam(net.parameters(), lr=self.learning_rate)
        data = self._inputs(X)
        labels = labels_u8.astype(np.float32)
        val_data = self._inputs(val)

        def run_epoch(epoch: int) -> float:
            losses = []
            for bi, idx in enumerate(minibatches(len(data), self.batch_size, rng_shuffle)):
                with record() as tape:
                    p = net.forward(data[idx], training=True)
                    loss = bce_loss_weighted(p, labels[idx], *weights)
                    value = loss.item()
                    if not np.isfinite(value):
                        raise NonFiniteLossError(
                            f"FCN loss became {value} at epoch {epoch}, batch {bi}",
                            epoch=epoch, batch=bi)
                    tape.backward(loss)
                opt.step()
                opt.zero_grad()
                losses.append(value)
            return float(np.mean(losses))

        recal = _recal_indices(len(data), derive_seed(self.seed, "fcn-recal"))

        def score_val() -> float:
            recalibrate_stats(net.bn_layers(), lambda: [
                net.forward(data[recal[i:i + PREDICT_CHUNK]], training=False)
                for i in range(0, len(recal), PREDICT_CHUNK)])
            return roc_auc(self._score_array(val_data), val.labels).auc

        history, stopper = fit_epochs(
            epochs=self.epochs, patience=self.patience, run_epoch=run_epoch,
            score_val=score_val, get_state=net.state_dict,
            set_state=net.load_state_dict,
        )
        self.history_ = history
        self.best_epoch_ = stopper.best_epoch
        self.best_val_auc_ = stopper.best_auc
        return self

    def _score_array(self, data: np.ndarray) -> np.ndarray:
        parts = [
            self.net_.forward(data[i:i + PREDICT_CHUNK], training=False).data.ravel()
            for i in range(0, len(data), PREDICT_CHUNK)
        ]
        return np.concatenate(parts) if parts else np.zeros(0)

    def decision_function(self, X: BucketSet) -> np.ndarray:
        if not hasattr(self, "net_"):
            raise RuntimeError("estimator is not fitted")
        return self._score_array(self._inputs(X))

    def predict_proba(self, X: BucketSet) -> np.ndarray:
        p = self.decision_function(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X: BucketSet) -> np.ndarray:
        return (self.decision_function(X) >= 0.5).astype(np.uint8)

    def save(self, model_dir):
        from .storage import save_weights

        model_dir = Path(model_dir)
        model_dir.mkdir(parents=True, exist_ok=True)
        save_weights(model_dir / "fcn.ckpt", self.net_.state_dict())
        with open(model_dir / "fcn.json", "w", encoding="utf-8") as fh:
            json.dump({"kind": "fcn", "params": self.get_params()}, fh,
                      indent=2, sort_keys=True)

    @classmethod
    def load(cls, model_dir) -> "FcnClassifier":
        from .storage import load_weights

        model_dir = Path(model_dir)
        with open(model_dir / "fcn.json", "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        est = cls(**meta["params"])
        est.net_ = FcnNet(channels=len(FCN_CHANNELS),
                          seed=derive_seed(est.seed, "fcn-init"))
        est.net_.load_state_dict(load_weights(model_dir / "fcn.ckpt"))
        est.n_parameters_ = est.net_.param_count()
        return est


class JumpHeuristicDetector(BaseEstimator):
    """Training-free detector scoring sudden accelerometer jumps.

    Each bucket is swept with 3 s windows (stride 1 s). Per window and
    acceleration dimension the two largest adjacent absolute differences are
    averaged; ``fit`` learns per-dimension min-max ranges of these window
    scores over the whole split, and the bucket score is the maximum
    normalized window score across dimensions and windows, in [0, 1].
    """

    def __init__(self, window_samples: int = 30, stride_samples: int = 10,
                 top_jumps: int = 2):
        self.window_samples = window_samples
        self.stride_samples = stride_samples
        self.top_jumps = top_jumps

    def _window_scores(self, X: BucketSet) -> np.ndarray:
        """[n_buckets, n_windows, 3] mean of the top jumps per window/dim."""
        acc = np.asarray(X.samples[:, :, 0:3], dtype=np.float64)
        jumps = np.abs(np.diff(acc, axis=1))            # [n, 99, 3]
        starts = range(0, BUCKET_SAMPLES - self.window_samples + 1, self.stride_samples)
        k = self.top_jumps
        scores = []
        for s in starts:
            window = jumps[:, s:s + self.window_samples - 1, :]
            top = np.partition(window, window.shape[1] - k, axis=1)[:, -k:, :]
            scores.append(top.mean(axis=1))
        return np.stack(scores, axis=1)

    def fit(self, X: BucketSet, y=None):
        scores = self._window_scores(X)
        flat = scores.reshape(-1, 3)
        self.score_min_ = flat.min(axis=0)
        self.score_max_ = flat.max(axis=0)
        return self

    def decision_function(self, X: BucketSet) -> np.ndarray:
        if not hasattr(self, "score_min_"):
            raise RuntimeError("detector is not fitted")
        scores = self._window_scores(X)
        span = self.score_max_ - self.score_min_
        safe = np.where(span > 0, span, 1.0)
        normed = (scores - self.score_min_) / safe
        normed = np.where(span > 0, normed, 0.0)
        normed = np.clip(normed, 0.0, 1.0)
        return normed.max(axis=(1, 2))

    def fit_score(self, X: BucketSet) -> np.ndarray:
        """Fit the normalization on ``X`` and score it, as one split."""
        return self.fit(X).decision_function(X)


def gan_train_step(gen: GanGenerator, disc: GanDiscriminator,
                   real_packed: np.ndarray, real_gps: np.ndarray,
                   opt_gen: Adam, opt_disc: Adam,
                   rng: np.random.Generator) -> dict:
    """One alternating GAN update (discriminator, then generator).

    The discriminator sees the real batch labeled 1 and a freshly generated
    batch labeled 0; the generator is then updated towards the
    discriminator calling its output real.
    """
    b = len(real_packed)
    z = rng.standard_normal((b, gen.latent_dim)).astype(np.float32)
    fake_packed, fake_gps = gen.forward(z)          # outside any tape: detached
    with record() as tape:
        p_real = disc.forward(real_packed, real_gps)
        p_fake = disc.forward(fake_packed.data, fake_gps.data)
        d_loss = bce_loss_weighted(p_real, np.ones(b, np.float32)) \
            + bce_loss_weighted(p_fake, np.zeros(b, np.float32))
        d_value = d_loss.item()
        tape.backward(d_loss)
    opt_disc.step()
    opt_disc.zero_grad()

    z2 = rng.standard_normal((b, gen.latent_dim)).astype(np.float32)
    with record() as tape:
        fp, fg = gen.forward(z2)
        p = disc.forward(fp, fg)
        g_loss = bce_loss_weighted(p, np.ones(b, np.float32))
        g_value = g_loss.item()
        tape.backward(g_loss)
    opt_gen.step()
    opt_gen.zero_grad()
    opt_disc.zero_grad()                            # discard leaked critic grads
    if not (np.isfinite(d_value) and np.isfinite(g_value)):
        raise NonFiniteLossError(f"GAN losses became non-finite: d={d_value}, g={g_value}")
    return {"d_loss": d_value, "g_loss": g_value}


class BucketGan(BaseEstimator):
    """Generative pair producing synthetic positive tensor sets.

    ``fit`` trains on the positive buckets of a training
    :class:`TensorBatch`; ``sample`` draws new frequency-domain tensor sets
    labeled positive.
    """

    def __init__(self, latent_dim: int = 100, width: int = 32, steps: int = 200,
                 batch_size: int = 64, learning_rate: float = 2e-4, seed: int = 0):
        self.latent_dim = latent_dim
        self.width = width
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, X: TensorBatch, y=None):
        pos = X.take(X.labels == 1)
        if pos.n == 0:
            raise NoPositivesError("cannot train the generator without positive buckets")
        f, windows = X.f, X.windows
        self.f_ = f
        self.windows_ = windows
        self.gen_ = GanGenerator(f, windows, latent_dim=self.latent_dim,
                                 width=self.width, seed=derive_seed(self.seed, "gen"))
        self.disc_ = GanDiscriminator(f, windows, width=self.width,
                                      seed=derive_seed(self.seed, "disc"))
        opt_gen = Adam(self.gen_.parameters(), lr=self.learning_rate)
        opt_disc = Adam(self.disc_.parameters(), lr=self.learning_rate)
        rng = np.random.default_rng(derive_seed(self.seed, "steps"))
        packed = pack_spectra(pos.accel, pos.gyro).astype(np.float32)
        gps = pos.gps.astype(np.float32)
        self.loss_history_ = []
        for _ in range(self.steps):
            idx = rng.choice(pos.n, size=min(self.batch_size, pos.n),
                             replace=pos.n < self.batch_size)
            self.loss_history_.append(
                gan_train_step(self.gen_, self.disc_, packed[idx], gps[idx],
                               opt_gen, opt_disc, rng))
        return self

    def sample(self, n: int, rng: np.random.Generator | None = None) -> TensorBatch:
        """Draw ``n`` synthetic positive tensor sets."""
        if not hasattr(self, "gen_"):
            raise RuntimeError("generator is not fitted")
        if n < 0:
            raise ValueError(f"sample size must be >= 0, got {n}")
        rng = rng if rng is not None else np.random.default_rng(derive_seed(self.seed, "sample"))
        synth_hash = ride_id_hash("synthetic")
        parts_accel, parts_gyro, parts_gps = [], [], []
        for i in range(0, n, PREDICT_CHUNK):
            b = min(PREDICT_CHUNK, n - i)
            z = rng.standard_normal((b, self.latent_dim)).astype(np.float32)
            packed, gps = self.gen_.forward(z)
            accel, gyro = unpack_spectra(packed.data)
            parts_accel.append(accel)
            parts_gyro.append(gyro)
            parts_gps.append(gps.data)
        empty = (0, 3, self.f_, self.windows_, 2)
        return TensorBatch(
            accel=np.concatenate(parts_accel) if parts_accel else np.zeros(empty, np.float32),
            gyro=np.concatenate(parts_gyro) if parts_gyro else np.zeros(empty, np.float32),
            gps=(np.concatenate(parts_gps) if parts_gps
                 else np.zeros((0, 2, 1, self.windows_, 1), np.float32)),
            labels=np.ones(n, np.uint8),
            ride_hash=np.full(n, synth_hash, np.uint64),
            bucket_index=np.arange(n, dtype=np.uint32),
            split="train",
        )


def augment_dataset(train: TensorBatch, gan: BucketGan,
                    gap_fraction: float = 0.10) -> TensorBatch:
    """Append GAN-generated positives to a training batch.

    Adds ``floor(gap_fraction * (n_neg - n_pos))`` synthetic positive
    buckets, closing a tenth of the class gap by default. Only the training
    split may be augmented; the split tag is enforced. Fits the generator on
    the batch first unless it already is.
    """
    check_fraction(gap_fraction, "gap_fraction")
    if train.split != "train":
        raise ValueError(
            f"augmentation is restricted to the training split, got {train.split!r}"
        )
    n_pos = train.n_positive
    n_neg = train.n - n_pos
    if n_pos == 0:
        raise NoPositivesError("training split has no positive buckets")
    n_extra = int(np.floor(gap_fraction * max(n_neg - n_pos, 0)))
    if n_extra == 0:
        return train
    if not hasattr(gan, "gen_"):
        gan.fit(train)
    synth = gan.sample(n_extra)
    return TensorBatch.concatenate([train, synth])
