"""Dataset splitting, class weighting and the shared training loop."""
from __future__ import annotations

import csv
import hashlib
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .evaluate import SingleClassError, roc_auc
from .validation import check_binary_labels

__all__ = [
    "derive_seed",
    "SplitPlan",
    "SplitAssignment",
    "TooFewRidesError",
    "split_rides",
    "class_weights",
    "EpochRecord",
    "EarlyStopper",
    "minibatches",
    "write_history_csv",
    "train_cyclesense",
    "grid_search",
    "GridResult",
]


def derive_seed(root_seed: int, name: str) -> int:
    """Deterministic child seed for a named random stream.

    Hashing keeps sibling streams (weight init, shuffling, dropout, ...)
    statistically unrelated while the whole run stays reproducible from one
    root seed.
    """
    digest = hashlib.sha256(f"{root_seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class TooFewRidesError(ValueError):
    pass


@dataclass(frozen=True)
class SplitPlan:
    """Seeded ride-level split ratios; defaults to 60/20/20."""

    seed: int = 0
    ratios: tuple = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if len(self.ratios) != 3 or abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"ratios must be three values summing to 1, got {self.ratios}")
        if any(r <= 0 for r in self.ratios):
            raise ValueError("all split ratios must be positive")


@dataclass
class SplitAssignment:
    train: tuple
    val: tuple
    test: tuple

    def split_of(self, ride_id: str) -> str:
        for name in ("train", "val", "test"):
            if ride_id in getattr(self, name):
                return name
        raise KeyError(ride_id)


def split_rides(ride_ids: Sequence[str], plan: SplitPlan) -> SplitAssignment:
    """Shuffle whole rides and cut them into train/validation/test.

    Splitting at ride granularity keeps all buckets of a ride in one split,
    so no incident context leaks across the boundary. Sizes are
    ``floor(0.6 n)`` / ``floor(0.2 n)`` / remainder. Needs at least 5 rides
    so every split is populated.
    """
    ids = sorted(set(ride_ids))
    if len(ids) != len(ride_ids):
        raise ValueError("ride ids must be unique")
    n = len(ids)
    if n < 5:
        raise TooFewRidesError(f"need at least 5 rides to split, got {n}")
    rng = np.random.default_rng(derive_seed(plan.seed, "ride-split"))
    order = rng.permutation(n)
    n_train = int(np.floor(plan.ratios[0] * n))
    n_val = int(np.floor(plan.ratios[1] * n))
    shuffled = [ids[i] for i in order]
    return SplitAssignment(
        train=tuple(shuffled[:n_train]),
        val=tuple(shuffled[n_train:n_train + n_val]),
        test=tuple(shuffled[n_train + n_val:]),
    )


def class_weights(labels) -> tuple[float, float]:
    """Inverse-frequency weights ``n / (2 n_c)`` as (w_pos, w_neg).

    Balanced labels give (1, 1); the weighted positive and negative masses
    are always equal.
    """
    arr = check_binary_labels(labels)
    n = len(arr)
    n_pos = int(arr.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError(
            f"class weights undefined with {n_pos} positives / {n_neg} negatives"
        )
    return n / (2.0 * n_pos), n / (2.0 * n_neg)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_auc: float


class EarlyStopper:
    """Track the best validation AUC and call the stop after no improvement.

    ``update`` returns whether the epoch improved on the best so far
    (strictly); the caller stops once ``should_stop`` is set and restores
    ``best_state``.
    """

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.best_auc = -np.inf
        self.best_epoch = -1
        self.best_state: dict | None = None
        self._since_best = 0

    def update(self, epoch: int, auc: float, state: dict) -> bool:
        if auc > self.best_auc:
            self.best_auc = auc
            self.best_epoch = epoch
            self.best_state = state
            self._since_best = 0
            return True
        self._since_best += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self._since_best >= self.patience


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Yield shuffled index arrays covering 0..n-1 once."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def write_history_csv(path, history: Sequence[EpochRecord]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_auc"])
        for rec in history:
            writer.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_auc)])


def fit_epochs(*, epochs: int, patience: int, run_epoch: Callable[[int], float],
               score_val: Callable[[], float], get_state: Callable[[], dict],
               set_state: Callable[[dict], None]) -> tuple[list, EarlyStopper]:
    """Generic epoch loop with early stopping on validation AUC.

    ``run_epoch(epoch)`` returns the mean training loss; ``score_val``
    computes the validation AUC after the epoch. The best-scoring weights
    are restored before returning.
    """
    if not patience < epochs:
        raise ValueError(f"patience must be smaller than epochs, got {patience} >= {epochs}")
    stopper = EarlyStopper(patience)
    history: list[EpochRecord] = []
    for epoch in range(epochs):
        loss = run_epoch(epoch)
        auc = score_val()
        history.append(EpochRecord(epoch=epoch, train_loss=loss, val_auc=auc))
        stopper.update(epoch, auc, get_state())
        if stopper.should_stop:
            break
    if stopper.best_state is not None:
        set_state(stopper.best_state)
    return history, stopper


def train_cyclesense(train_batch, val_batch, config: dict | None = None):
    """Train the fusion detector on prepared tensor batches.

    ``config`` holds keyword arguments of
    :class:`~cyclesense.models.CycleSenseClassifier`. Returns the fitted
    estimator and its epoch history.
    """
    from .models import CycleSenseClassifier

    est = CycleSenseClassifier(**(config or {}))
    est.fit(train_batch, val=val_batch)
    return est, est.history_


@dataclass
class GridResult:
    f: int
    gru_units: int
    cell: str
    learning_rate: float
    status: str
    val_auc: float


DEFAULT_GRID = {
    "f": (5, 10, 20),
    "gru_units": (60, 120, 180),
    "cell": ("gru", "lstm"),
    "learning_rate": (1e-3, 1e-4, 1e-5),
}


def grid_search(train_buckets, val_buckets, space: dict | None = None,
                budget: int | None = None, epochs: int = 5, seed: int = 0,
                out_csv=None) -> list[GridResult]:
    """Sweep detector hyperparameters on bucket data.

    The frequency parameter changes the input tensors, so extraction runs
    per distinct ``f`` (cached). Sweep runs train without subnet
    pretraining or augmentation to keep the budget proportional to the grid,
    and with a trimmed epoch count. Unsupported configurations (the LSTM
    cell) are recorded rather than raised. Results come back sorted by
    validation AUC, failed runs last.
    """
    from .models import CycleSenseClassifier
    from .spectral import DftFeatureExtractor

    space = dict(DEFAULT_GRID if space is None else space)
    keys = ("f", "gru_units", "cell", "learning_rate")
    for key in keys:
        if key not in space:
            raise ValueError(f"grid space is missing {key!r}")
    if epochs < 2:
        raise ValueError(f"the sweep needs epochs >= 2, got {epochs}")
    combos = list(itertools.product(*(space[k] for k in keys)))
    if budget is not None:
        combos = combos[:budget]

    tensor_cache: dict[int, tuple] = {}
    results: list[GridResult] = []
    for f, units, cell, lr in combos:
        if f not in tensor_cache:
            extractor = DftFeatureExtractor(f=f)
            tensor_cache[f] = (extractor.transform(train_buckets),
                              extractor.transform(val_buckets))
        train_t, val_t = tensor_cache[f]
        try:
            est = CycleSenseClassifier(
                f=f, gru_units=units, cell=cell, learning_rate=lr,
                epochs=epochs, patience=max(1, epochs - 1),
                stacking=False, augment=False, seed=seed,
            )
            est.fit(train_t, val=val_t)
            results.append(GridResult(f, units, cell, lr, "ok", est.best_val_auc_))
        except NotImplementedError:
            results.append(GridResult(f, units, cell, lr, "unsupported", float("nan")))

    results.sort(key=lambda r: (np.isnan(r.val_auc), -(r.val_auc if not np.isnan(r.val_auc) else 0)))
    if out_csv is not None:
        path = Path(out_csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["f", "gru_units", "cell", "learning_rate", "status", "val_auc"])
            for r in results:
                writer.writerow([r.f, r.gru_units, r.cell, repr(r.learning_rate),
                                 r.status, repr(r.val_auc)])
    return results
