"""Scratch benchmark: intermediate-scale end-to-end run to calibrate the
acceptance thresholds. Not part of the package."""
import sys
import time

import numpy as np

from cyclesense.evaluate import roc_auc
from cyclesense.models import CycleSenseClassifier, FcnClassifier, JumpHeuristicDetector
from cyclesense.pipeline import prepare_dataset
from cyclesense.synth import SynthSpec, generate_rides
from cyclesense.training import SplitPlan

n_rides = int(sys.argv[1]) if len(sys.argv) > 1 else 100
amp = float(sys.argv[2]) if len(sys.argv) > 2 else 6.0
epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 20
seed = int(sys.argv[4]) if len(sys.argv) > 4 else 42

t0 = time.time()
rides = generate_rides(SynthSpec(n_rides=n_rides, amplitude_sigma=amp, seed=seed))
print(f"[{time.time()-t0:6.1f}s] generated {len(rides)} rides, "
      f"{sum(len(r.incidents) for r in rides)} incidents", flush=True)

prep = prepare_dataset(rides, SplitPlan(seed=seed))
tr, va, te = prep.tensors["train"], prep.tensors["val"], prep.tensors["test"]
btr, bva, bte = prep.buckets["train"], prep.buckets["val"], prep.buckets["test"]
print(f"[{time.time()-t0:6.1f}s] buckets train={tr.n} ({tr.n_positive}+) "
      f"val={va.n} ({va.n_positive}+) test={te.n} ({te.n_positive}+)", flush=True)

heur = JumpHeuristicDetector().fit(btr)
auc_h = roc_auc(heur.decision_function(bte), bte.labels).auc
print(f"[{time.time()-t0:6.1f}s] heuristic auc={auc_h:.4f}", flush=True)

fcn = FcnClassifier(epochs=min(epochs, 30), patience=7, seed=seed)
fcn.fit(btr, val=bva)
auc_f = roc_auc(fcn.decision_function(bte), bte.labels).auc
print(f"[{time.time()-t0:6.1f}s] fcn auc={auc_f:.4f} "
      f"(best val {fcn.best_val_auc_:.4f}, {len(fcn.history_)} epochs)", flush=True)

clf = CycleSenseClassifier(epochs=epochs, patience=min(10, epochs - 1), seed=seed)
clf.fit(tr, val=va)
auc_c = roc_auc(clf.decision_function(te), te.labels).auc
print(f"[{time.time()-t0:6.1f}s] cyclesense auc={auc_c:.4f} "
      f"(best val {clf.best_val_auc_:.4f}, {len(clf.history_)} epochs)", flush=True)
print(f"ordering ok: {auc_c >= auc_f >= auc_h - 0.02}")
