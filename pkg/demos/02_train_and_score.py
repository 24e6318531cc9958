"""Train the dual-teacher / dual-student model briefly and score the test split.

    python3 demos/02_train_and_score.py [epochs]

The default of 10 epochs takes under a minute; the acceptance runs use 100.
"""
import sys
import time

import numpy as np

from pdd.config import Config
from pdd.data import Manifest, generate
from pdd.pipeline import train
from pdd.scoring import eval_dataset

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 10
cfg = Config().replace(train={"epochs": epochs})
train_set, test_set = generate(cfg.data)
manifest = Manifest(train_set, test_set)
print("config digest", cfg.digest(), "manifest", manifest.digest(), manifest.counts())

t0 = time.perf_counter()
result = train(cfg, manifest, progress=lambda e, acc: print(
    f"  epoch {e:3d}  kr {acc[0]:.4f}  prp {acc[1]:.4f}  div {acc[2]:.4f}  total {acc[3]:.4f}"))
print(f"trained in {time.perf_counter() - t0:.0f}s")

# The same trained model can be scored three ways.
for pairs in ("fused", "raw", "student_student"):
    result.model.config = cfg.replace(scoring={"score_pairs": pairs})
    rep = eval_dataset(result.model, test_set)
    m = rep.metrics
    print(f"{pairs:16s} auroc {m['auroc']:.3f}  ap {m['ap']:.3f}  f1_max {m['f1_max']:.3f}")

# Scores by class under the default pairing.
result.model.config = cfg
rep = eval_dataset(result.model, test_set)
scores = np.array([s["score"] for s in rep.samples])
labels = np.array([s["label"] for s in rep.samples])
print("mean score normal %.3f  abnormal %.3f" % (scores[labels == 0].mean(), scores[labels == 1].mean()))
