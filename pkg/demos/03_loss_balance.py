"""How the diversity weight shapes the trained students.

    python3 demos/03_loss_balance.py [epochs]

Trains the full model with the default weights and with the diversity term
off, then prints per-student reconstruction error against the fused target
and the AUROC of each scoring mode.
"""
import sys

import numpy as np

from pdd.config import Config
from pdd.data import Manifest, batch_tensor, generate
from pdd.numerics import no_grad
from pdd.objectives import cos_flat
from pdd.pipeline import train
from pdd.scoring import eval_dataset

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20
base = Config().replace(train={"epochs": epochs})
tr, te = generate(base.data)
manifest = Manifest(tr, te)
x = batch_tensor(te[:16], base.encoder.input_size)

for label, cfg in (("default weights", base), ("lambda_div = 0", base.replace(loss={"lambda_div": 0.0}))):
    res = train(cfg, manifest)
    model = res.model
    with no_grad():
        out = model(x)
    print(f"\n{label}: final losses", np.round(res.log.rows[-1][2:6], 4))
    for i in range(4):
        cu = cos_flat(out.f_b[i], out.f_eu[i]).item()
        cp = cos_flat(out.f_b[i], out.f_ep[i]).item()
        cs = cos_flat(out.f_eu[i], out.f_ep[i]).item()
        print(f"  stage {i + 1}: cos(f_b, Eu) {cu:.3f}  cos(f_b, Ep) {cp:.3f}  cos(Eu, Ep) {cs:.3f}")
    for pairs in ("fused", "student_student"):
        model.config = cfg.replace(scoring={"score_pairs": pairs})
        print(f"  {pairs:16s} auroc {eval_dataset(model, te).metrics['auroc']:.3f}")
