# Train a small model and look inside it.
#
# The run logs every step's three loss terms and whether the gate summed them,
# then we evaluate the best checkpoint and score how well each stage of the
# network separates the seven emotions (silhouette, higher is better).
#
#   python3 demos/02_train_and_inspect.py

import os
import tempfile

import numpy as np

from ous.data import Manifest, generate_corpus
from ous.evaluation import TAP_ORDER, cluster_report
from ous.train import evaluate, read_metrics, train

from _small import SMALL

data = tempfile.mkdtemp(prefix="ous_corpus_")
generate_corpus(SMALL.data, data)
out = tempfile.mkdtemp(prefix="ous_run_")

result = train(SMALL, data, out)
print(f"stopped after {len(result.epochs)} epochs ({result.stop_reason})")
for rec in result.epochs:
    print(f"  epoch {rec['epoch']:2d}  val_loss {rec['val_loss']:.3f}  WAR {rec['val_WAR']:.3f}  "
          f"ambiguous {rec['val_ambiguous_acc']:.3f}  lr {rec['lr']:.2e}")

# %% The gate: early on the global loss is large, so all three terms are
# optimised; once it falls below alpha only the contrastive term remains.
header, steps, _ = read_metrics(os.path.join(out, "metrics.jsonl"))
gated = np.array([s["gate_active"] for s in steps])
print(f"alpha = {header['alpha']}; gate active on {gated.sum()} of {len(steps)} steps")
first_off = int(np.argmin(gated)) if not gated.all() else None
print("first ungated step:", first_off)

# %% Cluster quality at each tap of the best model
model = result.model
model.load_state_dict(result.best_state)
val = Manifest.load(data).split("val")
ev = evaluate(model, result.features["val"], val)
scores = cluster_report(ev.taps, [r.emotion for r in val])
for name in TAP_ORDER:
    print(f"  {name:<16} {scores[name]:+.3f}")
print("confusion (rows true, cols predicted):")
print(np.array(ev.report.confusion))
