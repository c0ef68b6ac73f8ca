"""Train a small CRT-Net on the synthetic smooth-vs-spiky task and score it.

The learning rate starts at 1e-4 and halves every 4 epochs, so most of the
progress happens early; batch size 1 gives enough optimizer steps per epoch.
Run with ``python3 demos/train_tiny_crtnet.py [epochs]`` (default 30, about a
minute on one core).
"""
import sys

import numpy as np

from ecgraph.crtnet.model import n_parameters, predict_proba, tiny_config
from ecgraph.crtnet.train import TrainConfig, train
from ecgraph.datasets import synthetic_task, to_arrays
from ecgraph.metrics import confusion, report

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 30

train_recs, manifest = synthetic_task(100, 200, rng_seed=0)
test_recs, _ = synthetic_task(25, 200, rng_seed=1)
x, y = to_arrays(train_recs)
xt, yt = to_arrays(test_recs)
print("training counts:", manifest.counts["train"])

cfg = tiny_config(input_length=200)
result = train(cfg, (x, y), (xt, yt), TrainConfig(max_epochs=epochs, batch_size=1, rng_seed=0))
print(f"{n_parameters(result.params)} parameters, {len(result.history)} epochs, "
      f"best epoch {result.best_epoch}")
for h in result.history[::4]:
    print(f"  epoch {h['epoch']:3d}  lr {h['lr']:.2e}  loss {h['train_loss']:.4f}  val_acc {h['val_acc']:.3f}")

preds = np.argmax(predict_proba(xt, cfg, result.params), axis=-1)
print(report(confusion(preds, yt, cfg.n_classes), manifest.class_names).to_text(), end="")
