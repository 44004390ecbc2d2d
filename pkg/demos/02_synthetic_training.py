"""
Training on synthetic eddy scenes
=================================

Real SSH products are not bundled, so this walk-through builds its own
scenes: Gaussian bumps on a noisy background, positive ones labelled
anticyclonic and negative ones cyclonic.
"""

import tempfile
from pathlib import Path

import numpy as np

from eddynet import formats, losses
from eddynet.data import PatchPair, SynthConfig, synth_scene
from eddynet.model import EddyNetConfig, build_model, parameter_report, predict_labels
from eddynet.trainer import TrainConfig, checkpoint, load_history, train

rng = np.random.default_rng(123)

# ### A scene
#
# ``synth_scene`` returns the SSH grid, the label mask and the eddy contours
# the mask was rasterized from.

grid, mask, contours = synth_scene(SynthConfig(grid_size=32, n_eddies=(2, 3), radius_range=(2.0, 3.5)), rng)
print("grid", grid.shape, "eddies", len(contours), "class counts", np.bincount(mask.ravel(), minlength=3))

# ### The network
#
# The full-size model has three encoder stages of 32 filters. The parameter
# report itemizes every layer and compares the total with the reference count.

print(parameter_report(build_model(EddyNetConfig(variant="selu"), rng)))

# ### A short training run
#
# A two-stage, 8-filter model trains in seconds on 48 small scenes. The best
# validation epoch is kept, not the last one.

cfg = SynthConfig(grid_size=32, n_eddies=(2, 3), radius_range=(2.0, 3.5))
pairs = [PatchPair(g.values, m) for g, m, _ in (synth_scene(cfg, rng) for _ in range(60))]
train_set, val_set = pairs[:48], pairs[48:]

tc = TrainConfig(max_epochs=8, learning_rate=3e-3, model_overrides={"stages": 2, "filters": 8, "bn_momentum": 0.9})
weights, history = train(tc, train_set, val_set, log_fn=print)
print("best epoch", history.best_epoch)

pred = predict_labels(weights, np.stack([p.ssh for p in val_set])[:, None])
print(losses.metric_report(pred, np.stack([p.mask for p in val_set])))

# ### Checkpoints
#
# Weights go to a checksummed binary file and the history to a CSV. Both
# reload exactly.

with tempfile.TemporaryDirectory() as d:
    wpath, hpath = checkpoint(weights, history, Path(d))
    print(hpath.read_text())
    back = formats.load_weights(wpath)
    print("weights reload bit-exactly:", formats.weights_to_bytes(back) == wpath.read_bytes())
    print("history best epoch after reload:", load_history(hpath).best_epoch)
