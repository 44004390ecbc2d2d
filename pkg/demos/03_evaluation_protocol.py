"""
The evaluation protocol
=======================

Scores are reported as the mean and spread over many random sets of test
patches rather than a single number. This demo runs the protocol with an
oracle that returns the ground truth, then with a deliberately noisy one.
"""

import numpy as np

from eddynet import evaluator
from eddynet.data import PatchPair, SshGrid, SynthConfig, synth_scene

rng = np.random.default_rng(9)

# ### A test pool
#
# Twelve 128x128 scenes. The protocol centre-crops each one to 120x120.

pool = []
for i in range(12):
    g, m, _ = synth_scene(SynthConfig(grid_size=128, n_eddies=(6, 10)), rng)
    pool.append(PatchPair(g.values, m, f"scene{i}"))

truth = {p.ssh[4:124, 4:124].tobytes(): p.mask[4:124, 4:124] for p in pool}
oracle = lambda ssh: np.stack([truth[s.tobytes()] for s in ssh])

# A predictor is either trained weights or any callable mapping (n, h, w)
# SSH crops to (n, h, w) label maps.

cfg = evaluator.EvalProtocolConfig(n_sets=5, set_size=10, patch_size=120, seed=0)
rep = evaluator.evaluate_protocol(oracle, pool, cfg)
print("oracle:")
print(evaluator.report_json(rep))

# ### A noisy predictor
#
# Flip 5% of the pixels to a random class. Now the sets disagree a little
# and the standard deviations become non-zero.

flip_rng = np.random.default_rng(1)


def noisy(ssh):
    labels = oracle(ssh).copy()
    hit = flip_rng.random(labels.shape) < 0.05
    labels[hit] = flip_rng.integers(0, 3, hit.sum())
    return labels


rep = evaluator.evaluate_protocol(noisy, pool, cfg)
print("noisy:", {k: round(v, 3) for k, v in zip(("non_eddy", "anticyclonic", "cyclonic"), rep.per_class())},
      "std", {k: round(v, 4) for k, v in rep.std.items()})

# Per-patch aggregation averages dice over patches instead of pooling pixels.

rep = evaluator.evaluate_protocol(noisy, pool, evaluator.EvalProtocolConfig(5, 10, 120, 0, "per_patch"))
print("noisy, per patch:", [round(v, 3) for v in rep.per_class()])

# ### Ghost eddies
#
# A ghost check asks whether the predicted label at known eddy centres
# matches their class. Here the oracle labels a whole grid.

g, m, contours = synth_scene(SynthConfig(grid_size=64), rng)
centres = [(r, c, int(m[r, c])) for r, c in zip(*np.nonzero(m)) if m[r, c]][:6]
rates = evaluator.ghost_check(lambda ssh: m[None], SshGrid(g.values), centres)
print("ghost detection rates:", rates)
