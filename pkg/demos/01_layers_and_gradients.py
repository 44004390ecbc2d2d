"""
Layers, losses and gradient checks
==================================

Every layer in eddynet is a pair of plain numpy functions: ``*_forward``
returns ``(out, cache)`` and ``*_backward`` turns an upstream gradient plus
that cache into gradients for the inputs and parameters.
"""

import numpy as np

from eddynet import gradcheck, layers as L, losses
from eddynet.data import one_hot

rng = np.random.default_rng(0)

# ### Convolution
#
# A 3x3 "same" convolution keeps the spatial size. Weights are laid out as
# (out_channels, in_channels, kh, kw).

x = rng.normal(size=(2, 1, 8, 8)).astype(np.float32)
w = rng.normal(size=(4, 1, 3, 3)).astype(np.float32) * 0.3
b = np.zeros(4, np.float32)
out, cache = L.conv2d_forward(x, w, b)
print("conv2d:", x.shape, "->", out.shape)

dx, dw, db = L.conv2d_backward(np.ones_like(out), cache)
print("gradient shapes:", dx.shape, dw.shape, db.shape)

# The stride-2 transposed convolution doubles height and width, which is how
# the decoder climbs back to full resolution.

wt = rng.normal(size=(4, 4, 3, 3)).astype(np.float32) * 0.3
up, _ = L.transposed_conv2d_forward(out, wt, b)
print("transposed conv:", out.shape, "->", up.shape)

# ### Activations
#
# SELU has fixed constants, and its negative tail saturates at -lambda*alpha.

print("selu(1) =", L.selu_forward(np.array([1.0]))[0][0])
print("selu(-20) =", L.selu_forward(np.array([-20.0]))[0][0], "saturation", L.SELU_SATURATION)

# ### Losses
#
# Soft dice loss is one minus the mean soft dice over the three classes.
# A uniform prediction against a single non-eddy pixel gives 1 - 1/6.

uniform = np.full((1, 3, 1, 1), 1 / 3)
target = one_hot(np.zeros((1, 1), int))
dl, _ = losses.dice_loss(uniform, target)
cce, _ = losses.categorical_cross_entropy(uniform, target)
print(f"dice loss {dl:.6f} (expected {5 / 6:.6f}), cross entropy {cce:.6f} (expected {np.log(3):.6f})")

# Hard dice on label maps: four predicted, six true, three shared -> 2*3/10.

pred = np.array([1, 1, 1, 1, 0, 0, 0, 0, 0])
truth = np.array([1, 1, 1, 0, 1, 1, 1, 0, 0])
print("hard dice for class 1:", losses.hard_dice(pred, truth, 1))

# ### Gradient checks
#
# ``check_layer`` compares each analytic backward pass with central finite
# differences of a random projection of the output.

for kind in sorted(gradcheck.LAYER_CASES):
    rep = gradcheck.check_layer(kind, seed=0)
    print(f"{kind:>22s}: max relative error {rep.max_relative_error:.2e} passed={rep.passed}")

# The whole network can be checked too, on a tiny one-stage model. Kinks in
# ReLU, SELU and max-pooling are frozen to the branch taken by the unperturbed
# pass, so a finite-difference step never jumps across one.

for variant in ("relu_bn", "selu"):
    rep = gradcheck.check_network(variant, seed=0)
    print(f"network {variant}: max relative error {rep.max_relative_error:.2e} passed={rep.passed}")
