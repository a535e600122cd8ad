"""Reference convolution, shifts and bilinear sampling, checked against loops."""
# %%
import numpy as np

from aslks import ConvParams, ConvSpec, SplitMix64, conv2d_direct, grad_check, shift2d
from aslks.oracles import conv2d_loops
from aslks.tensor import bilinear_sample, conv2d_backward

rng = SplitMix64(0)

# %% A grouped 3x3 convolution against the six-deep loop transcription.
spec = ConvSpec(4, 6, 3, 3, stride=1, pad_h=1, pad_w=1, groups=2, has_bias=True)
p = ConvParams.random(spec, rng)
x = rng.uniform((2, 4, 7, 7), -1, 1)
y = conv2d_direct(x, p)
print("conv output", y.shape, "bit-exact vs loops:",
      np.array_equal(y, conv2d_loops(x, p.weights, p.bias, 1, 1, 1, groups=2)))

# %% Shifts move data and fill with zeros.
m = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
print("shift down by one:\n", shift2d(m, 1, 0)[0, 0])

# %% Bilinear reads treat everything outside the map as zero.
img = np.array([[0.0, 2.0], [4.0, 6.0]]).reshape(1, 1, 2, 2)
print("centre sample:", bilinear_sample(img, 0, 0, 0.5, 0.5))
print("half a pixel above the top row:", bilinear_sample(img, 0, 0, -0.5, 1.0))

# %% Analytic input gradient against central differences.
go = rng.uniform(y.shape, -1, 1)
rep = grad_check(
    "conv2d/x",
    lambda t: float(np.sum(conv2d_direct(t.reshape(x.shape), p) * go)),
    lambda t: conv2d_backward(t.reshape(x.shape), p, go)[0].ravel(),
    x.ravel(),
)
print(rep)
