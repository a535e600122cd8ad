"""Adaptive shape convolution: learned offsets and modulation on a grouped kernel."""
# %%
import numpy as np

from aslks import AscFields, AscParams, AscSpec, SplitMix64, asc_block_forward, asc_forward, conv2d_direct
from aslks.asc import asc_generate_fields

rng = SplitMix64(3)
spec = AscSpec(8, 8, 3, 3, groups=2)
p = AscParams.random(spec, rng)
x = rng.uniform((1, 8, 12, 12), -1, 1)

# %% The 3x3 generator predicts 2 offsets and 1 logit per group and kernel point.
fields = asc_generate_fields(x, p)
print("offsets", fields.offsets.shape, "modulation", fields.modulation.shape)
print("offset range %.3f .. %.3f" % (fields.offsets.min(), fields.offsets.max()))

# %% With zero offsets and unit modulation the operator is a plain grouped conv.
still = AscFields.constant(spec, 1, 12, 12)
print("degenerate case equals conv2d_direct:", np.array_equal(asc_forward(x, p, still),
                                                              conv2d_direct(x, p.base_conv())))

# %% Modulation scales every sampled contribution.
half = AscFields(fields.offsets, 0.5 * fields.modulation)
gap = np.max(np.abs(asc_forward(x, p, half) - 0.5 * asc_forward(x, p, fields)))
print("halving modulation halves the output, max gap %.1e" % gap)

# %% Full block: generator, sampling conv, batch norm, SiLU.
y = asc_block_forward(x, p)
print("block output", y.shape, "params", p.param_count())
