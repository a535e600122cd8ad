"""A 51x51 depthwise kernel rebuilt from shifted 5x5 tiles."""
# %%
import numpy as np

from aslks import LkscSpec, SplitMix64, lksc_forward, lksc_linear, random_plan
from aslks.lksc import branch_reference, shift_conv_forward, tile_shifts

spec = LkscSpec(channels=4, kh=51, kw=51, tile=5)
plan = random_plan(spec, SplitMix64(11))

# %% Each 51-long strip becomes eleven 5x5 tiles at fixed offsets.
print("tile shifts:", tile_shifts(51, 5))
for b in plan.branches:
    print(f"{b.name:>10}: kernel {b.kernel.shape[1:]}, {len(b.tiles)} tile(s)")

# %% The shifted-tile sum equals the direct convolution with the full strip.
x = SplitMix64(12).uniform((1, 4, 48, 48), -1, 1)
for b in plan.branches:
    err = np.max(np.abs(shift_conv_forward(x, b) - branch_reference(x, b)))
    print(f"{b.name:>10}: max |tiles - direct| = {err:.1e}")

# %% Kernel elements per channel: three branches against one dense kernel.
print(f"taps {spec.branch_taps} vs {spec.dense_taps}, ratio {spec.tap_ratio:.4f}")

# %% Full module adds a pointwise mixer, batch norm and SiLU.
print("module output", lksc_forward(x, plan).shape, "linear stage", lksc_linear(x, plan).shape)
