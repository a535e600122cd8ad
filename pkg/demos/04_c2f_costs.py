"""C2f variants side by side: executed shapes and exact parameter/MAC counts."""
# %%
from aslks import C2fConfig, SplitMix64, block_forward, count_params_flops, init_c2f
from aslks.c2f import c2f_concat

rng = SplitMix64(5)
x = rng.uniform((1, 16, 20, 20), -1, 1)

# %% The ASC variant concatenates X1, the full stem, Y2 and Y2' (5c' channels).
for variant in ("standard", "ascm", "lkscm"):
    cfg = C2fConfig(variant, 16, 16, c_prime=8, n=2, kernel=13, tile=5, groups=2)
    params = init_c2f(cfg, rng)
    print(f"{variant:>8}: concat {c2f_concat(x, params).shape[1]:>3} ch -> output {block_forward(x, params).shape}")

# %% Counting a small stack at 64x64, with the dense 51x51 comparator.
stack = [C2fConfig("standard", 32, 64, label="stage1"),
         C2fConfig("lkscm", 64, 64, label="stage2"),
         C2fConfig("ascm", 64, 64, groups=4, label="neck")]
mod = count_params_flops(stack, (1, 32, 64, 64))
dense = count_params_flops([c.with_variant("dense_lk") if c.variant == "lkscm" else c for c in stack],
                           (1, 32, 64, 64))
for b in mod.blocks:
    print(f"{b.label:>7} {b.variant:>8}: {b.params:>8} params {b.macs:>12} MACs")
print(f"total {mod.total_params} params vs {dense.total_params} with a dense 51x51 kernel")
