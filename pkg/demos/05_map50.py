"""mAP@50 on a tiny two-class problem, and a check against the exhaustive oracle."""
# %%
from aslks import Box, Detection, GroundTruth, SplitMix64, map50
from aslks.oracles import map50_exhaustive
from aslks.verify import _as_tuples, random_detection_instance

sq = Box(0, 0, 10, 10)
gts = [GroundTruth("img0", 0, sq), GroundTruth("img0", 1, sq), GroundTruth("img1", 1, sq)]
dets = [Detection("img0", 0, sq, 0.9),
        Detection("img0", 1, Box(1, 0, 11, 10), 0.8),  # IoU 0.82, a hit
        Detection("img1", 1, Box(40, 40, 50, 50), 0.7)]  # misses
print(map50(dets, gts, n_classes=2).to_json())

# %% Random instances agree with a from-scratch evaluation of every cut-off.
rng = SplitMix64(0)
worst = 0.0
for _ in range(100):
    d, g = random_detection_instance(rng, n_classes=3)
    worst = max(worst, abs(map50(d, g, 3).map50 - map50_exhaustive(*_as_tuples(d, g), 3)))
print("max difference over 100 instances:", worst)
