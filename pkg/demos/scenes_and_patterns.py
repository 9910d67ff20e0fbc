"""
Synthetic scenes and depth degradations
=======================================

Render one scene, then degrade its depth with every pattern kind and look
at how many measurements survive.
"""
from pathlib import Path

import numpy as np

from scaleprompt.fileio import false_color, write_ppm
from scaleprompt.scene import PatternConfig, apply_pattern, gen_scene

out = Path("demo_out")

# a 64 x 64 scene: tilted plane plus four objects
rgb, depth = gen_scene(seed=4, height=64, width=64, object_count=4)
print("depth range %.3f .. %.3f m" % (depth.values.min(), depth.values.max()))
write_ppm(out / "scene_rgb.ppm", rgb.pixels)

lo, hi = depth.values.min(), depth.values.max()
patterns = {
    "hole": PatternConfig("hole", coverage=0.3, blobs=3, seed=7),
    "range": PatternConfig("range", lo_pct=20, hi_pct=80),
    "sparse_random": PatternConfig("sparse_random", fraction=0.02, seed=1),
    "sparse_lidar": PatternConfig("sparse_lidar", lines=16),
    # mixed keeps the pixels every part keeps
    "mixed": PatternConfig("mixed", parts=(PatternConfig("range"), PatternConfig("sparse_lidar", lines=32))),
}
for name, cfg in patterns.items():
    d = apply_pattern(depth, cfg)
    print("%-14s %5d valid pixels (%.1f%%)" % (name, d.n_valid, 100 * d.n_valid / d.values.size))
    write_ppm(out / f"pattern_{name}.ppm", false_color(d.values, d.valid, lo, hi))

# every pattern is a pure restriction: surviving values are untouched
d = apply_pattern(depth, patterns["hole"])
assert np.array_equal(d.values[d.valid], depth.values[d.valid])
