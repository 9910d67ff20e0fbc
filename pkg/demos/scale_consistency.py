"""
Regional scale consistency
==========================

A single global scale cannot fix a prediction whose scale drifts across
the image. The per-region median of gt / pred makes the drift visible.
"""
import numpy as np

from scaleprompt.backbone import BackboneConfig, init_backbone
from scaleprompt.evaluation import scale_consistency
from scaleprompt.maps import DepthMap
from scaleprompt.sape import baseline_forward
from scaleprompt.scene import apply_sparse_random, gen_scene

_, depth = gen_scene(seed=3)

# a global rescale gives a flat scale map
print("pred = 2 gt:", scale_consistency(depth, DepthMap.dense(2 * depth.values)).variance)

# the right half is off by a factor of two
half = depth.values.copy()
half[:, 16:] /= 2
smap = scale_consistency(depth, DepthMap.dense(half), (1, 2))
print("half-scaled:", smap.scales, "variance", smap.variance)

# the untrained toy backbone, aligned globally, is far from uniform
bcfg = BackboneConfig()
rgb, depth = gen_scene(seed=1)
_, _, metric = baseline_forward(rgb, apply_sparse_random(depth, fraction=0.05, seed=3), init_backbone(bcfg), bcfg)
smap = scale_consistency(depth, metric, (4, 4))
print(np.round(smap.as_array(), 3))
print("variance %.4f" % smap.variance)
