"""
Prompting a frozen depth backbone
=================================

The prompt encoder turns sparse depth into per-level feature modulations
for a frozen relative-depth backbone. With identity-initialized fusion
heads the prompted output is exactly the backbone's own prediction.
"""
import numpy as np

from scaleprompt.backbone import BackboneConfig, init_backbone, predict_relative
from scaleprompt.sape import SapeConfig, baseline_forward, init_sape, prepare, prompted_forward, prompted_relative
from scaleprompt.scene import PatternConfig, apply_hole, apply_sparse_random, gen_scene

bcfg = BackboneConfig()
model = init_backbone(bcfg)
rgb, depth = gen_scene(seed=1)
sparse = apply_sparse_random(apply_hole(depth, PatternConfig("hole", rects=((0, 0, 16, 16),))), fraction=0.05, seed=3)

scfg = SapeConfig()
print("prompted decoder levels", scfg.levels(bcfg), "guided by taps", [bcfg.level_tap(l) - 1 for l in scfg.levels(bcfg)])

rel, fit, metric = prompted_forward(rgb, sparse, model, init_sape(bcfg, scfg), bcfg, scfg)
print("identical to backbone:", np.array_equal(rel.values, predict_relative(rgb, model, bcfg).values))

# random fusion heads change the output; look inside with a trace
scfg = SapeConfig(identity_fusion=False)
sape = init_sape(bcfg, scfg)
inputs = prepare(rgb, sparse, model, bcfg, scfg)
trace = {}
prompted_relative(inputs, model, sape, bcfg, scfg, trace)
w = trace["attention"][0]
print("patches with measurements:", inputs.patch_valid.astype(int).reshape(bcfg.grid))
print("attention mass on empty patches in block 1: %.1f" % w[:, :, 1:][:, :, ~inputs.patch_valid].sum())
print("row sums:", np.unique(np.round(w.sum(axis=-1), 12)))

_, b_fit, b_metric = baseline_forward(rgb, sparse, model, bcfg)
print("baseline fit s=%.3f t=%.3f" % (b_fit.scale, b_fit.shift))
