"""
Relative depth and least-squares alignment
==========================================

A relative map only knows depth up to an unknown scale and shift of
disparity. A handful of metric measurements pin both down.
"""
import numpy as np

from scaleprompt.depth_domain import apply_fit, depth_to_disparity, lsq_align, normalize
from scaleprompt.evaluation import evaluate
from scaleprompt.scene import apply_sparse_random, gen_scene

_, depth = gen_scene(seed=2)

# standardized disparity is what a relative depth network predicts at best
rel, stats = normalize(depth_to_disparity(depth))
print("disparity mean %.4f, std %.4f" % (stats.mu, stats.sigma))

for n in (2, 5, 50):
    sparse = apply_sparse_random(depth, count=n, seed=0)
    fit = lsq_align(rel, sparse)
    print("%3d points -> s=%.6f t=%.6f, AbsREL %.2e" % (n, fit.scale, fit.shift, evaluate(apply_fit(rel, fit), depth).absrel))

# with noise in the relative map the fit is no longer exact
noisy = type(rel)(rel.values + np.random.default_rng(0).normal(scale=0.05, size=rel.shape), rel.valid)
fit = lsq_align(noisy, apply_sparse_random(depth, count=50, seed=0))
print("noisy: rms residual %.4f, AbsREL %.4f" % (fit.rms_residual, evaluate(apply_fit(noisy, fit), depth).absrel))
