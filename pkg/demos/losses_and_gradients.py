"""
Training losses and their gradients
===================================

Four losses compare a raw prediction with ground truth after both are
standardized, so none of them cares about scale or shift. The analytic
gradients are checked against central differences.
"""
import numpy as np

from scaleprompt.losses import gradcheck_suite, loss_gm, loss_rssim, loss_ssi, loss_total

rng = np.random.default_rng(0)
gt = rng.uniform(0.5, 2.0, size=(16, 16))
pred = gt + rng.normal(scale=0.2, size=gt.shape)
mask = rng.random(gt.shape) < 0.9
sparse = mask & (rng.random(gt.shape) < 0.1)

for name, fn in (("ssi", loss_ssi), ("gm", loss_gm), ("rssim", loss_rssim)):
    v, _ = fn(pred, gt, mask)
    v_affine, _ = fn(1000.0 * pred - 5.0, gt, mask)
    print("%-6s %.6f   after pred -> 1000 pred - 5: %.6f" % (name, v, v_affine))

# flipping the sign of the prediction is the worst case for r-ssim
print("rssim of -gt: %.6f" % loss_rssim(-gt, gt, mask)[0])

report, _ = loss_total(pred, gt, mask, gt, sparse)
print(report)

for name, err in gradcheck_suite().items():
    print("gradient check %-6s max rel err %.2e" % (name, err))
