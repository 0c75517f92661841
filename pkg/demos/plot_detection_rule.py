"""
The objectives and the video-level rule
=======================================

Small worked cases for the three training losses and for the rule that turns
per-window probabilities into a verdict.
"""

# %%
# Cross-entropy on all-zero logits is ln 2 whatever the batch. Anchors and
# positives (both real) weigh a quarter each and negatives a half, so real and
# fake count equally.
import math

import torch

from srdetect.detector import ConfusionCounts, aggregate_verdict, compute_metrics
from srdetect.objectives import LossConfig, cross_entropy_loss, total_loss, triplet_loss, variance_loss

zeros = torch.zeros(8, 1, dtype=torch.float64)
print(float(cross_entropy_loss(zeros, zeros, zeros)), math.log(2))

# %%
# The triplet term asks the anchor to sit closer (in cosine similarity) to
# another real clip than to its own upscaled copy, by a margin.
a = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
near, far = torch.tensor([[0.9, 0.1]], dtype=torch.float64), torch.tensor([[0.0, 1.0]], dtype=torch.float64)
print("satisfied:", float(triplet_loss(a, near, far, margin=0.2)))
print("violated: ", float(triplet_loss(a, far, near, margin=0.2)))

# %%
# The variance term penalizes embedding dimensions whose batch spread falls
# below gamma. A fully collapsed batch pays 1 - sqrt(eps) per branch.
same = torch.ones(16, 4, dtype=torch.float64)
print(float(variance_loss(same, same, same, gamma=1.0, eps=1e-4)))
spread = torch.randn(16, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(0)) * 3
print(float(variance_loss(spread, spread, spread, gamma=1.0, eps=1e-4)))

# %%
# Terms can be switched off for ablations; the total is the plain sum.
logits = torch.zeros(16, 1, dtype=torch.float64)
for terms in (("CE",), ("CE", "V"), ("CE", "T", "V")):
    parts = total_loss(spread, same, spread, logits, logits, logits, LossConfig(enabled_terms=terms))
    print(terms, parts.as_floats())

# %%
# Video verdicts: the inclusive 5% rule. 25 hot windows out of 500 flag the
# video; 24 do not. A window exactly at p = 0.5 is not a detection.
for hot in (24, 25):
    print(hot, aggregate_verdict([0.9] * hot + [0.1] * (500 - hot)))
print(aggregate_verdict([0.5] * 20))

# %%
# Balanced accuracy averages the true positive and true negative rates, so a
# detector that calls everything fake on a balanced set scores 0.5.
print(compute_metrics(ConfusionCounts(tp=45, fn=5, tn=40, fp=10)))
print(compute_metrics(ConfusionCounts(tp=50, fp=50)))
