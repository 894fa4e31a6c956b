"""The three training loss terms, evaluated on hand-sized examples.

Total objective: contrastive (queue negatives) + alpha * reconstruction
+ nu * generated-pair contrastive, with alpha=1 and nu=0.5 by default.

Run:  python3 demos/03_objective_walkthrough.py
"""

import math

import torch
import torch.nn.functional as F

from fgssl.losses import LossWeights, info_nce_batch, info_nce_queue, paired_indices, \
    recon_loss, total_loss

# --- queue contrastive loss -------------------------------------------------
q = F.normalize(torch.tensor([[1.0, 0.2, 0.0]]), dim=1)
k = F.normalize(torch.tensor([[0.9, 0.1, 0.1]]), dim=1)
queue = F.normalize(torch.randn(6, 3, generator=torch.Generator().manual_seed(0)), dim=1)
lc = info_nce_queue(q, k, queue, tau=0.2)
print(f"queue InfoNCE (1 positive vs 6 stored negatives): {lc.item():.4f}")

# symmetric case with all similarities equal: softmax goes uniform
u = F.normalize(torch.ones(1, 4), dim=1)
same = u.repeat(3, 1)
print(f"uniform similarities, queue of 3 -> log(4) = {math.log(4):.4f} "
      f"vs computed {info_nce_queue(u, u, same, tau=1.0).item():.4f}")

# --- in-batch contrastive loss over generated pairs -------------------------
b = 3
first = F.normalize(torch.randn(b, 4, generator=torch.Generator().manual_seed(1)), dim=1)
second = F.normalize(first + 0.1 * torch.randn(b, 4), dim=1)  # near-copies
reps = torch.cat([first, second])
lcp = info_nce_batch(reps, paired_indices(b), tau=0.2)
print(f"in-batch InfoNCE over {2 * b} reps (pairs are near-copies): {lcp.item():.4f}")

# --- reconstruction ----------------------------------------------------------
x = torch.rand(2, 3, 8, 8, generator=torch.Generator().manual_seed(2))
noisy = (x + 0.05 * torch.randn_like(x)).clamp(0, 1)
lr = recon_loss(x, noisy)
print(f"reconstruction MSE of a slightly corrupted copy: {lr.item():.5f}")

# --- total -------------------------------------------------------------------
weights = LossWeights(alpha=1.0, nu=0.5)
total = total_loss(lc, lr, lcp, weights)
print(f"total = lc + {weights.alpha} * lr + {weights.nu} * lcp = {total.item():.4f}")
