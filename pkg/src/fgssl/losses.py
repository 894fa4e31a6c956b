"""Contrastive and reconstruction loss terms and their weighted sum.

Two InfoNCE variants are provided: a queue-negative form (query/key
training with a FIFO store of past keys) and a symmetric in-batch form
over reconstructed/perturbed pairs. Both default to including the
positive similarity in the softmax denominator, which is what the
cross-entropy-over-logits construction computes; the variant that
excludes the positive from the denominator is available via
`include_positive=False` for comparison.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .nets import NumericError


@dataclass(frozen=True)
class TemperatureConfig:
    tau: float = 0.2

    def validate(self) -> None:
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    nu: float = 0.5

    def validate(self) -> None:
        for name, val in (("alpha", self.alpha), ("nu", self.nu)):
            if not (val >= 0 and val == val and val != float("inf")):
                raise ValueError(f"{name} must be finite and >= 0, got {val}")


def _check_normalized(t: torch.Tensor, name: str, atol: float = 1e-4) -> None:
    detached = t.detach()
    if not torch.isfinite(detached).all():
        raise NumericError(f"{name} contains non-finite values")
    norms = detached.norm(dim=1)
    if not torch.allclose(norms, torch.ones_like(norms), atol=atol):
        raise ValueError(f"{name} rows must be L2-normalized (max |norm-1| = "
                         f"{(norms - 1).abs().max().item():.3e})")


def info_nce_queue(q: torch.Tensor, k: torch.Tensor, queue: torch.Tensor,
                   tau: float, include_positive: bool = True) -> torch.Tensor:
    """Queue-negative InfoNCE, mean over the batch.

    q: B x k queries (gradient flows through these only).
    k: B x k row-aligned positive keys; detached internally.
    queue: Q x k negative store; detached internally.
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    if queue.numel() == 0:
        raise ValueError("negative queue is empty")
    if q.shape != k.shape:
        raise ValueError(f"q/k shape mismatch: {tuple(q.shape)} vs {tuple(k.shape)}")
    _check_normalized(q, "q")
    _check_normalized(k, "k")
    _check_normalized(queue, "queue")

    k = k.detach()
    queue = queue.detach()
    l_pos = (q * k).sum(dim=1, keepdim=True)
    l_neg = q @ queue.t()
    if include_positive:
        logits = torch.cat([l_pos, l_neg], dim=1) / tau
        target = torch.zeros(q.shape[0], dtype=torch.long, device=q.device)
        return F.cross_entropy(logits, target)
    # Positive excluded from the denominator: -pos/tau + logsumexp(negatives).
    return (-l_pos.squeeze(1) / tau + torch.logsumexp(l_neg / tau, dim=1)).mean()


def paired_indices(batch_size: int, device=None) -> torch.Tensor:
    """Positive-pair index map for cat([first_half, second_half], dim=0)."""
    idx = torch.arange(2 * batch_size, device=device)
    return torch.where(idx < batch_size, idx + batch_size, idx - batch_size)


def info_nce_batch(reps: torch.Tensor, pairing: torch.Tensor, tau: float,
                   include_positive: bool = True) -> torch.Tensor:
    """Symmetric in-batch InfoNCE over 2B representations, mean over anchors.

    pairing[i] is the index of anchor i's positive. Each anchor's candidate
    set is the other 2B-1 rows (itself always excluded); with
    include_positive=False the positive is also dropped from the denominator.
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    n = reps.shape[0]
    if n < 4 or n % 2 != 0:
        raise ValueError(f"need 2B representations with B >= 2, got {n}")
    if pairing.shape != (n,):
        raise ValueError(f"pairing must have shape ({n},), got {tuple(pairing.shape)}")
    arange = torch.arange(n, device=reps.device)
    if (pairing == arange).any() or (pairing[pairing] != arange).any():
        raise ValueError("pairing must be a fixed-point-free involution (mutual positives)")
    _check_normalized(reps, "reps")

    sim = reps @ reps.t() / tau
    eye = torch.eye(n, dtype=torch.bool, device=reps.device)
    neg_inf = torch.finfo(sim.dtype).min
    sim = sim.masked_fill(eye, neg_inf)
    if include_positive:
        return F.cross_entropy(sim, pairing.to(reps.device))
    pos = sim.gather(1, pairing.view(-1, 1)).squeeze(1)
    pair_mask = torch.zeros_like(eye).scatter_(1, pairing.view(-1, 1), True)
    denom = torch.logsumexp(sim.masked_fill(pair_mask, neg_inf), dim=1)
    return (-pos + denom).mean()


def recon_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean squared error per element: (1/m) * sum((x - x_hat)^2)."""
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return F.mse_loss(x_hat, x)


def total_loss(lc: torch.Tensor, lr: torch.Tensor, lcp: torch.Tensor,
               weights: LossWeights) -> torch.Tensor:
    """Weighted objective: lc + alpha * lr + nu * lcp."""
    weights.validate()
    total = lc + weights.alpha * lr + weights.nu * lcp
    for name, term in (("lc", lc), ("lr", lr), ("lcp", lcp)):
        val = float(term.detach()) if isinstance(term, torch.Tensor) else float(term)
        if val != val or val in (float("inf"), float("-inf")):
            raise FloatingPointError(f"non-finite loss term {name}: {val}")
    return total
