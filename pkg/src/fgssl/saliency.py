"""Gradient-based saliency of latent feature dimensions and image regions.

Feature-level scores follow the Grad-CAM recipe applied to the encoder's
feature vector instead of a conv layer: score_i = ReLU(dL/dv_i * v_i),
where L is a two-view contrastive loss with in-batch negatives. The
spatial variant is classic Grad-CAM over the last conv activations,
driven by the same loss. Both run as side passes: parameters and their
gradient accumulators are left untouched.
"""

import torch
import torch.nn.functional as F

from . import nets
from .losses import info_nce_batch, paired_indices


def min_max_normalize(vec: torch.Tensor) -> torch.Tensor:
    """Scale to [0,1] along the last dimension; constant input maps to zeros."""
    if vec.numel() == 0:
        raise ValueError("cannot normalize an empty vector")
    if not torch.isfinite(vec.detach()).all():
        raise ValueError("cannot normalize non-finite values")
    lo = vec.amin(dim=-1, keepdim=True)
    hi = vec.amax(dim=-1, keepdim=True)
    span = hi - lo
    out = torch.where(span > 0, (vec - lo) / torch.where(span > 0, span, torch.ones_like(span)),
                      torch.zeros_like(vec))
    return out


def feature_saliency(loss: torch.Tensor, v: torch.Tensor, retain_graph: bool = False) -> torch.Tensor:
    """ReLU(dloss/dv * v), detached. v must be a graph leaf-or-interior node."""
    if not v.requires_grad:
        raise RuntimeError("feature tensor does not require grad (model in no-grad mode?)")
    (grad,) = torch.autograd.grad(loss, v, retain_graph=retain_graph, allow_unused=False)
    return F.relu(grad.detach() * v.detach())


def two_view_contrastive_loss(proj, v: torch.Tensor, v2: torch.Tensor, tau: float,
                              include_positive: bool = True) -> torch.Tensor:
    """In-batch contrastive loss between projections of two view features."""
    z = nets.project(proj, v, normalize=True)
    z2 = nets.project(proj, v2, normalize=True)
    reps = torch.cat([z, z2], dim=0)
    return info_nce_batch(reps, paired_indices(v.shape[0], device=v.device), tau,
                          include_positive=include_positive)


def gradcam_feature_scores(encoder, projector, x: torch.Tensor, x2: torch.Tensor,
                           tau: float, include_positive: bool = True) -> torch.Tensor:
    """Per-sample feature-dimension saliency eta, shape B x n, all >= 0.

    x2 is an augmented view of x; the loss pairs each sample with its view
    and uses the rest of the batch as negatives (requires B >= 2).
    """
    v = encoder(x)
    v2 = encoder(x2)
    loss = two_view_contrastive_loss(projector, v, v2, tau, include_positive)
    return feature_saliency(loss, v)


def spatial_attention_map(encoder, projector, x: torch.Tensor, x2: torch.Tensor,
                          tau: float, include_positive: bool = True) -> torch.Tensor:
    """Grad-CAM heat map over the last conv layer, shape B x H x W in [0,1]."""
    v, act = encoder.forward_features(x)
    v2 = encoder(x2)
    loss = two_view_contrastive_loss(projector, v, v2, tau, include_positive)
    (grad_act,) = torch.autograd.grad(loss, act, allow_unused=False)
    weights = grad_act.detach().mean(dim=(2, 3), keepdim=True)
    cam = F.relu((weights * act.detach()).sum(dim=1, keepdim=True))
    cam = F.interpolate(cam, size=x.shape[-2:], mode="bilinear", align_corners=False)
    flat = cam.flatten(1)
    flat = min_max_normalize(flat)
    return flat.reshape(x.shape[0], x.shape[-2], x.shape[-1])
