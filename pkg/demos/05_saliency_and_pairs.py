"""Saliency scores, attention maps, and generated contrastive pairs.

Uses the checkpoint from demos/04_train_small.py. Shows which feature
dimensions the contrastive loss marks as salient, where the spatial
attention lands, and what the decoder produces from original vs
perturbed feature vectors.

Run:  python3 demos/04_train_small.py && python3 demos/05_saliency_and_pairs.py
"""

import json
import os

import numpy as np
import torch

from fgssl.augment import make_view_batch
from fgssl.datagen import load_dataset
from fgssl.evalkit import export_attention, export_pairs
from fgssl.perturb import NoiseConfig, dispersion_scores
from fgssl.saliency import gradcam_feature_scores, min_max_normalize
from fgssl.trainer import load_train_checkpoint

HERE = os.path.join(os.path.dirname(__file__), "output")
RUN = os.path.join(HERE, "04_run")
OUT = os.path.join(HERE, "05_saliency")
os.makedirs(OUT, exist_ok=True)

manifest = json.load(open(os.path.join(RUN, "dataset_manifest.json")))["manifest"]
dataset = load_dataset(manifest)
ckpt = os.path.join(RUN, "ckpt_final.ckpt")
state = load_train_checkpoint(ckpt)

# feature-dimension saliency for one batch
idx = dataset.indices("test")[:8]
images = torch.from_numpy(dataset.batch_float(idx))
views = make_view_batch(images.numpy(), state.cfg.augment, 0, 0, idx)[1]
eta = gradcam_feature_scores(state.enc_q, state.proj_q, images,
                             torch.from_numpy(views), state.cfg.tau)
eta_bar = min_max_normalize(eta)
print(f"saliency eta: shape {tuple(eta.shape)}, "
      f"mean fraction of near-zero dims: {(eta_bar < 0.05).float().mean():.2f}")
top = eta.mean(dim=0).argsort(descending=True)[:5]
print(f"most salient feature dimensions (batch mean): {top.tolist()}")

# bank dispersion after training: low-dispersion dims are collapse candidates
s = dispersion_scores(state.bank)
from fgssl.perturb import masking_statistic
stat = masking_statistic(s, state.bank.fill)
print(f"bank dispersion: min {s.min():.4f} (dim {int(s.argmin())}), "
      f"max {s.max():.4f} (dim {int(s.argmax())}); "
      f"{int((stat < state.cfg.noise.kappa).sum())}/{len(s)} dims pass the "
      f"kappa={state.cfg.noise.kappa} variance-noise mask")

pair_paths = export_pairs(ckpt, dataset, os.path.join(OUT, "pairs"),
                          noise=NoiseConfig(mode="both"), count=8)
print(f"original | reconstruction | perturbed grids -> {os.path.dirname(pair_paths[0])}")

attn_paths = export_attention(ckpt, dataset, os.path.join(OUT, "attention"), count=8)
print(f"original | heatmap | overlay grids        -> {os.path.dirname(attn_paths[0])}")

# attention vs the ground-truth glyph boxes
from fgssl.evalkit import attention_mass_in_boxes
from fgssl.saliency import spatial_attention_map
cam = spatial_attention_map(state.enc_q, state.proj_q, images,
                            torch.from_numpy(views), state.cfg.tau).numpy()
boxes = [dataset.glyph_records[i].bbox for i in idx]
mass, area = attention_mass_in_boxes(cam, boxes)
print(f"attention mass inside glyph boxes: {mass:.3f} vs area fraction {area:.3f}")
