"""Evaluation: linear probes at label fractions, retrieval, collapse
diagnostics, and qualitative exports of generated pairs and attention.

All evaluations are read-only over a training checkpoint: the encoder is
run in eval mode and its parameters are never updated.
"""

import json
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .augment import make_view_batch
from .datagen import Dataset, to_uint8
from .nets import Encoder
from .perturb import NoiseConfig, dispersion_from_matrix, masking_statistic, \
    sample_gradcam_noise, sample_variance_noise, perturb_features
from .saliency import gradcam_feature_scores, min_max_normalize, spatial_attention_map
from .seeding import derive_seed, np_rng, torch_rng
from .trainer import TrainState, load_train_checkpoint


@dataclass(frozen=True)
class LinearEvalResult:
    top1: float             # percent
    label_fraction: float
    seed: int

    def to_json(self) -> str:
        return json.dumps({"top1": self.top1, "label_fraction": self.label_fraction,
                           "seed": self.seed})


@dataclass(frozen=True)
class RetrievalResult:
    rank1: float
    rank5: float
    mAP: float

    def to_json(self) -> str:
        return json.dumps({"rank1": self.rank1, "rank5": self.rank5, "mAP": self.mAP})


def encode_split(encoder: Encoder, dataset: Dataset, split: str,
                 batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode features and labels for one split, in manifest order."""
    encoder.eval()
    feats, labels = [], []
    idx = dataset.indices(split)
    with torch.no_grad():
        for start in range(0, len(idx), batch_size):
            chunk = idx[start:start + batch_size]
            x = torch.from_numpy(dataset.batch_float(chunk))
            feats.append(encoder(x).numpy())
            labels.append(dataset.labels[chunk])
    return np.concatenate(feats), np.concatenate(labels)


def stratified_label_subset(labels: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """Indices of a per-class fraction of the labeled set (round per class)."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"label_fraction must be in (0,1], got {fraction}")
    rng = np_rng(seed, "label_subset")
    keep: list[np.ndarray] = []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        n = round(len(members) * fraction)
        if n == 0:
            raise ValueError(f"label fraction {fraction} leaves class {cls} with no examples")
        keep.append(rng.permutation(members)[:n])
    return np.sort(np.concatenate(keep))


def linear_probe(train_feats: np.ndarray, train_labels: np.ndarray,
                 test_feats: np.ndarray, test_labels: np.ndarray,
                 num_classes: int, label_fraction: float = 1.0, seed: int = 0,
                 epochs: int = 30, lr: float = 30.0, batch_size: int = 128) -> LinearEvalResult:
    """Train a linear classifier on frozen features; report test top-1 (%).

    SGD with momentum 0.9, weight decay 0, cosine-decayed learning rate.
    """
    subset = stratified_label_subset(train_labels, label_fraction, seed)
    xf = torch.from_numpy(train_feats[subset].astype(np.float32))
    yf = torch.from_numpy(train_labels[subset].astype(np.int64))
    torch.manual_seed(derive_seed(seed, "probe_init"))
    clf = torch.nn.Linear(xf.shape[1], num_classes)
    opt = torch.optim.SGD(clf.parameters(), lr=lr, momentum=0.9, weight_decay=0.0)
    n = len(xf)
    steps_per_epoch = max(1, math.ceil(n / batch_size))
    total_steps = epochs * steps_per_epoch
    step = 0
    for epoch in range(epochs):
        order = np_rng(seed, "probe_shuffle", epoch).permutation(n)
        for start in range(0, n, batch_size):
            sel = order[start:start + batch_size]
            for group in opt.param_groups:
                group["lr"] = lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
            logits = clf(xf[sel])
            loss = F.cross_entropy(logits, yf[sel])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            step += 1
    clf.eval()
    with torch.no_grad():
        pred = clf(torch.from_numpy(test_feats.astype(np.float32))).argmax(dim=1).numpy()
    top1 = 100.0 * float((pred == test_labels).mean())
    return LinearEvalResult(top1=top1, label_fraction=label_fraction, seed=seed)


def linear_eval(checkpoint_path: str, dataset: Dataset, label_fraction: float = 1.0,
                seed: int = 0, epochs: int = 30, lr: float = 30.0) -> LinearEvalResult:
    state = load_train_checkpoint(checkpoint_path)
    train_f, train_y = encode_split(state.enc_q, dataset, "train")
    test_f, test_y = encode_split(state.enc_q, dataset, "test")
    return linear_probe(train_f, train_y, test_f, test_y, dataset.num_classes,
                        label_fraction, seed, epochs=epochs, lr=lr)


def retrieval_metrics(feats: np.ndarray, labels: np.ndarray) -> RetrievalResult:
    """Leave-one-out cosine retrieval over one gallery of features.

    rank-k is the percentage of queries whose top-k neighbors contain a
    same-class item; mAP averages the average precision of each query's
    full same-class ranking. Queries whose class has no other member are
    excluded with a warning.
    """
    counts = np.bincount(labels)
    valid = counts[labels] >= 2
    if not valid.all():
        lonely = np.unique(labels[~valid])
        warnings.warn(f"excluding single-member classes from retrieval: {lonely.tolist()}")
    normed = feats / np.maximum(np.linalg.norm(feats, axis=1, keepdims=True), 1e-12)
    sim = normed @ normed.T
    np.fill_diagonal(sim, -np.inf)

    hits1, hits5, aps = [], [], []
    for i in np.flatnonzero(valid):
        order = np.argsort(-sim[i], kind="stable")[:len(labels) - 1]
        rel = (labels[order] == labels[i]).astype(np.float64)
        hits1.append(1.0 if rel[:1].any() else 0.0)
        hits5.append(1.0 if rel[:5].any() else 0.0)
        cum = np.cumsum(rel)
        precision_at_hit = cum[rel > 0] / (np.flatnonzero(rel) + 1)
        aps.append(precision_at_hit.mean())
    return RetrievalResult(rank1=100.0 * float(np.mean(hits1)),
                           rank5=100.0 * float(np.mean(hits5)),
                           mAP=100.0 * float(np.mean(aps)))


def retrieval_eval(checkpoint_path: str, dataset: Dataset) -> RetrievalResult:
    state = load_train_checkpoint(checkpoint_path)
    feats, labels = encode_split(state.enc_q, dataset, "test")
    return retrieval_metrics(feats, labels)


def collapse_stats(feats: np.ndarray, labels: np.ndarray):
    """Per-dimension dispersion and class separation over a feature matrix.

    Dispersion matches the training-time bank statistic (total squared
    deviation of the L2-normalized column). Separation is between-class
    variance over within-class variance of the raw column.
    """
    s = dispersion_from_matrix(torch.from_numpy(feats.astype(np.float64))).numpy()
    classes = np.unique(labels)
    overall_mean = feats.mean(axis=0)
    between = np.zeros(feats.shape[1])
    within = np.zeros(feats.shape[1])
    for cls in classes:
        rows = feats[labels == cls]
        between += len(rows) * (rows.mean(axis=0) - overall_mean) ** 2
        within += ((rows - rows.mean(axis=0)) ** 2).sum(axis=0)
    between /= len(feats)
    within /= len(feats)
    separation = between / np.maximum(within, 1e-12)
    return s, separation


def collapse_report(checkpoint_path: str, dataset: Dataset, out_csv: str | None = None):
    """Dispersion/separation per dimension plus argmin/argmax summaries."""
    state = load_train_checkpoint(checkpoint_path)
    feats, labels = encode_split(state.enc_q, dataset, "test")
    dispersion, separation = collapse_stats(feats, labels)
    report = {
        "dispersion": dispersion,
        "separation": separation,
        "argmin_dispersion": int(np.argmin(dispersion)),
        "argmax_dispersion": int(np.argmax(dispersion)),
        "argmax_separation": int(np.argmax(separation)),
    }
    if out_csv is not None:
        write_collapse_csv(out_csv, dispersion, separation)
    return report


def write_collapse_csv(path: str, dispersion: np.ndarray, separation: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("dim,dispersion,separation\n")
        for i, (d, sep) in enumerate(zip(dispersion, separation)):
            fh.write(f"{i},{float(d)!r},{float(sep)!r}\n")


def read_collapse_csv(path: str):
    dispersion, separation = [], []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "dim,dispersion,separation":
            raise ValueError(f"bad collapse report header: {header}")
        for line in fh:
            _, d, sep = line.strip().split(",")
            dispersion.append(float(d))
            separation.append(float(sep))
    return np.array(dispersion), np.array(separation)


_GRID_GAP = 2


def _grid_row(panels: list[np.ndarray]) -> np.ndarray:
    """Place C x H x W panels side by side with a white gap, as H x W' x C u8."""
    sep = np.ones((panels[0].shape[0], panels[0].shape[1], _GRID_GAP), dtype=np.float32)
    padded = []
    for i, p in enumerate(panels):
        padded.append(p)
        if i + 1 < len(panels):
            padded.append(sep)
    return to_uint8(np.concatenate(padded, axis=2)).transpose(1, 2, 0)


def grid_panel_slices(num_panels: int, width: int):
    """Column slices of each panel inside a grid image of panel width `width`."""
    return [slice(i * (width + _GRID_GAP), i * (width + _GRID_GAP) + width)
            for i in range(num_panels)]


def generated_pair(state: TrainState, images: torch.Tensor, noise: NoiseConfig,
                   seed: int = 0):
    """Decode (x_hat, x_hat_p) for a batch, drawing noise per the config.

    Saliency scores need a second view and in-batch negatives, so the
    batch must have >= 2 images when the config uses the gradcam path.
    Dispersion comes from the checkpointed bank when it holds enough
    rows, otherwise from this batch's own features.
    """
    noise.validate()
    state.enc_q.eval()
    state.proj_q.eval()
    state.dec.eval()
    gen = torch_rng(seed, "export_noise")
    with torch.no_grad():
        v = state.enc_q(images)
        x_hat = state.dec(v)
    noise_g = noise_var = None
    if noise.mode in ("both", "gradcam_only"):
        aug = make_view_batch(images.numpy(), state.cfg.augment, seed, 0,
                              np.arange(len(images)))[1]
        eta = gradcam_feature_scores(state.enc_q, state.proj_q, images,
                                     torch.from_numpy(aug), state.cfg.tau)
        noise_g = sample_gradcam_noise(min_max_normalize(eta), noise.eps_g, gen)
    if noise.mode in ("both", "lowvar_only"):
        if state.bank.fill >= 2:
            s = dispersion_from_matrix(state.bank.storage[:state.bank.fill])
            rows = state.bank.fill
        else:
            s = dispersion_from_matrix(v)
            rows = len(images)
        noise_var = sample_variance_noise(masking_statistic(s, rows),
                                          min_max_normalize(s), noise, gen,
                                          batch_size=len(images))
    v_p = perturb_features(v, noise_g, noise_var, noise, gen)
    with torch.no_grad():
        x_hat_p = state.dec(v_p)
    return x_hat, x_hat_p


def export_pairs(checkpoint_path: str, dataset: Dataset, out_dir: str,
                 noise: NoiseConfig | None = None, count: int = 16,
                 split: str = "test", seed: int = 0) -> list[str]:
    """Write one original|reconstruction|perturbed grid PNG per input."""
    state = load_train_checkpoint(checkpoint_path)
    if not state.decoder_pretrained and state.cfg.weights.alpha == 0 \
            and state.cfg.weights.nu == 0:
        warnings.warn("checkpoint trained without a decoder; reconstructions are untrained")
    noise = noise if noise is not None else state.cfg.noise
    os.makedirs(out_dir, exist_ok=True)
    idx = dataset.indices(split)[:count]
    images = torch.from_numpy(dataset.batch_float(idx))
    x_hat, x_hat_p = generated_pair(state, images, noise, seed)
    paths = []
    for i in range(len(idx)):
        grid = _grid_row([images[i].numpy(), x_hat[i].numpy(), x_hat_p[i].numpy()])
        path = os.path.join(out_dir, f"pair_{i:03d}.png")
        Image.fromarray(grid, mode="RGB").save(path, format="PNG")
        paths.append(path)
    return paths


def export_attention(checkpoint_path: str, dataset: Dataset, out_dir: str,
                     count: int = 16, split: str = "test", seed: int = 0) -> list[str]:
    """Write one original|heatmap|overlay grid PNG per input."""
    state = load_train_checkpoint(checkpoint_path)
    state.enc_q.eval()
    state.proj_q.eval()
    os.makedirs(out_dir, exist_ok=True)
    idx = dataset.indices(split)[:count]
    images = torch.from_numpy(dataset.batch_float(idx))
    aug = make_view_batch(images.numpy(), state.cfg.augment, seed, 0, idx)[1]
    cam = spatial_attention_map(state.enc_q, state.proj_q, images,
                                torch.from_numpy(aug), state.cfg.tau)
    paths = []
    for i in range(len(idx)):
        heat = cam[i].numpy()[None].repeat(3, axis=0)
        overlay = np.clip(0.5 * images[i].numpy() + 0.5 * np.stack(
            [heat[0], np.zeros_like(heat[0]), 1.0 - heat[0]]), 0, 1)
        grid = _grid_row([images[i].numpy(), heat.astype(np.float32),
                          overlay.astype(np.float32)])
        path = os.path.join(out_dir, f"attention_{i:03d}.png")
        Image.fromarray(grid, mode="RGB").save(path, format="PNG")
        paths.append(path)
    return paths


def attention_mass_in_boxes(cam: np.ndarray, boxes: list[tuple[int, int, int, int]]):
    """(mean attention mass inside boxes, mean box-area fraction) baselines."""
    masses, areas = [], []
    for i, (x0, y0, x1, y1) in enumerate(boxes):
        total = cam[i].sum()
        inside = cam[i][y0:y1, x0:x1].sum()
        masses.append(inside / max(total, 1e-12))
        areas.append(((y1 - y0) * (x1 - x0)) / cam[i].size)
    return float(np.mean(masses)), float(np.mean(areas))
