"""Training orchestration: decoder pre-training and the main query/key loop.

Per step, in order: momentum-update the key networks; build two augmented
views; compute the queue contrastive loss (keys are enqueued before the
logits, so the queue is never empty and the current keys participate);
reconstruct the non-augmented batch for the MSE term; push features into
the memory bank; run the saliency side pass; sample guided noise; decode
the perturbed features; re-encode both reconstructions (detached, so the
pair loss trains only the encoder/projector); take one SGD step on the
weighted total.
"""

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import checkpoint as ckpt
from .augment import AugmentConfig, make_view_batch
from .datagen import Dataset
from .losses import LossWeights, info_nce_batch, info_nce_queue, paired_indices, recon_loss, total_loss
from .nets import Decoder, Encoder, NetConfig, NumericError, Projector, build_networks, momentum_update, project
from .perturb import FeatureBank, NoiseConfig, dispersion_scores, masking_statistic, \
    perturb_features, sample_gradcam_noise, sample_variance_noise
from .saliency import feature_saliency, min_max_normalize, two_view_contrastive_loss
from .seeding import derive_seed, torch_rng


class ConfigError(Exception):
    """Raised when a configuration fails validation."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.03
    weight_decay: float = 1e-4
    sgd_momentum: float = 0.9
    key_momentum: float = 0.999
    queue_capacity: int = 1024
    bank_capacity: int = 256
    tau: float = 0.2
    include_positive: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    net: NetConfig = field(default_factory=NetConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    decoder_lr: float = 1e-4
    decoder_epochs: int = 40
    seed: int = 0
    deterministic: bool = True
    checkpoint_every: int = 0          # epochs between checkpoints; 0 = final only
    allow_unpretrained_decoder: bool = False

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.batch_size > min(self.queue_capacity, self.bank_capacity):
            raise ConfigError(
                f"batch_size {self.batch_size} exceeds queue/bank capacity "
                f"{min(self.queue_capacity, self.bank_capacity)}")
        if not 0.0 <= self.key_momentum <= 1.0:
            raise ConfigError(f"key_momentum must be in [0,1], got {self.key_momentum}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        try:
            self.weights.validate()
            self.noise.validate()
            self.net.validate()
            self.augment.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def config_hash(self) -> str:
        blob = json.dumps(to_flat_dict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def to_flat_dict(cfg: TrainConfig) -> dict:
    """Flatten the nested config into scalar key/value pairs."""
    return {
        "epochs": cfg.epochs, "batch_size": cfg.batch_size, "lr": cfg.lr,
        "weight_decay": cfg.weight_decay, "sgd_momentum": cfg.sgd_momentum,
        "key_momentum": cfg.key_momentum, "queue_capacity": cfg.queue_capacity,
        "bank_capacity": cfg.bank_capacity, "tau": cfg.tau,
        "include_positive": cfg.include_positive,
        "alpha": cfg.weights.alpha, "nu": cfg.weights.nu,
        "eps_g": cfg.noise.eps_g, "eps_var": cfg.noise.eps_var,
        "kappa": cfg.noise.kappa, "noise_mode": cfg.noise.mode,
        "image_size": cfg.net.image_size, "feature_dim": cfg.net.feature_dim,
        "proj_dim": cfg.net.proj_dim, "num_blocks": cfg.net.num_blocks,
        "proj_layers": cfg.net.proj_layers,
        "crop_enabled": cfg.augment.crop_enabled,
        "crop_scale_min": cfg.augment.crop_scale[0], "crop_scale_max": cfg.augment.crop_scale[1],
        "flip_prob": cfg.augment.flip_prob,
        "jitter_enabled": cfg.augment.jitter_enabled, "jitter_prob": cfg.augment.jitter_prob,
        "jitter_brightness": cfg.augment.jitter_brightness,
        "jitter_contrast": cfg.augment.jitter_contrast,
        "jitter_saturation": cfg.augment.jitter_saturation,
        "jitter_hue": cfg.augment.jitter_hue,
        "grayscale_prob": cfg.augment.grayscale_prob,
        "blur_enabled": cfg.augment.blur_enabled, "blur_prob": cfg.augment.blur_prob,
        "blur_sigma_min": cfg.augment.blur_sigma[0], "blur_sigma_max": cfg.augment.blur_sigma[1],
        "decoder_lr": cfg.decoder_lr, "decoder_epochs": cfg.decoder_epochs,
        "seed": cfg.seed, "deterministic": cfg.deterministic,
        "checkpoint_every": cfg.checkpoint_every,
        "allow_unpretrained_decoder": cfg.allow_unpretrained_decoder,
    }


def from_flat_dict(flat: dict) -> TrainConfig:
    base = to_flat_dict(TrainConfig())
    unknown = set(flat) - set(base)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    d = {**base, **flat}
    return TrainConfig(
        epochs=int(d["epochs"]), batch_size=int(d["batch_size"]), lr=float(d["lr"]),
        weight_decay=float(d["weight_decay"]), sgd_momentum=float(d["sgd_momentum"]),
        key_momentum=float(d["key_momentum"]), queue_capacity=int(d["queue_capacity"]),
        bank_capacity=int(d["bank_capacity"]), tau=float(d["tau"]),
        include_positive=bool(d["include_positive"]),
        weights=LossWeights(alpha=float(d["alpha"]), nu=float(d["nu"])),
        noise=NoiseConfig(eps_g=float(d["eps_g"]), eps_var=float(d["eps_var"]),
                          kappa=float(d["kappa"]), mode=str(d["noise_mode"])),
        net=NetConfig(image_size=int(d["image_size"]), feature_dim=int(d["feature_dim"]),
                      proj_dim=int(d["proj_dim"]), num_blocks=int(d["num_blocks"]),
                      proj_layers=int(d["proj_layers"])),
        augment=AugmentConfig(
            crop_enabled=bool(d["crop_enabled"]),
            crop_scale=(float(d["crop_scale_min"]), float(d["crop_scale_max"])),
            flip_prob=float(d["flip_prob"]),
            jitter_enabled=bool(d["jitter_enabled"]), jitter_prob=float(d["jitter_prob"]),
            jitter_brightness=float(d["jitter_brightness"]),
            jitter_contrast=float(d["jitter_contrast"]),
            jitter_saturation=float(d["jitter_saturation"]),
            jitter_hue=float(d["jitter_hue"]),
            grayscale_prob=float(d["grayscale_prob"]),
            blur_enabled=bool(d["blur_enabled"]), blur_prob=float(d["blur_prob"]),
            blur_sigma=(float(d["blur_sigma_min"]), float(d["blur_sigma_max"]))),
        decoder_lr=float(d["decoder_lr"]), decoder_epochs=int(d["decoder_epochs"]),
        seed=int(d["seed"]), deterministic=bool(d["deterministic"]),
        checkpoint_every=int(d["checkpoint_every"]),
        allow_unpretrained_decoder=bool(d["allow_unpretrained_decoder"]),
    )


@dataclass
class MetricsRecord:
    step: int
    epoch: int
    loss_C: float
    loss_R: float
    loss_Cp: float
    total: float
    lr: float
    wall_time: float

    def validate(self) -> None:
        for name in ("loss_C", "loss_R", "loss_Cp", "total"):
            val = getattr(self, name)
            if not math.isfinite(val):
                raise NumericError(f"non-finite {name} at step {self.step}: {val}")

    def to_json(self) -> str:
        return json.dumps({"step": self.step, "epoch": self.epoch,
                           "loss_C": self.loss_C, "loss_R": self.loss_R,
                           "loss_Cp": self.loss_Cp, "total": self.total,
                           "lr": self.lr, "wall_time": self.wall_time})


class KeyQueue(FeatureBank):
    """FIFO ring of normalized key representations."""

    def push(self, feats: torch.Tensor) -> None:
        norms = feats.detach().norm(dim=1)
        if not torch.allclose(norms, torch.ones_like(norms), atol=1e-3):
            raise ValueError("queue rows must be unit-norm")
        super().push(feats)


def queue_push(queue: KeyQueue, keys: torch.Tensor) -> KeyQueue:
    queue.push(keys)
    return queue


@dataclass
class TrainState:
    cfg: TrainConfig
    enc_q: Encoder
    proj_q: Projector
    enc_k: Encoder
    proj_k: Projector
    dec: Decoder
    queue: KeyQueue
    bank: FeatureBank
    optimizer: torch.optim.SGD
    step: int = 0
    epoch: int = 0
    total_steps: int = 1
    decoder_pretrained: bool = False

    def trainable_modules(self):
        return {"enc_q": self.enc_q, "proj_q": self.proj_q, "dec": self.dec}

    def all_modules(self):
        return {"enc_q": self.enc_q, "proj_q": self.proj_q, "enc_k": self.enc_k,
                "proj_k": self.proj_k, "dec": self.dec}


def init_state(cfg: TrainConfig, steps_per_epoch: int = 1) -> TrainState:
    cfg.validate()
    enc_q, proj_q, enc_k, proj_k, dec = build_networks(cfg.net, cfg.seed)
    queue = KeyQueue(cfg.queue_capacity, cfg.net.proj_dim)
    bank = FeatureBank(cfg.bank_capacity, cfg.net.feature_dim)
    params = [
        {"params": list(enc_q.parameters()), "name": "enc_q"},
        {"params": list(proj_q.parameters()), "name": "proj_q"},
        {"params": list(dec.parameters()), "name": "dec"},
    ]
    opt = torch.optim.SGD(params, lr=cfg.lr, momentum=cfg.sgd_momentum,
                          weight_decay=cfg.weight_decay)
    return TrainState(cfg=cfg, enc_q=enc_q, proj_q=proj_q, enc_k=enc_k, proj_k=proj_k,
                      dec=dec, queue=queue, bank=bank, optimizer=opt,
                      total_steps=max(1, cfg.epochs * steps_per_epoch))


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / max(1, total_steps)))


@dataclass
class StepArtifacts:
    """Loss tensors plus side-pass intermediates, for probing and metrics."""
    loss_c: torch.Tensor
    loss_r: torch.Tensor | None = None
    loss_cp: torch.Tensor | None = None
    v: torch.Tensor | None = None
    eta: torch.Tensor | None = None
    s: torch.Tensor | None = None
    noise_g: torch.Tensor | None = None
    noise_var: torch.Tensor | None = None
    v_p: torch.Tensor | None = None
    x_hat: torch.Tensor | None = None
    x_hat_p: torch.Tensor | None = None


def compute_step_losses(state: TrainState, images: np.ndarray,
                        item_indices: np.ndarray, epoch: int) -> StepArtifacts:
    """Run one step's forward passes and side effects, without optimizing.

    Mutates key networks (momentum update), the queue, and the bank, in
    the same order the optimizing step does.
    """
    cfg = state.cfg
    batch = images.shape[0]
    for m in (state.enc_q, state.proj_q, state.enc_k, state.proj_k, state.dec):
        m.train()

    v1, v2, src = make_view_batch(images, cfg.augment, cfg.seed, epoch, item_indices)
    x1 = torch.from_numpy(v1)
    x2 = torch.from_numpy(v2)
    x = torch.from_numpy(src)

    momentum_update(state.enc_k, state.enc_q, cfg.key_momentum)
    momentum_update(state.proj_k, state.proj_q, cfg.key_momentum)

    q = project(state.proj_q, state.enc_q(x1), normalize=True)
    with torch.no_grad():
        k = project(state.proj_k, state.enc_k(x2), normalize=True)
    for name, reps in (("query", q), ("key", k)):
        detached = reps.detach()
        if not torch.isfinite(detached).all() or (detached.norm(dim=1) < 0.5).any():
            raise NumericError(f"{name} representations degenerated "
                               f"(non-finite or zero); training diverged")
    state.queue.push(k)
    loss_c = info_nce_queue(q, k, state.queue.rows(), cfg.tau, cfg.include_positive)

    art = StepArtifacts(loss_c=loss_c)
    need_pairs = cfg.weights.nu > 0
    need_recon = cfg.weights.alpha > 0 or need_pairs
    if not need_recon:
        return art

    v = state.enc_q(x)
    x_hat = state.dec(v)
    art.loss_r = recon_loss(x, x_hat)
    art.v, art.x_hat = v, x_hat
    state.bank.push(v)
    if not need_pairs:
        return art

    gen = torch_rng(cfg.seed, "noise", state.step)
    mode = cfg.noise.mode
    noise_g = noise_var = None
    if mode in ("both", "gradcam_only"):
        v2_feats = state.enc_q(x2)
        sal_loss = two_view_contrastive_loss(state.proj_q, v, v2_feats, cfg.tau,
                                             cfg.include_positive)
        eta = feature_saliency(sal_loss, v, retain_graph=True)
        noise_g = sample_gradcam_noise(min_max_normalize(eta), cfg.noise.eps_g, gen)
        art.eta = eta
    if mode in ("both", "lowvar_only"):
        if state.bank.fill >= 2 * batch:
            s = dispersion_scores(state.bank)
            # kappa thresholds the per-entry variance of the normalized
            # column; the noise-std profile uses the min-max of s (equal
            # for both statistics up to the constant row factor)
            noise_var = sample_variance_noise(masking_statistic(s, state.bank.fill),
                                              min_max_normalize(s), cfg.noise,
                                              gen, batch_size=batch)
            art.s = s
        else:
            # Bank too cold to estimate dispersion; variance path idles.
            noise_var = torch.zeros(batch, cfg.net.feature_dim)
    v_p = perturb_features(v, noise_g, noise_var, cfg.noise, gen)
    with torch.no_grad():
        x_hat_p = state.dec(v_p)

    z_hat = project(state.proj_q, state.enc_q(x_hat.detach()), normalize=True)
    z_hat_p = project(state.proj_q, state.enc_q(x_hat_p), normalize=True)
    reps = torch.cat([z_hat, z_hat_p], dim=0)
    art.loss_cp = info_nce_batch(reps, paired_indices(batch), cfg.tau, cfg.include_positive)
    art.noise_g, art.noise_var, art.v_p, art.x_hat_p = noise_g, noise_var, v_p, x_hat_p
    return art


def train_step(state: TrainState, images: np.ndarray, item_indices: np.ndarray,
               epoch: int) -> MetricsRecord:
    t0 = time.perf_counter()
    lr_now = cosine_lr(state.cfg.lr, state.step, state.total_steps)
    for group in state.optimizer.param_groups:
        group["lr"] = lr_now

    art = compute_step_losses(state, images, item_indices, epoch)
    zero = torch.zeros(())
    total = total_loss(art.loss_c, art.loss_r if art.loss_r is not None else zero,
                       art.loss_cp if art.loss_cp is not None else zero, state.cfg.weights)

    state.optimizer.zero_grad(set_to_none=True)
    total.backward()
    state.optimizer.step()
    state.step += 1

    wall = 0.0 if state.cfg.deterministic else time.perf_counter() - t0
    rec = MetricsRecord(
        step=state.step, epoch=epoch,
        loss_C=float(art.loss_c.detach()),
        loss_R=float(art.loss_r.detach()) if art.loss_r is not None else 0.0,
        loss_Cp=float(art.loss_cp.detach()) if art.loss_cp is not None else 0.0,
        total=float(total.detach()), lr=lr_now, wall_time=wall)
    rec.validate()
    return rec


def pretrain_decoder(cfg: TrainConfig, dataset: Dataset, epochs: int | None = None):
    """Train the decoder against the frozen encoder on resize-only images.

    Returns (decoder state_dict, per-epoch mean MSE history). The encoder
    is rebuilt from cfg.seed, evaluated in eval mode, and never modified.
    """
    cfg.validate()
    enc_q, _, _, _, dec = build_networks(cfg.net, cfg.seed)
    # Train-mode features (batch statistics) match what the main loop feeds
    # the decoder; zero BN momentum keeps the frozen encoder's buffers
    # bit-identical while still using batch statistics in the forward.
    enc_q.train()
    for m in enc_q.modules():
        if isinstance(m, torch.nn.modules.batchnorm._BatchNorm):
            m.momentum = 0.0
    dec.train()
    opt = torch.optim.Adam(dec.parameters(), lr=cfg.decoder_lr)
    n_epochs = cfg.decoder_epochs if epochs is None else epochs
    shuffle_seed = derive_seed(cfg.seed, "decoder_pretrain")
    history = []
    for epoch in range(n_epochs):
        losses = []
        for _, batch, _ in dataset.batches("train", cfg.batch_size, shuffle_seed, epoch):
            x = torch.from_numpy(batch)
            with torch.no_grad():
                v = enc_q(x)
            x_hat = dec(v)
            loss = recon_loss(x, x_hat)
            if not torch.isfinite(loss.detach()):
                raise NumericError(f"decoder pre-training diverged at epoch {epoch}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        history.append(float(np.mean(losses)) if losses else float("nan"))
    return dec.state_dict(), history


def decoder_recon_mse(cfg: TrainConfig, dataset: Dataset, dec_state: dict,
                      split: str = "test") -> float:
    """Mean reconstruction MSE of a decoder state on one split."""
    enc_q, _, _, _, dec = build_networks(cfg.net, cfg.seed)
    dec.load_state_dict(dec_state)
    enc_q.train()
    for m in enc_q.modules():
        if isinstance(m, torch.nn.modules.batchnorm._BatchNorm):
            m.momentum = 0.0
    dec.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for _, batch, _ in dataset.batches(split, cfg.batch_size, 0, 0, drop_last=False):
            x = torch.from_numpy(batch)
            x_hat = dec(enc_q(x))
            total += float(((x - x_hat) ** 2).mean()) * len(batch)
            count += len(batch)
    return total / max(1, count)


def save_train_checkpoint(path: str, state: TrainState) -> None:
    arrays, ints = {}, {}
    for prefix, module in state.all_modules().items():
        fl, it = ckpt.module_arrays(module, prefix)
        arrays.update(fl)
        ints.update(it)
    for pname, buf in _optimizer_momentum(state).items():
        arrays[f"opt.{pname}"] = buf
    arrays["queue.storage"] = state.queue.storage
    arrays["bank.storage"] = state.bank.storage
    meta = {
        "kind": "train",
        "step": state.step,
        "epoch": state.epoch,
        "config_hash": state.cfg.config_hash(),
        "config": to_flat_dict(state.cfg),
        "int_state": ints,
        "queue_cursor": state.queue.cursor, "queue_fill": state.queue.fill,
        "bank_cursor": state.bank.cursor, "bank_fill": state.bank.fill,
        "total_steps": state.total_steps,
        "decoder_pretrained": state.decoder_pretrained,
    }
    ckpt.save_archive(path, arrays, meta)


def _optimizer_momentum(state: TrainState) -> dict:
    named = {}
    for prefix, module in state.trainable_modules().items():
        for name, p in module.named_parameters():
            named[id(p)] = f"{prefix}.{name}"
    out = {}
    for group in state.optimizer.param_groups:
        for p in group["params"]:
            st = state.optimizer.state.get(p)
            if st and "momentum_buffer" in st and st["momentum_buffer"] is not None:
                out[named[id(p)]] = st["momentum_buffer"]
    return out


def load_train_checkpoint(path: str):
    """Rebuild a TrainState (and its config) from a checkpoint archive."""
    arrays, meta = ckpt.load_archive(path)
    if meta.get("kind") != "train":
        raise ValueError(f"not a training checkpoint: {path} (kind={meta.get('kind')})")
    cfg = from_flat_dict(meta["config"])
    state = init_state(cfg)
    ints = meta.get("int_state", {})
    for prefix, module in state.all_modules().items():
        ckpt.load_module_arrays(module, prefix, arrays, ints)
    state.queue.storage.copy_(arrays["queue.storage"])
    state.queue.cursor = int(meta["queue_cursor"])
    state.queue.fill = int(meta["queue_fill"])
    state.bank.storage.copy_(arrays["bank.storage"])
    state.bank.cursor = int(meta["bank_cursor"])
    state.bank.fill = int(meta["bank_fill"])
    state.step = int(meta["step"])
    state.epoch = int(meta["epoch"])
    state.total_steps = int(meta["total_steps"])
    state.decoder_pretrained = bool(meta["decoder_pretrained"])
    named = {}
    for prefix, module in state.trainable_modules().items():
        for name, p in module.named_parameters():
            key = f"opt.{prefix}.{name}"
            if key in arrays:
                state.optimizer.state[p] = {"momentum_buffer": arrays[key].reshape(p.shape).clone()}
    return state


def save_decoder_checkpoint(path: str, cfg: TrainConfig, dec_state: dict) -> None:
    arrays = {f"dec.{k}": v for k, v in dec_state.items()
              if v.dtype not in (torch.int64, torch.int32)}
    ints = {f"dec.{k}": int(v.item()) for k, v in dec_state.items()
            if v.dtype in (torch.int64, torch.int32)}
    ckpt.save_archive(path, arrays, {"kind": "decoder", "config": to_flat_dict(cfg),
                                     "config_hash": cfg.config_hash(), "int_state": ints,
                                     "step": 0})


def load_decoder_checkpoint(path: str, cfg: TrainConfig) -> dict:
    arrays, meta = ckpt.load_archive(path)
    if meta.get("kind") != "decoder":
        raise ValueError(f"not a decoder checkpoint: {path}")
    dec = Decoder(cfg.net)
    ckpt.load_module_arrays(dec, "dec", arrays, meta.get("int_state", {}))
    return dec.state_dict()


def train(cfg: TrainConfig, dataset: Dataset, out_dir: str | None = None,
          decoder_state: dict | None = None, resume_from: str | None = None,
          metrics_sink=None):
    """Run the main loop; returns (final TrainState, list of MetricsRecord).

    When out_dir is set, writes metrics.jsonl (one record per step) and
    checkpoints (ckpt_epoch_E.ckpt at the configured cadence plus
    ckpt_final.ckpt). Training refuses to start without a pre-trained
    decoder whenever the decoder participates (alpha or nu positive),
    unless allow_unpretrained_decoder is set.
    """
    cfg.validate()
    train_size = len(dataset.indices("train"))
    if cfg.batch_size > train_size:
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds train split size {train_size}")
    steps_per_epoch = train_size // cfg.batch_size
    if steps_per_epoch == 0:
        raise ConfigError("train split smaller than one batch")

    if resume_from is not None:
        state = load_train_checkpoint(resume_from)
        if state.cfg.config_hash() != cfg.config_hash():
            raise ConfigError("resume config does not match checkpoint config")
        start_epoch = state.epoch
    else:
        state = init_state(cfg, steps_per_epoch)
        start_epoch = 0
        decoder_used = cfg.weights.alpha > 0 or cfg.weights.nu > 0
        if decoder_state is not None:
            state.dec.load_state_dict(decoder_state)
            state.decoder_pretrained = True
        elif decoder_used and not cfg.allow_unpretrained_decoder:
            raise ConfigError(
                "decoder has not been pre-trained; run pretrain_decoder first or set "
                "allow_unpretrained_decoder")

    records: list[MetricsRecord] = []
    metrics_file = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        mode = "a" if resume_from is not None else "w"
        metrics_file = open(os.path.join(out_dir, "metrics.jsonl"), mode)
    try:
        for epoch in range(start_epoch, cfg.epochs):
            state.epoch = epoch
            for item_idx, batch, _ in dataset.batches("train", cfg.batch_size, cfg.seed, epoch):
                rec = train_step(state, batch, item_idx, epoch)
                records.append(rec)
                if metrics_file is not None:
                    metrics_file.write(rec.to_json() + "\n")
                    metrics_file.flush()
                if metrics_sink is not None:
                    metrics_sink(rec)
            state.epoch = epoch + 1
            if out_dir is not None and cfg.checkpoint_every > 0 \
                    and (epoch + 1) % cfg.checkpoint_every == 0 and (epoch + 1) < cfg.epochs:
                save_train_checkpoint(os.path.join(out_dir, f"ckpt_epoch_{epoch + 1}.ckpt"), state)
        if out_dir is not None:
            save_train_checkpoint(os.path.join(out_dir, "ckpt_final.ckpt"), state)
    finally:
        if metrics_file is not None:
            metrics_file.close()
    return state, records
