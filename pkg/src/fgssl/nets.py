"""Encoder, projection head, decoder, and momentum (key) copies.

The encoder is a stack of conv -> batchnorm -> ReLU -> 2x2 maxpool blocks
followed by global average pooling; the decoder mirrors it with a linear
expansion and transposed-conv upsampling, ending in a sigmoid so outputs
live in [0,1]. Channel widths double per block and end at the feature
dimension, so `num_blocks` and `feature_dim` fully determine both shapes.
"""


from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


class NumericError(Exception):
    """Raised when activations or losses go non-finite."""


@dataclass(frozen=True)
class NetConfig:
    image_size: int = 64
    feature_dim: int = 128   # n, the latent feature dimension
    proj_dim: int = 64       # k, the representation dimension
    num_blocks: int = 4
    proj_layers: int = 2

    def validate(self) -> None:
        if self.image_size % (2 ** self.num_blocks) != 0:
            raise ValueError(f"image_size {self.image_size} not divisible by 2^{self.num_blocks}")
        if self.feature_dim % (2 ** (self.num_blocks - 1)) != 0:
            raise ValueError("feature_dim must be divisible by 2^(num_blocks-1)")

    @property
    def bottleneck_size(self) -> int:
        return self.image_size // (2 ** self.num_blocks)

    @property
    def channels(self) -> list[int]:
        return [self.feature_dim // (2 ** (self.num_blocks - 1 - i)) for i in range(self.num_blocks)]


class Encoder(nn.Module):
    """Conv feature extractor f: B x 3 x H x W -> B x n.

    The final block's conv is left un-normalized: batchnorm forces every
    channel to vary across a batch, which would make dimensional collapse
    (near-constant feature dimensions) structurally impossible, and the
    low-dispersion diagnostic depends on collapse being observable.
    """

    def __init__(self, cfg: NetConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        blocks = []
        in_ch = 3
        for i, out_ch in enumerate(cfg.channels):
            last = i == cfg.num_blocks - 1
            layers = [nn.Conv2d(in_ch, out_ch, 3, padding=1)]
            if not last:
                layers.append(nn.BatchNorm2d(out_ch))
            layers += [nn.ReLU(inplace=True), nn.AvgPool2d(2)]
            blocks.append(nn.Sequential(*layers))
            in_ch = out_ch
        self.blocks = nn.ModuleList(blocks)

    def forward_features(self, x: torch.Tensor):
        """Returns (features, last-conv activation map before final pooling)."""
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected B x 3 x H x W input, got {tuple(x.shape)}")
        out = x
        for block in self.blocks[:-1]:
            out = block(out)
        last = self.blocks[-1]
        act = last[:-1](out)                   # everything before the final pool
        pooled = last[-1](act)
        feats = pooled.mean(dim=(2, 3))
        return feats, act

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward_features(x)[0]


class Projector(nn.Module):
    """MLP head g: B x n -> B x k."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        if cfg.proj_layers == 1:
            self.net = nn.Linear(cfg.feature_dim, cfg.proj_dim)
        else:
            self.net = nn.Sequential(
                nn.Linear(cfg.feature_dim, cfg.feature_dim),
                nn.ReLU(inplace=True),
                nn.Linear(cfg.feature_dim, cfg.proj_dim),
            )

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        return self.net(v)


class Decoder(nn.Module):
    """Generator h: B x n -> B x 3 x H x W with outputs squashed to [0,1]."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        s = cfg.bottleneck_size
        chans = list(reversed(cfg.channels))           # widest first
        self.fc = nn.Linear(cfg.feature_dim, chans[0] * s * s)
        ups = []
        for i in range(cfg.num_blocks):
            out_ch = chans[i + 1] if i + 1 < len(chans) else chans[-1]
            ups.append(nn.Sequential(
                nn.ConvTranspose2d(chans[i] if i < len(chans) else chans[-1], out_ch, 4, stride=2, padding=1),
                nn.BatchNorm2d(out_ch),
                nn.ReLU(inplace=True),
            ))
        self.ups = nn.ModuleList(ups)
        self.head = nn.Conv2d(chans[-1], 3, 3, padding=1)

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(v.detach()).all():
            raise NumericError("decoder received non-finite features")
        s = self.cfg.bottleneck_size
        out = self.fc(v).reshape(v.shape[0], -1, s, s)
        for block in self.ups:
            out = block(out)
        return torch.sigmoid(self.head(out))


def build_networks(cfg: NetConfig, seed: int):
    """Construct (encoder_q, projector_q, encoder_k, projector_k, decoder).

    Key copies start as exact clones of the query networks and never
    receive gradients; they evolve only through momentum_update.
    """
    from .seeding import derive_seed
    torch.manual_seed(derive_seed(seed, "init"))
    enc_q, proj_q = Encoder(cfg), Projector(cfg)
    dec = Decoder(cfg)
    enc_k, proj_k = Encoder(cfg), Projector(cfg)
    enc_k.load_state_dict(enc_q.state_dict())
    proj_k.load_state_dict(proj_q.state_dict())
    for p in list(enc_k.parameters()) + list(proj_k.parameters()):
        p.requires_grad_(False)
    return enc_q, proj_q, enc_k, proj_k, dec


def encode(encoder: Encoder, batch: torch.Tensor, mode: str = "eval") -> torch.Tensor:
    """Run the encoder in the requested mode and check output health."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    was_training = encoder.training
    encoder.train(mode == "train")
    try:
        feats = encoder(batch)
    finally:
        encoder.train(was_training)
    if not torch.isfinite(feats.detach()).all():
        raise NumericError("encoder produced non-finite activations")
    return feats


def project(projector: Projector, feats: torch.Tensor, normalize: bool = True) -> torch.Tensor:
    reps = projector(feats)
    if normalize:
        reps = F.normalize(reps, dim=1, eps=1e-12)
    return reps


def decode(decoder: Decoder, feats: torch.Tensor) -> torch.Tensor:
    return decoder(feats)


@torch.no_grad()
def momentum_update(key: nn.Module, query: nn.Module, key_momentum: float) -> None:
    """key <- m * key + (1 - m) * query, elementwise over parameters."""
    if not 0.0 <= key_momentum <= 1.0:
        raise ValueError(f"key_momentum must be in [0,1], got {key_momentum}")
    q_params = dict(query.named_parameters())
    for name, p_k in key.named_parameters():
        p_q = q_params.get(name)
        if p_q is None or p_q.shape != p_k.shape:
            raise ValueError(f"parameter mismatch for {name!r}")
        p_k.mul_(key_momentum).add_(p_q, alpha=1.0 - key_momentum)


def param_vector(module: nn.Module) -> torch.Tensor:
    """Flat copy of all parameters (used for equality/probe checks)."""
    with torch.no_grad():
        return torch.cat([p.reshape(-1).clone() for p in module.parameters()])


def count_params(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
