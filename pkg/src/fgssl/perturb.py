"""Feature memory bank, per-dimension dispersion, and guided noise.

The bank is a FIFO ring of recent (detached) feature vectors. Dispersion
of a dimension is the total squared deviation of its L2-normalized bank
column: 0 for a collapsed (constant) dimension, approaching 1 when the
column's mass concentrates on a single sample. Noise standard deviations
shrink with saliency (guarding discriminative dimensions) and with
normalized dispersion (noising only sub-threshold, low-spread ones).
"""

from dataclasses import dataclass

import torch

NOISE_MODES = ("both", "gradcam_only", "lowvar_only", "random_all", "none")


@dataclass(frozen=True)
class NoiseConfig:
    eps_g: float = 0.1
    eps_var: float = 0.05
    kappa: float = 0.02
    mode: str = "both"

    def validate(self) -> None:
        if self.eps_g < 0 or self.eps_var < 0:
            raise ValueError("noise scales must be >= 0")
        if self.mode not in NOISE_MODES:
            raise ValueError(f"mode must be one of {NOISE_MODES}, got {self.mode!r}")


class FeatureBank:
    """Fixed-capacity FIFO ring of feature vectors (oldest rows overwritten)."""

    def __init__(self, capacity: int, dim: int, dtype: torch.dtype = torch.float32):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.dim = dim
        self.storage = torch.zeros(capacity, dim, dtype=dtype)
        self.cursor = 0
        self.fill = 0

    def push(self, feats: torch.Tensor) -> None:
        feats = feats.detach().to(self.storage.dtype)
        n = feats.shape[0]
        if n > self.capacity:
            raise ValueError(f"batch of {n} exceeds capacity {self.capacity}")
        if feats.shape[1] != self.dim:
            raise ValueError(f"expected dim {self.dim}, got {feats.shape[1]}")
        first = min(n, self.capacity - self.cursor)
        self.storage[self.cursor:self.cursor + first] = feats[:first]
        if first < n:
            self.storage[:n - first] = feats[first:]
        self.cursor = (self.cursor + n) % self.capacity
        self.fill = min(self.capacity, self.fill + n)

    def rows(self) -> torch.Tensor:
        """The filled rows, in storage order (read-only snapshot)."""
        return self.storage[:self.fill].clone()

    def state_dict(self) -> dict:
        return {"storage": self.storage.clone(), "cursor": self.cursor, "fill": self.fill}

    def load_state_dict(self, state: dict) -> None:
        if state["storage"].shape != self.storage.shape:
            raise ValueError("bank shape mismatch on load")
        self.storage.copy_(state["storage"])
        self.cursor = int(state["cursor"])
        self.fill = int(state["fill"])


def dispersion_from_matrix(mat: torch.Tensor) -> torch.Tensor:
    """Total squared deviation of each L2-normalized column of mat.

    For column w with ||w|| = 1 over f rows this equals 1 - f * mean(w)^2,
    which lies in [0, 1 - 1/f]; all-zero columns score 0.
    """
    if mat.dim() != 2 or mat.shape[0] < 2:
        raise ValueError(f"need at least 2 rows, got shape {tuple(mat.shape)}")
    f = mat.shape[0]
    norms = mat.norm(dim=0)
    safe = torch.where(norms > 0, norms, torch.ones_like(norms))
    normed = mat / safe
    mean = normed.mean(dim=0)
    s = 1.0 - f * mean * mean
    s = torch.where(norms > 0, s, torch.zeros_like(s))
    return s.clamp_(min=0.0)


def dispersion_scores(bank: FeatureBank) -> torch.Tensor:
    """Per-dimension dispersion over the filled bank rows."""
    if bank.fill < 2:
        raise ValueError(f"bank holds {bank.fill} rows; need at least 2")
    return dispersion_from_matrix(bank.storage[:bank.fill])


def masking_statistic(dispersion: torch.Tensor, rows: int) -> torch.Tensor:
    """Per-entry variance of the normalized column: dispersion / (rows - 1).

    This is the statistic the kappa threshold is compared against when
    deciding which dimensions receive variance-guided noise. Dispersion
    (total squared deviation) and this statistic differ by a constant
    factor, so min-max-normalized profiles are identical; only the
    threshold semantics change.
    """
    if rows < 2:
        raise ValueError(f"need at least 2 rows, got {rows}")
    return dispersion / (rows - 1)


def sample_gradcam_noise(eta_bar: torch.Tensor, eps_g: float,
                         rng: torch.Generator) -> torch.Tensor:
    """Zero-mean gaussian per dimension with std eps_g * (1 - eta_bar)."""
    if eps_g < 0:
        raise ValueError(f"eps_g must be >= 0, got {eps_g}")
    detached = eta_bar.detach()
    if (detached < 0).any() or (detached > 1).any():
        raise ValueError("eta_bar must lie in [0,1]")
    std = eps_g * (1.0 - detached)
    return torch.randn(detached.shape, generator=rng, dtype=detached.dtype) * std


def sample_variance_noise(s: torch.Tensor, s_bar: torch.Tensor, cfg: NoiseConfig,
                          rng: torch.Generator, batch_size: int = 1) -> torch.Tensor:
    """Gaussian with std eps_var * (1 - s_bar) on dims where s < kappa, else 0."""
    cfg.validate()
    if s.shape != s_bar.shape or s.dim() != 1:
        raise ValueError("s and s_bar must be 1-D and the same length")
    mask = (s.detach() < cfg.kappa).to(s.dtype)
    std = cfg.eps_var * (1.0 - s_bar.detach()) * mask
    draws = torch.randn((batch_size, s.shape[0]), generator=rng, dtype=s.dtype)
    return draws * std.unsqueeze(0)


def perturb_features(v: torch.Tensor, noise_g: torch.Tensor | None,
                     noise_var: torch.Tensor | None, cfg: NoiseConfig,
                     rng: torch.Generator | None = None) -> torch.Tensor:
    """Apply the configured combination of noise vectors to v (detached)."""
    cfg.validate()
    base = v.detach()
    if cfg.mode == "none":
        return base.clone()
    if cfg.mode == "random_all":
        if rng is None:
            raise ValueError("random_all mode needs an rng")
        return base + torch.randn(base.shape, generator=rng, dtype=base.dtype) * cfg.eps_g
    if cfg.mode in ("both", "gradcam_only") and noise_g is None:
        raise ValueError(f"mode {cfg.mode!r} requires gradcam noise")
    if cfg.mode in ("both", "lowvar_only") and noise_var is None:
        raise ValueError(f"mode {cfg.mode!r} requires variance noise")
    out = base.clone()
    if cfg.mode in ("both", "gradcam_only"):
        out = out + noise_g.detach()
    if cfg.mode in ("both", "lowvar_only"):
        out = out + noise_var.detach()
    return out
