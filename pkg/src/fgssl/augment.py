"""Stochastic two-view augmentation pipeline on [0,1] float arrays.

Transform chain: random resized crop, horizontal flip, color jitter,
random grayscale, gaussian blur. Every call derives all randomness from
an explicit seed so a view pair is a pure function of (image, config,
seed); no global RNG state is consulted.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .seeding import np_rng


@dataclass(frozen=True)
class AugmentConfig:
    crop_enabled: bool = True
    crop_scale: tuple[float, float] = (0.5, 1.0)
    crop_ratio: tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0)
    flip_prob: float = 0.5
    jitter_enabled: bool = True
    jitter_prob: float = 0.8
    jitter_brightness: float = 0.4
    jitter_contrast: float = 0.4
    jitter_saturation: float = 0.4
    jitter_hue: float = 0.1
    grayscale_prob: float = 0.2
    blur_enabled: bool = True
    blur_prob: float = 0.5
    blur_sigma: tuple[float, float] = (0.1, 2.0)

    def validate(self) -> None:
        for name in ("flip_prob", "jitter_prob", "grayscale_prob", "blur_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {p}")
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"crop_scale must be within (0,1], got {self.crop_scale}")


@dataclass(frozen=True)
class ViewPair:
    view1: np.ndarray
    view2: np.ndarray
    source: np.ndarray


def identity_config() -> AugmentConfig:
    """A configuration under which both views equal the source exactly."""
    return AugmentConfig(crop_scale=(1.0, 1.0), flip_prob=0.0, jitter_prob=0.0,
                         grayscale_prob=0.0, blur_prob=0.0)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a C x h x w array (pixel-center aligned)."""
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    a = img[:, y0[:, None], x0[None, :]]
    b = img[:, y0[:, None], x1[None, :]]
    cc = img[:, y1[:, None], x0[None, :]]
    d = img[:, y1[:, None], x1[None, :]]
    out = a * (1 - wy) * (1 - wx) + b * (1 - wy) * wx + cc * wy * (1 - wx) + d * wy * wx
    return out.astype(img.dtype)


def _random_resized_crop(img: np.ndarray, cfg: AugmentConfig, rng) -> np.ndarray:
    c, h, w = img.shape
    area = h * w
    for _ in range(10):
        scale = rng.uniform(*cfg.crop_scale)
        log_ratio = rng.uniform(math.log(cfg.crop_ratio[0]), math.log(cfg.crop_ratio[1]))
        ratio = math.exp(log_ratio)
        cw = int(round(math.sqrt(area * scale * ratio)))
        ch = int(round(math.sqrt(area * scale / ratio)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            if ch == h and cw == w:
                return img.copy()
            crop = img[:, top:top + ch, left:left + cw]
            return resize_bilinear(crop, h, w)
    # Degenerate sampling: fall back to the full frame, never an empty crop.
    return img.copy()


def _rgb_to_hsv(img: np.ndarray):
    r, g, b = img
    maxc = np.max(img, axis=0)
    minc = np.min(img, axis=0)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.maximum(maxc, 1e-12), 0.0)
    safe = np.maximum(delta, 1e-12)
    h = np.where(maxc == r, ((g - b) / safe) % 6.0,
                 np.where(maxc == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0))
    h = np.where(delta > 0, h / 6.0, 0.0)
    return h, s, v


def _hsv_to_rgb(h, s, v):
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    choices = [np.stack([v, t, p]), np.stack([q, v, p]), np.stack([p, v, t]),
               np.stack([p, q, v]), np.stack([t, p, v]), np.stack([v, p, q])]
    out = np.choose(i[None], choices)
    return out


def _luma(img: np.ndarray) -> np.ndarray:
    return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]


def _color_jitter(img: np.ndarray, cfg: AugmentConfig, rng) -> np.ndarray:
    out = img
    if cfg.jitter_brightness > 0:
        factor = rng.uniform(max(0.0, 1 - cfg.jitter_brightness), 1 + cfg.jitter_brightness)
        out = out * factor
    if cfg.jitter_contrast > 0:
        factor = rng.uniform(max(0.0, 1 - cfg.jitter_contrast), 1 + cfg.jitter_contrast)
        mean = _luma(np.clip(out, 0, 1)).mean()
        out = mean + (out - mean) * factor
    if cfg.jitter_saturation > 0:
        factor = rng.uniform(max(0.0, 1 - cfg.jitter_saturation), 1 + cfg.jitter_saturation)
        gray = _luma(np.clip(out, 0, 1))[None]
        out = gray + (out - gray) * factor
    if cfg.jitter_hue > 0:
        shift = rng.uniform(-cfg.jitter_hue, cfg.jitter_hue)
        h, s, v = _rgb_to_hsv(np.clip(out, 0, 1))
        out = _hsv_to_rgb(h + shift, s, v)
    return np.clip(out, 0.0, 1.0)


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    out = ndimage.gaussian_filter1d(img, sigma, axis=1, mode="nearest")
    out = ndimage.gaussian_filter1d(out, sigma, axis=2, mode="nearest")
    return np.clip(out, 0.0, 1.0)


def augment_once(img: np.ndarray, cfg: AugmentConfig, rng) -> np.ndarray:
    out = img.astype(np.float32)
    if cfg.crop_enabled:
        out = _random_resized_crop(out, cfg, rng)
    if rng.uniform() < cfg.flip_prob:
        out = out[:, :, ::-1]
    if cfg.jitter_enabled and rng.uniform() < cfg.jitter_prob:
        out = _color_jitter(out, cfg, rng)
    if rng.uniform() < cfg.grayscale_prob:
        out = np.broadcast_to(_luma(out)[None], out.shape)
    if cfg.blur_enabled and rng.uniform() < cfg.blur_prob:
        sigma = rng.uniform(*cfg.blur_sigma)
        out = _gaussian_blur(np.ascontiguousarray(out), sigma)
    return np.ascontiguousarray(np.clip(out, 0.0, 1.0), dtype=np.float32)


def make_views(x: np.ndarray, cfg: AugmentConfig, seed: int) -> ViewPair:
    """Two independent augmentations of x plus the untouched source."""
    cfg.validate()
    if x.ndim != 3 or x.shape[0] != 3:
        raise ValueError(f"expected 3xHxW image, got shape {x.shape}")
    rng = np_rng(seed, "views")
    v1 = augment_once(x, cfg, rng)
    v2 = augment_once(x, cfg, rng)
    return ViewPair(view1=v1, view2=v2, source=x.astype(np.float32).copy())


def make_view_batch(images: np.ndarray, cfg: AugmentConfig, root_seed: int,
                    epoch: int, item_indices: np.ndarray):
    """Vectorized helper: per-item seeds derive from (root_seed, epoch, index)."""
    from .seeding import derive_seed as _ds
    v1 = np.empty_like(images, dtype=np.float32)
    v2 = np.empty_like(images, dtype=np.float32)
    for row, item in enumerate(item_indices):
        pair = make_views(images[row], cfg, _ds(root_seed, "aug", epoch, int(item)))
        v1[row] = pair.view1
        v2[row] = pair.view2
    return v1, v2, images.astype(np.float32)
