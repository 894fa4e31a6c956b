"""Deterministic seed derivation for independent RNG streams.

Every source of randomness in the package (augmentation, noise draws,
shuffling, parameter init) gets its own stream derived from a root seed
plus a string tag and integer coordinates. Streams are stateless: the
same (root, tag, *coords) always yields the same seed, so training can
resume mid-run without serializing RNG state.
"""

import hashlib

import numpy as np
import torch


def derive_seed(root: int, tag: str, *coords: int) -> int:
    """Map (root seed, tag, coordinates) to a stable 63-bit seed."""
    payload = f"{root}|{tag}|" + "|".join(str(c) for c in coords)
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def np_rng(root: int, tag: str, *coords: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, tag, *coords))


def torch_rng(root: int, tag: str, *coords: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(derive_seed(root, tag, *coords))
    return gen
