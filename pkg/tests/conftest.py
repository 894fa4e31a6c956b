import numpy as np
import pytest
import torch

from fgssl.datagen import DatasetSpec, generate_dataset, load_dataset
from fgssl.losses import LossWeights
from fgssl.nets import NetConfig
from fgssl.perturb import NoiseConfig
from fgssl.trainer import TrainConfig, pretrain_decoder, train


def small_net() -> NetConfig:
    return NetConfig(image_size=16, feature_dim=16, proj_dim=8, num_blocks=2)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """4 classes x 12 images at 64x64; shared read-only across tests."""
    root = tmp_path_factory.mktemp("tiny_data")
    manifest = generate_dataset(DatasetSpec(num_classes=4, per_class=12, seed=7), str(root))
    return load_dataset(manifest)


@pytest.fixture(scope="session")
def tiny_dataset16(tmp_path_factory):
    """4 classes x 12 images at 16x16, matching the downscaled networks."""
    root = tmp_path_factory.mktemp("tiny_data16")
    manifest = generate_dataset(
        DatasetSpec(num_classes=4, per_class=12, image_size=16, seed=7), str(root))
    return load_dataset(manifest)


def tiny_train_config(**over) -> TrainConfig:
    defaults = dict(epochs=2, batch_size=4, queue_capacity=32, bank_capacity=16,
                    decoder_epochs=2, seed=1, weights=LossWeights(alpha=1.0, nu=0.5),
                    noise=NoiseConfig(mode="both"))
    defaults.update(over)
    return TrainConfig(**defaults)


@pytest.fixture(scope="session")
def trained_small(tmp_path_factory, tiny_dataset):
    """A short full-method run on the tiny dataset, with checkpoints on disk."""
    out = tmp_path_factory.mktemp("trained_small")
    cfg = tiny_train_config(epochs=3, checkpoint_every=1)
    dec_state, _ = pretrain_decoder(cfg, tiny_dataset)
    state, records = train(cfg, tiny_dataset, out_dir=str(out), decoder_state=dec_state)
    return {"cfg": cfg, "state": state, "records": records, "out": str(out),
            "final": str(out / "ckpt_final.ckpt"), "dataset": tiny_dataset}


def rand_unit_rows(rng: np.random.Generator, rows: int, dim: int) -> torch.Tensor:
    mat = rng.standard_normal((rows, dim))
    mat /= np.linalg.norm(mat, axis=1, keepdims=True)
    return torch.from_numpy(mat)
