"""Self-supervised fine-grained representation learning with synthesized
contrastive pairs: contrastive pre-training plus pairs decoded from
original and selectively perturbed feature vectors, where perturbation
targets non-discriminative dimensions found via gradient saliency and
low cross-dataset dispersion."""

__version__ = "0.1.0"

from .augment import AugmentConfig, ViewPair, make_views
from .datagen import Dataset, DatasetSpec, generate_dataset, load_dataset
from .losses import LossWeights, TemperatureConfig, info_nce_batch, info_nce_queue, \
    recon_loss, total_loss
from .nets import Decoder, Encoder, NetConfig, Projector, build_networks, decode, \
    encode, momentum_update, project
from .perturb import FeatureBank, NoiseConfig, dispersion_scores, perturb_features, \
    sample_gradcam_noise, sample_variance_noise
from .saliency import gradcam_feature_scores, min_max_normalize, spatial_attention_map
from .trainer import MetricsRecord, TrainConfig, pretrain_decoder, train, train_step
