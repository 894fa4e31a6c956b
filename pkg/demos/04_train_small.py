"""Train the full method briefly on a small synthetic set.

Pipeline: pre-train the decoder against the frozen random-init encoder,
then run the main loop (momentum contrast + reconstruction + perturbed
generated pairs). The checkpoint and metrics land in demos/output and
are reused by the saliency/evaluation demos.

Run:  python3 demos/04_train_small.py        (~2 minutes on CPU)
"""

import json
import os

from fgssl.datagen import DatasetSpec, generate_dataset, load_dataset
from fgssl.losses import LossWeights
from fgssl.perturb import NoiseConfig
from fgssl.trainer import TrainConfig, decoder_recon_mse, pretrain_decoder, train

OUT = os.path.join(os.path.dirname(__file__), "output", "04_run")
DATA = os.path.join(os.path.dirname(__file__), "output", "04_data")
os.makedirs(OUT, exist_ok=True)

spec = DatasetSpec(num_classes=4, per_class=60, image_size=64, subtlety=0.3, seed=9)
dataset = load_dataset(generate_dataset(spec, DATA))
print(f"dataset: {len(dataset)} images, {dataset.num_classes} classes")

cfg = TrainConfig(epochs=6, batch_size=16, queue_capacity=256, bank_capacity=128,
                  decoder_epochs=10, seed=0, checkpoint_every=3,
                  weights=LossWeights(alpha=1.0, nu=0.5),
                  noise=NoiseConfig(eps_g=0.1, eps_var=0.05, kappa=0.02, mode="both"))

print("pre-training decoder...")
dec_state, history = pretrain_decoder(cfg, dataset)
print(f"  train-MSE curve: {history[0]:.4f} -> {history[-1]:.4f}")
print(f"  held-out MSE: {decoder_recon_mse(cfg, dataset, dec_state):.4f}")

print("training encoder...")
state, records = train(cfg, dataset, out_dir=OUT, decoder_state=dec_state)
per_epoch = {}
for rec in records:
    per_epoch.setdefault(rec.epoch, []).append(rec.total)
for epoch, totals in per_epoch.items():
    print(f"  epoch {epoch}: mean total {sum(totals) / len(totals):.3f}")

print(f"checkpoint -> {os.path.join(OUT, 'ckpt_final.ckpt')}")
print(f"metrics    -> {os.path.join(OUT, 'metrics.jsonl')}")
with open(os.path.join(OUT, "dataset_manifest.json"), "w") as fh:
    json.dump({"manifest": os.path.join(DATA, "manifest.csv")}, fh)
