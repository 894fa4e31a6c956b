"""Generate a small synthetic fine-grained dataset and inspect it.

Each image is a nuisance background (random texture family, hue,
brightness) plus one class-defining ring glyph whose notch angle and
stroke width vary by class. The `subtlety` knob shrinks the between-class
differences; position and scale of the glyph are random nuisance factors.

Run:  python3 demos/01_synthetic_dataset.py
"""

import os

import numpy as np
from PIL import Image

from fgssl.datagen import DatasetSpec, generate_dataset, load_dataset, to_uint8

OUT = os.path.join(os.path.dirname(__file__), "output", "01_dataset")
os.makedirs(OUT, exist_ok=True)

spec = DatasetSpec(num_classes=4, per_class=24, image_size=64, subtlety=0.3, seed=7)
manifest = generate_dataset(spec, OUT)
ds = load_dataset(manifest)
print(f"wrote {len(ds)} images, {ds.num_classes} classes -> {manifest}")
print(f"train: {len(ds.indices('train'))}  test: {len(ds.indices('test'))}")

# contact sheet: one row per class, six examples each
rows = []
for cls in range(ds.num_classes):
    members = np.flatnonzero(ds.labels == cls)[:6]
    row = np.concatenate([ds.image_float(i) for i in members], axis=2)
    rows.append(row)
sheet = np.concatenate(rows, axis=1)
Image.fromarray(to_uint8(sheet).transpose(1, 2, 0)).save(os.path.join(OUT, "contact_sheet.png"))
print(f"contact sheet -> {os.path.join(OUT, 'contact_sheet.png')}")

# the ground-truth factors make the task trivial in parameter space...
params = np.stack([r.class_params for r in ds.glyph_records])
print("\nper-class glyph parameters (cos notch, sin notch, stroke):")
for cls in range(ds.num_classes):
    print(f"  class {cls}: {params[ds.labels == cls][0].round(3)}")

# ...while raw pixels are dominated by the nuisance background
pixels = ds.images.reshape(len(ds), -1).astype(np.float64)
within = np.mean([pixels[ds.labels == c].std(axis=0).mean() for c in range(4)])
print(f"\nmean within-class pixel std: {within:.1f} (of 255) — background dominates")
