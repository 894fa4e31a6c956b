"""Two-view stochastic augmentation: crop, flip, jitter, grayscale, blur.

Every view pair is a pure function of (image, config, seed), so the same
seed always reproduces the same pair — that is what makes training runs
replayable and resumable.

Run:  python3 demos/02_augmentation_views.py
"""

import os

import numpy as np
from PIL import Image

from fgssl.augment import AugmentConfig, identity_config, make_views
from fgssl.datagen import DatasetSpec, render_image, to_uint8

OUT = os.path.join(os.path.dirname(__file__), "output", "02_views")
os.makedirs(OUT, exist_ok=True)

spec = DatasetSpec(num_classes=4, per_class=4, seed=3)
img, _ = render_image(spec, label=2, index=0)

cfg = AugmentConfig()
rows = []
for seed in range(4):
    pair = make_views(img, cfg, seed=seed)
    rows.append(np.concatenate([pair.source, pair.view1, pair.view2], axis=2))
sheet = np.concatenate(rows, axis=1)
Image.fromarray(to_uint8(sheet).transpose(1, 2, 0)).save(os.path.join(OUT, "views.png"))
print(f"source | view1 | view2 for four seeds -> {os.path.join(OUT, 'views.png')}")

pair_a = make_views(img, cfg, seed=11)
pair_b = make_views(img, cfg, seed=11)
print("same seed reproduces the pair exactly:",
      np.array_equal(pair_a.view1, pair_b.view1))

ident = make_views(img, identity_config(), seed=0)
print("identity config returns the source unchanged:",
      np.array_equal(ident.view1, img) and np.array_equal(ident.view2, img))
