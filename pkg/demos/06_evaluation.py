"""Linear probes at label fractions, retrieval metrics, collapse report.

Uses the checkpoint from demos/04_train_small.py.

Run:  python3 demos/04_train_small.py && python3 demos/06_evaluation.py
"""

import json
import os

import numpy as np

from fgssl.datagen import load_dataset
from fgssl.evalkit import collapse_report, linear_eval, retrieval_eval

HERE = os.path.join(os.path.dirname(__file__), "output")
RUN = os.path.join(HERE, "04_run")
OUT = os.path.join(HERE, "06_eval")
os.makedirs(OUT, exist_ok=True)

manifest = json.load(open(os.path.join(RUN, "dataset_manifest.json")))["manifest"]
dataset = load_dataset(manifest)
ckpt = os.path.join(RUN, "ckpt_final.ckpt")

print("linear probes on frozen features:")
for fraction in (1.0, 0.5, 0.2):
    res = linear_eval(ckpt, dataset, label_fraction=fraction, seed=0)
    print(f"  {int(fraction * 100):3d}% of labels -> top-1 {res.top1:.2f}%")

ret = retrieval_eval(ckpt, dataset)
print(f"retrieval: rank-1 {ret.rank1:.2f}%  rank-5 {ret.rank5:.2f}%  mAP {ret.mAP:.2f}%")

report = collapse_report(ckpt, dataset, out_csv=os.path.join(OUT, "collapse_report.csv"))
s = report["dispersion"]
print(f"collapse report ({len(s)} dims) -> {os.path.join(OUT, 'collapse_report.csv')}")
print(f"  min dispersion {s.min():.4f} at dim {report['argmin_dispersion']}, "
      f"max {s.max():.4f} at dim {report['argmax_dispersion']}")
print(f"  best class-separating dim: {report['argmax_separation']} "
      f"(separation {report['separation'][report['argmax_separation']]:.2f})")
print(f"  dims with dispersion below 0.02: {int(np.sum(s < 0.02))}")
