"""Procedural fine-grained dataset generation and manifest-based loading.

The generator writes small PNG images where the class identity lives in a
single glyph (a ring with a class-specific notch angle and stroke width)
placed at a random position and scale on top of a nuisance background
(random texture family, hue, brightness). The `subtlety` knob scales how
far apart the class-defining glyph parameters are, so low subtlety means
classes that are nearly identical except for a small local pattern.

Any dataset laid out as PNG files plus a `path,label,split` CSV manifest
can be loaded; the generator is just one producer of that layout.
"""

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .seeding import np_rng

MANIFEST_NAME = "manifest.csv"
GLYPH_PARAMS_NAME = "glyph_params.csv"

# Background families; brightness is kept above the glyph intensity range
# so the glyph is visible on every texture.
_BG_FAMILIES = ("stripes", "blobs", "gradient", "checker")
_BG_LO, _BG_HI = 0.40, 1.0
_GLYPH_LO, _GLYPH_HI = 0.0, 0.28
_NOTCH_WIDTH = 0.55  # radians
_TEST_FRACTION = 0.2


class DataError(Exception):
    """Raised for malformed manifests, missing files, or bad labels."""


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int
    per_class: int
    image_size: int = 64
    subtlety: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.per_class < 2:
            raise ValueError(f"per_class must be >= 2, got {self.per_class}")
        if not 0.0 <= self.subtlety <= 1.0:
            raise ValueError(f"subtlety must be in [0,1], got {self.subtlety}")
        if self.image_size < 16:
            raise ValueError(f"image_size must be >= 16, got {self.image_size}")


@dataclass(frozen=True)
class ManifestRow:
    path: str
    label: int
    split: str


@dataclass
class GlyphRecord:
    """Ground-truth glyph factors for one generated image."""

    path: str
    label: int
    cos_notch: float
    sin_notch: float
    rel_thickness: float
    cx: float
    cy: float
    radius: float
    thickness: float
    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def class_params(self) -> np.ndarray:
        """The class-defining parameter vector (nuisance factors excluded)."""
        return np.array([self.cos_notch, self.sin_notch, self.rel_thickness])

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)


def _hsv_to_rgb(h, s, v):
    h = (h % 1.0) * 6.0
    i = np.floor(h)
    f = h - i
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    i = int(i) % 6
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


def _bg_colors(rng):
    h = rng.uniform()
    c1 = np.array(_hsv_to_rgb(h, rng.uniform(0.2, 0.8), rng.uniform(0.6, 1.0)))
    c2 = np.array(_hsv_to_rgb(h + rng.uniform(0.1, 0.5), rng.uniform(0.2, 0.8), rng.uniform(0.4, 0.9)))
    return c1, c2


def _render_background(size: int, rng) -> np.ndarray:
    family = _BG_FAMILIES[rng.integers(0, len(_BG_FAMILIES))]
    c1, c2 = _bg_colors(rng)
    yy, xx = np.mgrid[0:size, 0:size] / size

    if family == "stripes":
        theta = rng.uniform(0, math.pi)
        freq = rng.uniform(2.0, 6.0)
        phase = rng.uniform(0, 2 * math.pi)
        wave = 0.5 + 0.5 * np.sin(2 * math.pi * freq * (xx * math.cos(theta) + yy * math.sin(theta)) + phase)
        mix = wave
    elif family == "blobs":
        grid = rng.uniform(size=(5, 5))
        mix = _bilinear_upsample(grid, size)
    elif family == "gradient":
        theta = rng.uniform(0, 2 * math.pi)
        proj = xx * math.cos(theta) + yy * math.sin(theta)
        proj = (proj - proj.min()) / (proj.max() - proj.min() + 1e-12)
        mix = proj
    else:  # checker
        cell = int(rng.choice([8, 16, 32]))
        ox, oy = rng.integers(0, cell, size=2)
        mix = ((((np.mgrid[0:size, 0:size][1] + ox) // cell) + ((np.mgrid[0:size, 0:size][0] + oy) // cell)) % 2).astype(float)

    img = mix[None] * c1[:, None, None] + (1 - mix)[None] * c2[:, None, None]
    brightness = rng.uniform(0.7, 1.0)
    img = _BG_LO + (_BG_HI - _BG_LO) * img * brightness
    return np.clip(img, 0.0, 1.0)


def _bilinear_upsample(grid: np.ndarray, size: int) -> np.ndarray:
    gh, gw = grid.shape
    ys = np.linspace(0, gh - 1, size)
    xs = np.linspace(0, gw - 1, size)
    y0 = np.clip(np.floor(ys).astype(int), 0, gh - 2)
    x0 = np.clip(np.floor(xs).astype(int), 0, gw - 2)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    a = grid[np.ix_(y0, x0)]
    b = grid[np.ix_(y0, x0 + 1)]
    c = grid[np.ix_(y0 + 1, x0)]
    d = grid[np.ix_(y0 + 1, x0 + 1)]
    return a * (1 - wy) * (1 - wx) + b * (1 - wy) * wx + c * wy * (1 - wx) + d * wy * wx


def class_glyph_params(label: int, num_classes: int, subtlety: float) -> tuple[float, float]:
    """Class-defining (notch angle, relative stroke thickness).

    Parameter spread scales linearly with subtlety; at subtlety=0 all
    classes share one glyph, at subtlety=1 notch angles span the circle.
    """
    notch = math.pi / 2 + subtlety * 2 * math.pi * (label / num_classes - 0.5)
    rel_thickness = 0.26 + 0.12 * subtlety * ((label % 3) - 1)
    return notch, rel_thickness


def _render_glyph(size: int, notch: float, rel_thickness: float, rng):
    """Draw the ring glyph; returns (alpha mask, glyph rgb, GlyphRecord fields)."""
    radius = rng.uniform(0.18, 0.28) * size
    thickness = rel_thickness * radius
    margin = radius + thickness / 2 + 2
    cx = rng.uniform(margin, size - margin)
    cy = rng.uniform(margin, size - margin)

    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    r = np.hypot(xx - cx, yy - cy)
    ring = np.clip((thickness / 2 - np.abs(r - radius)) + 0.5, 0.0, 1.0)

    ang = np.arctan2(yy - cy, xx - cx)
    delta = np.angle(np.exp(1j * (ang - notch)))
    notch_mask = np.clip((np.abs(delta) - _NOTCH_WIDTH / 2) / 0.08, 0.0, 1.0)
    alpha = ring * notch_mask

    value = rng.uniform(_GLYPH_LO, _GLYPH_HI)
    color = np.full(3, value) + rng.uniform(-0.02, 0.02, size=3)
    color = np.clip(color, 0.0, 1.0)

    x0 = max(0, int(math.floor(cx - radius - thickness / 2 - 1)))
    y0 = max(0, int(math.floor(cy - radius - thickness / 2 - 1)))
    x1 = min(size, int(math.ceil(cx + radius + thickness / 2 + 1)))
    y1 = min(size, int(math.ceil(cy + radius + thickness / 2 + 1)))
    return alpha, color, (cx, cy, radius, thickness, (x0, y0, x1, y1))


def render_image(spec: DatasetSpec, label: int, index: int) -> tuple[np.ndarray, GlyphRecord]:
    """Render one image deterministically from (spec.seed, label, index)."""
    rng = np_rng(spec.seed, "img", label, index)
    bg = _render_background(spec.image_size, rng)
    notch, rel_t = class_glyph_params(label, spec.num_classes, spec.subtlety)
    alpha, color, (cx, cy, radius, thickness, bbox) = _render_glyph(spec.image_size, notch, rel_t, rng)
    img = bg * (1 - alpha[None]) + color[:, None, None] * alpha[None]
    rec = GlyphRecord(
        path="", label=label,
        cos_notch=math.cos(notch), sin_notch=math.sin(notch), rel_thickness=rel_t,
        cx=cx, cy=cy, radius=radius, thickness=thickness,
        x0=bbox[0], y0=bbox[1], x1=bbox[2], y1=bbox[3],
    )
    return np.clip(img, 0.0, 1.0).astype(np.float32), rec


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def _save_png(img: np.ndarray, path: str) -> None:
    arr = to_uint8(img).transpose(1, 2, 0)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def _split_of(index: int, per_class: int) -> str:
    n_test = max(1, round(per_class * _TEST_FRACTION))
    return "test" if index >= per_class - n_test else "train"


def generate_dataset(spec: DatasetSpec, out_dir: str) -> str:
    """Write the dataset under out_dir; returns the manifest path.

    Layout: out_dir/images/cXX_iYYYY.png, out_dir/manifest.csv and
    out_dir/glyph_params.csv (ground-truth factors, one row per image).
    Byte-identical across runs for identical (spec, out content).
    """
    spec.validate()
    img_dir = os.path.join(out_dir, "images")
    try:
        os.makedirs(img_dir, exist_ok=True)
        probe = os.path.join(out_dir, ".write_probe")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as exc:
        raise DataError(f"output directory not writable: {out_dir}: {exc}") from exc

    rows: list[ManifestRow] = []
    records: list[GlyphRecord] = []
    for label in range(spec.num_classes):
        for index in range(spec.per_class):
            rel = f"images/c{label:02d}_i{index:04d}.png"
            img, rec = render_image(spec, label, index)
            _save_png(img, os.path.join(out_dir, rel))
            rec.path = rel
            rows.append(ManifestRow(rel, label, _split_of(index, spec.per_class)))
            records.append(rec)

    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label", "split"])
        for row in rows:
            writer.writerow([row.path, row.label, row.split])

    with open(os.path.join(out_dir, GLYPH_PARAMS_NAME), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label", "cos_notch", "sin_notch", "rel_thickness",
                         "cx", "cy", "radius", "thickness", "x0", "y0", "x1", "y1"])
        for rec in records:
            writer.writerow([rec.path, rec.label,
                             repr(rec.cos_notch), repr(rec.sin_notch), repr(rec.rel_thickness),
                             repr(rec.cx), repr(rec.cy), repr(rec.radius), repr(rec.thickness),
                             rec.x0, rec.y0, rec.x1, rec.y1])
    return manifest_path


def read_manifest(manifest_path: str) -> list[ManifestRow]:
    if not os.path.exists(manifest_path):
        raise DataError(f"manifest not found: {manifest_path}")
    rows: list[ManifestRow] = []
    with open(manifest_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["path", "label", "split"]:
            raise DataError(f"bad manifest header in {manifest_path}: {header}")
        for line in reader:
            if len(line) != 3:
                raise DataError(f"bad manifest row in {manifest_path}: {line}")
            path, label, split = line
            if split not in ("train", "test"):
                raise DataError(f"bad split {split!r} for {path}")
            rows.append(ManifestRow(path, int(label), split))
    if not rows:
        raise DataError(f"empty manifest: {manifest_path}")
    return rows


@dataclass
class Dataset:
    """In-memory image dataset with split views and seeded batch order."""

    root: str
    images: np.ndarray          # N x 3 x H x W uint8
    labels: np.ndarray          # N int64
    splits: np.ndarray          # N of {"train","test"}
    paths: list[str]
    glyph_records: list[GlyphRecord] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def image_size(self) -> int:
        return self.images.shape[-1]

    def __len__(self) -> int:
        return len(self.labels)

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.splits == split)

    def image_float(self, index: int) -> np.ndarray:
        return self.images[index].astype(np.float32) / 255.0

    def batch_float(self, indices: np.ndarray) -> np.ndarray:
        return self.images[indices].astype(np.float32) / 255.0

    def epoch_order(self, split: str, seed: int, epoch: int) -> np.ndarray:
        """Shuffled index order for one epoch; a pure function of (seed, epoch)."""
        idx = self.indices(split)
        return idx[np_rng(seed, "shuffle", epoch).permutation(len(idx))]

    def batches(self, split: str, batch_size: int, seed: int, epoch: int = 0,
                drop_last: bool = True):
        order = self.epoch_order(split, seed, epoch)
        stop = len(order) - (len(order) % batch_size) if drop_last else len(order)
        for start in range(0, stop, batch_size):
            chunk = order[start:start + batch_size]
            if chunk.size:
                yield chunk, self.batch_float(chunk), self.labels[chunk]


def load_dataset(manifest_path: str) -> Dataset:
    """Load every image referenced by the manifest into memory."""
    rows = read_manifest(manifest_path)
    root = os.path.dirname(os.path.abspath(manifest_path))
    num_classes = max(r.label for r in rows) + 1

    images, labels, splits, paths = [], [], [], []
    for row in rows:
        full = os.path.join(root, row.path)
        if not os.path.exists(full):
            raise DataError(f"image file missing: {full}")
        if not 0 <= row.label < num_classes:
            raise DataError(f"label {row.label} out of range for {row.path}")
        try:
            with Image.open(full) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except Exception as exc:
            raise DataError(f"corrupt image: {full}: {exc}") from exc
        images.append(arr.transpose(2, 0, 1))
        labels.append(row.label)
        splits.append(row.split)
        paths.append(row.path)

    splits_arr = np.array(splits)
    for split in ("train", "test"):
        if not (splits_arr == split).any():
            raise DataError(f"split {split!r} is empty in {manifest_path}")

    ds = Dataset(root=root, images=np.stack(images), labels=np.array(labels, dtype=np.int64),
                 splits=splits_arr, paths=paths)
    ds.glyph_records = _load_glyph_records(root, paths)
    return ds


def _load_glyph_records(root: str, paths: list[str]) -> list[GlyphRecord]:
    sidecar = os.path.join(root, GLYPH_PARAMS_NAME)
    if not os.path.exists(sidecar):
        return []
    by_path = {}
    with open(sidecar, newline="") as fh:
        for row in csv.DictReader(fh):
            by_path[row["path"]] = GlyphRecord(
                path=row["path"], label=int(row["label"]),
                cos_notch=float(row["cos_notch"]), sin_notch=float(row["sin_notch"]),
                rel_thickness=float(row["rel_thickness"]),
                cx=float(row["cx"]), cy=float(row["cy"]),
                radius=float(row["radius"]), thickness=float(row["thickness"]),
                x0=int(row["x0"]), y0=int(row["y0"]), x1=int(row["x1"]), y1=int(row["y1"]),
            )
    return [by_path[p] for p in paths if p in by_path]
