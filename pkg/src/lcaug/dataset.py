"""Manifest ingestion, lesion-grouped splitting, class weighting, crops, and
a synthetic desk-scale corpus generator.

Manifest CSV layout: columns lesion_id,image_id,dx[,path]; extra columns are
ignored. The HAM10000 seven-class label set is the built-in preset but any
label set can be supplied.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .image import ImageU8, save_ppm

HAM10000_LABELS = ("MEL", "NV", "BCC", "AKIEC", "BKL", "DF", "VASC")


class ManifestError(ValueError):
    """Malformed or inconsistent manifest."""


class UnknownLabelError(ManifestError):
    """A dx value outside the configured label set."""


@dataclass(frozen=True)
class LabelSet:
    """Dense class labels 0..C-1 with case-insensitive name lookup."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) < 2:
            raise ValueError("need at least 2 classes")
        if len({n.lower() for n in self.names}) != len(self.names):
            raise ValueError("duplicate label names")

    @property
    def num_classes(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        low = name.lower()
        for i, n in enumerate(self.names):
            if n.lower() == low:
                return i
        raise UnknownLabelError(f"unknown label {name!r}; expected one of {self.names}")


HAM10000 = LabelSet(HAM10000_LABELS)


@dataclass(frozen=True)
class SampleMeta:
    image_id: str
    lesion_id: str
    label: int
    path: str = ""


@dataclass(frozen=True)
class DatasetManifest:
    samples: tuple[SampleMeta, ...]
    labels: LabelSet

    @property
    def class_counts(self) -> np.ndarray:
        counts = np.zeros(self.labels.num_classes, dtype=np.int64)
        for s in self.samples:
            counts[s.label] += 1
        return counts

    @property
    def total(self) -> int:
        return len(self.samples)

    def subset(self, image_ids) -> "DatasetManifest":
        wanted = set(image_ids)
        return DatasetManifest(
            tuple(s for s in self.samples if s.image_id in wanted), self.labels
        )


def load_manifest(data: bytes | str, labels: LabelSet = HAM10000) -> DatasetManifest:
    """Parse a manifest CSV; requires lesion_id, image_id and dx columns."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    reader = csv.DictReader(io.StringIO(text))
    required = {"lesion_id", "image_id", "dx"}
    if reader.fieldnames is None or not required.issubset(reader.fieldnames):
        missing = required - set(reader.fieldnames or [])
        raise ManifestError(f"missing required columns: {sorted(missing)}")
    samples = []
    seen: set[str] = set()
    for lineno, row in enumerate(reader, start=2):
        image_id = row["image_id"].strip()
        lesion_id = row["lesion_id"].strip()
        if not lesion_id:
            raise ManifestError(f"row {lineno}: empty lesion_id")
        if image_id in seen:
            raise ManifestError(f"row {lineno}: duplicate image_id {image_id!r}")
        seen.add(image_id)
        try:
            label = labels.index(row["dx"].strip())
        except UnknownLabelError as exc:
            raise UnknownLabelError(f"row {lineno}: {exc}") from None
        samples.append(SampleMeta(image_id, lesion_id, label, row.get("path", "") or ""))
    return DatasetManifest(tuple(samples), labels)


def infer_labels(data: bytes | str) -> LabelSet:
    """Build a label set from the distinct dx values of a manifest CSV."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or "dx" not in reader.fieldnames:
        raise ManifestError("missing required columns: ['dx']")
    names = sorted({row["dx"].strip() for row in reader if row["dx"].strip()})
    return LabelSet(tuple(names))


def write_manifest(manifest: DatasetManifest) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["lesion_id", "image_id", "dx", "path"])
    for s in manifest.samples:
        writer.writerow([s.lesion_id, s.image_id, manifest.labels.names[s.label], s.path])
    return buf.getvalue()


def class_weights(manifest: DatasetManifest) -> np.ndarray:
    """Inverse-frequency weights w_i = N / n_i."""
    counts = manifest.class_counts
    if (counts == 0).any():
        missing = [manifest.labels.names[i] for i in np.flatnonzero(counts == 0)]
        raise ManifestError(f"classes absent from manifest, weights undefined: {missing}")
    return manifest.total / counts.astype(np.float64)


@dataclass(frozen=True)
class FoldAssignment:
    fold_id: int
    train_ids: frozenset[str]
    val_ids: frozenset[str]

    def to_dict(self) -> dict:
        return {
            "fold_id": self.fold_id,
            "train_ids": sorted(self.train_ids),
            "val_ids": sorted(self.val_ids),
        }


def group_kfold(manifest: DatasetManifest, k: int = 5, seed: int = 0) -> list[FoldAssignment]:
    """Lesion-disjoint k-fold split: shuffle lesion groups, deal round-robin."""
    groups: dict[str, list[str]] = {}
    for s in manifest.samples:
        groups.setdefault(s.lesion_id, []).append(s.image_id)
    lesion_ids = list(groups)
    if len(lesion_ids) < k:
        raise ManifestError(f"need at least {k} lesion groups, got {len(lesion_ids)}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xF01D])))
    order = rng.permutation(len(lesion_ids))
    buckets: list[list[str]] = [[] for _ in range(k)]
    for pos, gi in enumerate(order):
        buckets[pos % k].extend(groups[lesion_ids[gi]])
    all_ids = {s.image_id for s in manifest.samples}
    folds = []
    for f in range(k):
        val = frozenset(buckets[f])
        folds.append(FoldAssignment(f, frozenset(all_ids - val), val))
    return folds


def holdout_split(
    manifest: DatasetManifest, fraction: float = 0.2, seed: int = 0
) -> tuple[DatasetManifest, DatasetManifest]:
    """Lesion-disjoint train/test split holding out ~`fraction` of groups."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction {fraction} outside (0, 1)")
    groups: dict[str, list[str]] = {}
    for s in manifest.samples:
        groups.setdefault(s.lesion_id, []).append(s.image_id)
    lesion_ids = list(groups)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5917])))
    order = rng.permutation(len(lesion_ids))
    n_test = max(1, round(fraction * len(lesion_ids)))
    test_ids: set[str] = set()
    for gi in order[:n_test]:
        test_ids.update(groups[lesion_ids[gi]])
    train_ids = {s.image_id for s in manifest.samples} - test_ids
    return manifest.subset(train_ids), manifest.subset(test_ids)


def random_crop(image: ImageU8, size: int, rng: np.random.Generator) -> ImageU8:
    """Uniformly placed size x size sub-rectangle copy."""
    if image.width < size or image.height < size:
        raise ValueError(
            f"image {image.width}x{image.height} smaller than crop {size}"
        )
    ox = int(rng.integers(0, image.width - size + 1))
    oy = int(rng.integers(0, image.height - size + 1))
    return ImageU8(image.pixels[oy : oy + size, ox : ox + size])


@dataclass(frozen=True)
class SynthSpec:
    """Synthetic corpus parameters: C hue-coded ellipse classes over speckle."""

    labels: LabelSet = field(default_factory=lambda: HAM10000)
    per_class: int = 100
    size: int = 256
    seed: int = 0
    images_per_lesion: int = 1

    def __post_init__(self):
        if self.labels.num_classes > 16:
            raise ValueError("synthetic corpus supports at most 16 classes")
        if self.per_class < 1:
            raise ValueError("per_class must be >= 1")


def _hue_to_rgb(hue: float) -> np.ndarray:
    # Full-saturation HSV -> RGB at value 1.
    h6 = (hue % 1.0) * 6.0
    k = int(h6) % 6
    f = h6 - int(h6)
    v, p, q, t = 1.0, 0.0, 1.0 - f, f
    r, g, b = [
        (v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q),
    ][k]
    return np.array([r, g, b])


def _render_synth(
    size: int, hue: float, params: dict, rng: np.random.Generator
) -> ImageU8:
    base = _hue_to_rgb(hue) * 200.0 + 40.0
    speckle = rng.integers(20, 60, size=(size, size, 1))
    img = np.repeat(speckle, 3, axis=2).astype(np.float64)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    dx = (xs - params["cx"]) / params["rx"]
    dy = (ys - params["cy"]) / params["ry"]
    mask = dx * dx + dy * dy <= 1.0
    shade = 1.0 - 0.3 * (dx * dx + dy * dy)
    for c in range(3):
        ch = img[..., c]
        ch[mask] = base[c] * shade[mask]
    noise = rng.standard_normal((size, size, 3)) * 6.0
    return ImageU8(np.clip(np.floor(img + noise + 0.5), 0, 255).astype(np.uint8))


def synth_dataset(spec: SynthSpec, out_dir: str | Path) -> DatasetManifest:
    """Render the corpus to `<out_dir>/images/*.ppm` plus manifest.csv."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, 0x5E1F])))
    c_count = spec.labels.num_classes
    samples = []
    for ci in range(c_count):
        hue = ci / c_count
        n_lesions = math.ceil(spec.per_class / spec.images_per_lesion)
        made = 0
        for li in range(n_lesions):
            lesion_id = f"SYN_{spec.labels.names[ci]}_{li:04d}"
            # One base ellipse per lesion; images of the lesion share it.
            params = {
                "cx": spec.size / 2 + float(rng.uniform(-spec.size * 0.1, spec.size * 0.1)),
                "cy": spec.size / 2 + float(rng.uniform(-spec.size * 0.1, spec.size * 0.1)),
                "rx": float(rng.uniform(spec.size * 0.22, spec.size * 0.38)),
                "ry": float(rng.uniform(spec.size * 0.22, spec.size * 0.38)),
            }
            for ii in range(spec.images_per_lesion):
                if made >= spec.per_class:
                    break
                image_id = f"{lesion_id}_{ii}"
                image = _render_synth(spec.size, hue, params, rng)
                rel = f"images/{image_id}.ppm"
                (out / rel).write_bytes(save_ppm(image))
                samples.append(
                    SampleMeta(image_id, lesion_id, ci, str(out / rel))
                )
                made += 1
    manifest = DatasetManifest(tuple(samples), spec.labels)
    (out / "manifest.csv").write_text(write_manifest(manifest))
    return manifest
