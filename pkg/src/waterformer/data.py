"""Dataset ingestion, pairing, augmentation, and synthetic corpus building.

Images travel as (h, w, 3) float64 arrays in [0, 1]. Manifests are plain
comma-separated text (degraded-path,reference-path,split), paths relative
to the manifest file, so corpora stay diffable.
"""

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from . import physics
from .errors import ConfigurationError, IngestionError

SPLITS = ("train", "val", "test")


@dataclass
class PairedSample:
    degraded: np.ndarray
    reference: np.ndarray
    id: str


@dataclass
class ManifestEntry:
    degraded: str
    reference: str
    split: str

    @property
    def id(self):
        return Path(self.degraded).stem


@dataclass
class DatasetManifest:
    root: Path
    entries: list
    seed: int = 0

    def split(self, name):
        if name not in SPLITS:
            raise ConfigurationError(f"unknown split {name!r}")
        return [e for e in self.entries if e.split == name]


def decode_image(path):
    """Decode an 8-bit RGB PNG/JPEG to a float array in [0, 1]."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot decode {path}: {exc}") from exc
    return arr / 255.0


def encode_image(img, path):
    """Write a [0, 1] float image as an 8-bit PNG."""
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    Image.fromarray((arr * 255.0).round().astype(np.uint8)).save(path)


def resize(img, size, interpolation="bilinear"):
    """Resize an (h, w, 3) float image; identity when already at size."""
    h, w = int(size[0]), int(size[1])
    if img.shape[:2] == (h, w):
        return img
    if interpolation not in ("bilinear", "nearest"):
        raise ConfigurationError(f"unknown interpolation {interpolation!r}")
    t = torch.from_numpy(np.ascontiguousarray(img)).permute(2, 0, 1).unsqueeze(0)
    kwargs = {"align_corners": False} if interpolation == "bilinear" else {}
    out = F.interpolate(t, size=(h, w), mode=interpolation, **kwargs)
    return out.squeeze(0).permute(1, 2, 0).numpy()


def load_pair(entry, root=".", size=None, interpolation="bilinear"):
    """Decode, normalize, and resize one manifest entry."""
    root = Path(root)
    degraded = decode_image(root / entry.degraded)
    reference = decode_image(root / entry.reference)
    if size is not None:
        degraded = resize(degraded, (size, size), interpolation)
        reference = resize(reference, (size, size), interpolation)
    if degraded.shape != reference.shape:
        raise IngestionError(
            f"pair {entry.id}: degraded {degraded.shape} vs reference {reference.shape}")
    return PairedSample(degraded=degraded, reference=reference, id=entry.id)


def augment(sample, rng):
    """Random flips and 90-degree rotations, identical on both images.

    Draw order: horizontal flip (p=0.5), vertical flip (p=0.5), rotation
    count k uniform in {0,1,2,3}. Lossless by construction (pure pixel
    permutations), deterministic given the generator state.
    """
    ops = []
    if rng.random() < 0.5:
        ops.append(lambda a: np.flip(a, axis=1))
    if rng.random() < 0.5:
        ops.append(lambda a: np.flip(a, axis=0))
    k = int(rng.integers(0, 4))
    if k:
        ops.append(lambda a: np.rot90(a, k, axes=(0, 1)))

    def apply(img):
        for op in ops:
            img = op(img)
        return np.ascontiguousarray(img)

    return PairedSample(degraded=apply(sample.degraded),
                        reference=apply(sample.reference), id=sample.id)


def epoch_order(n, epoch, seed):
    """Sample order for one epoch, a pure function of (n, epoch, seed)."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def save_manifest(manifest, path):
    path = Path(path)
    lines = [f"# seed={manifest.seed}"]
    lines += [f"{e.degraded},{e.reference},{e.split}" for e in manifest.entries]
    path.write_text("\n".join(lines) + "\n")


def load_manifest(path):
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"manifest not found: {path}")
    seed = 0
    entries = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "seed=" in line:
                seed = int(line.split("seed=")[1])
            continue
        parts = line.split(",")
        if len(parts) != 3 or parts[2] not in SPLITS:
            raise IngestionError(f"malformed manifest line: {line!r}")
        entries.append(ManifestEntry(*parts))
    return DatasetManifest(root=path.parent, entries=entries, seed=seed)


def _assign_splits(n, rng):
    order = rng.permutation(n)
    n_train = int(n * 0.8)
    n_val = int(n * 0.1)
    labels = np.empty(n, dtype=object)
    labels[order[:n_train]] = "train"
    labels[order[n_train:n_train + n_val]] = "val"
    labels[order[n_train + n_val:]] = "test"
    return labels


def _sample_depth(rng, depth_range, shape):
    """Constant or top-to-bottom gradient depth map within the range."""
    lo, hi = depth_range
    if rng.random() < 0.5:
        return np.full(shape, rng.uniform(lo, hi))
    d0, d1 = sorted(rng.uniform(lo, hi, size=2))
    column = np.linspace(d0, d1, shape[0])
    return np.tile(column[:, None], (1, shape[1]))


def list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise IngestionError(f"not a directory: {directory}")
    paths = sorted(p for p in directory.iterdir()
                   if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not paths:
        raise IngestionError(f"no images found in {directory}")
    return paths


def build_synthetic_corpus(clean_dir, out_dir, types, depth_range, n, seed,
                           size=None):
    """Degrade clean images through the water-type presets into a paired
    corpus: PNG pairs, float64 + (T, A) sidecars for physics oracles, and
    a train/val/test manifest.

    Each of the first n clean images is degraded once per requested type,
    so the corpus holds n * len(types) pairs.
    """
    out_dir = Path(out_dir)
    clean_paths = list_images(clean_dir)[:n]
    if not types:
        raise ConfigurationError("at least one water type is required")
    for t in types:
        if str(t) not in physics.WATER_TYPE_IDS:
            raise ConfigurationError(f"unknown water type {t!r}")

    (out_dir / "degraded").mkdir(parents=True, exist_ok=True)
    (out_dir / "reference").mkdir(parents=True, exist_ok=True)
    (out_dir / "params").mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    entries = []
    for path in clean_paths:
        clean = decode_image(path)
        if size is not None:
            clean = resize(clean, (size, size))
        for type_id in types:
            depth = _sample_depth(rng, depth_range, clean.shape[:2])
            params = physics.make_water_type(type_id, depth)
            degraded = physics.degrade(clean, params)

            pair_id = f"{path.stem}_{type_id}"
            encode_image(degraded, out_dir / "degraded" / f"{pair_id}.png")
            encode_image(clean, out_dir / "reference" / f"{pair_id}.png")
            np.savez_compressed(
                out_dir / "params" / f"{pair_id}.npz",
                transmission=params.transmission,
                background=params.background,
                degraded=degraded, reference=clean)
            entries.append(ManifestEntry(
                degraded=f"degraded/{pair_id}.png",
                reference=f"reference/{pair_id}.png",
                split="train"))

    labels = _assign_splits(len(entries), np.random.default_rng(seed))
    for entry, label in zip(entries, labels):
        entry.split = str(label)
    manifest = DatasetManifest(root=out_dir, entries=entries, seed=seed)
    save_manifest(manifest, out_dir / "manifest.txt")
    return manifest


def generate_clean_images(out_dir, n, size=64, seed=0):
    """Procedural colorful test scenes so desk-scale runs need no dataset.

    Smooth two-tone gradients with random soft disks and rectangles give
    enough color and edge structure for the losses and metrics to bite.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    paths = []
    for i in range(n):
        c0, c1 = rng.uniform(0.05, 0.95, size=(2, 3))
        angle = rng.uniform(0, 2 * np.pi)
        ramp = (np.cos(angle) * xs + np.sin(angle) * ys + 1) / 2
        img = c0 + ramp[..., None] * (c1 - c0)
        for _ in range(rng.integers(3, 7)):
            color = rng.uniform(0, 1, size=3)
            cx, cy = rng.uniform(0.1, 0.9, size=2)
            if rng.random() < 0.5:
                radius = rng.uniform(0.05, 0.25)
                mask = ((xs - cx) ** 2 + (ys - cy) ** 2) < radius ** 2
            else:
                wx, wy = rng.uniform(0.05, 0.3, size=2)
                mask = (np.abs(xs - cx) < wx) & (np.abs(ys - cy) < wy)
            alpha = rng.uniform(0.5, 1.0)
            img[mask] = (1 - alpha) * img[mask] + alpha * color
        img = np.clip(img, 0.0, 1.0)
        path = out_dir / f"clean_{i:04d}.png"
        encode_image(img, path)
        paths.append(path)
    return paths


class PairedDataset:
    """In-memory split view over a manifest, resized once at load."""

    def __init__(self, manifest, split, size=None, interpolation="bilinear"):
        self.samples = [
            load_pair(e, manifest.root, size, interpolation)
            for e in manifest.split(split)
        ]
        if not self.samples:
            raise IngestionError(f"split {split!r} of manifest is empty")

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, idx):
        return self.samples[idx]


def to_tensor(img, dtype=torch.float32):
    """(h, w, 3) array -> (3, h, w) tensor."""
    return torch.from_numpy(np.ascontiguousarray(img)).permute(2, 0, 1).to(dtype)


def to_image(tensor):
    """(3, h, w) tensor -> clamped (h, w, 3) float64 array."""
    return tensor.detach().clamp(0, 1).double().permute(1, 2, 0).cpu().numpy()


def collate(samples, augment_rngs=None, dtype=torch.float32):
    """Stack samples into (degraded, reference) training tensors."""
    if augment_rngs is not None:
        samples = [augment(s, rng) for s, rng in zip(samples, augment_rngs)]
    degraded = torch.stack([to_tensor(s.degraded, dtype) for s in samples])
    reference = torch.stack([to_tensor(s.reference, dtype) for s in samples])
    return degraded, reference
