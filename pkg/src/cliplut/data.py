"""Paired image datasets: discovery, decoding/resizing, deterministic batching.

Two layouts are understood:

* ``dirs``: ``root/input/*`` and ``root/target/*`` matched by filename stem (or the same
  under ``root/<split>/`` when that directory exists);
* ``manifest``: a UTF-8 text file with one ``input<TAB>target`` pair per line, paths
  relative to ``root``; ``#`` starts a comment.
"""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import cv2
import numpy as np
import torch
import torch.nn.functional as F

from .errors import DataError

log = logging.getLogger(__name__)

IMAGE_SIZE = 256
IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"}


@dataclass
class PairedDataset:
    root: Path
    pairs: list[tuple[Path, Path]]
    split: str = "train"
    checksum: str = ""
    warnings: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.pairs)

    @property
    def ids(self) -> list[str]:
        return [p[0].stem for p in self.pairs]


@dataclass
class Batch:
    inputs: torch.Tensor   # (B, H, W, 3)
    targets: torch.Tensor  # (B, H, W, 3)
    ids: list[str]


def _checksum(root: Path, pairs) -> str:
    h = hashlib.sha256()
    for a, b in pairs:
        h.update(f"{a.relative_to(root).as_posix()}\t{b.relative_to(root).as_posix()}\n".encode("utf-8"))
    return h.hexdigest()


def _images_by_stem(folder: Path) -> dict[str, Path]:
    found: dict[str, Path] = {}
    for p in sorted(folder.iterdir()):
        if not p.is_file() or p.suffix.lower() not in IMAGE_EXTS:
            continue
        if p.stem in found:
            raise DataError(f"duplicate stem {p.stem!r} in {folder}: {found[p.stem].name} and {p.name}")
        found[p.stem] = p
    return found


def scan_dataset(root, layout: str = "dirs", split: str = "train", manifest=None) -> PairedDataset:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    if layout == "manifest":
        return _scan_manifest(root, Path(manifest) if manifest else root / f"{split}.txt", split)
    if layout != "dirs":
        raise DataError(f"unknown dataset layout {layout!r}")

    base = root / split if (root / split / "input").is_dir() else root
    in_dir, tgt_dir = base / "input", base / "target"
    for d in (in_dir, tgt_dir):
        if not d.is_dir():
            raise DataError(f"missing directory {d}")
    inputs, targets = _images_by_stem(in_dir), _images_by_stem(tgt_dir)
    warnings = []
    for stem in sorted(set(inputs) - set(targets)):
        warnings.append(f"input {inputs[stem].name} has no matching target")
    for stem in sorted(set(targets) - set(inputs)):
        warnings.append(f"target {targets[stem].name} has no matching input")
    for w in warnings:
        log.warning(w)
    pairs = [(inputs[s], targets[s]) for s in sorted(set(inputs) & set(targets))]
    if not pairs:
        raise DataError(f"no matched image pairs under {base}")
    return PairedDataset(root, pairs, split, _checksum(root, pairs), warnings)


def _scan_manifest(root: Path, manifest: Path, split: str) -> PairedDataset:
    if not manifest.is_file():
        raise DataError(f"manifest {manifest} not found")
    pairs = []
    seen = set()
    with open(manifest, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{manifest}:{lineno}: expected 'input<TAB>target'")
            a, b = root / parts[0].strip(), root / parts[1].strip()
            for p in (a, b):
                if not p.is_file():
                    raise DataError(f"{manifest}:{lineno}: file {p} not found")
            if a.stem in seen:
                raise DataError(f"{manifest}:{lineno}: duplicate stem {a.stem!r}")
            seen.add(a.stem)
            pairs.append((a, b))
    if not pairs:
        raise DataError(f"manifest {manifest} lists no pairs")
    pairs.sort(key=lambda p: p[0].stem)
    return PairedDataset(root, pairs, split, _checksum(root, pairs), [])


def write_manifest(path, root, pairs) -> None:
    root = Path(root)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b in pairs:
            fh.write(f"{Path(a).relative_to(root).as_posix()}\t{Path(b).relative_to(root).as_posix()}\n")


# --------------------------------------------------------------------------- decoding


def read_image(path) -> np.ndarray:
    """Decode an 8- or 16-bit image to float32 RGB in ``[0, 1]``."""
    raw = cv2.imread(os.fspath(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DataError(f"cannot decode image {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise DataError(f"unsupported pixel type {raw.dtype} in {path}")
    if raw.ndim == 2:
        raw = np.repeat(raw[:, :, None], 3, axis=2)
    elif raw.shape[2] == 4:
        raw = raw[:, :, :3]
    rgb = raw[:, :, ::-1]
    return np.ascontiguousarray(rgb, dtype=np.float32) / np.float32(scale)


def write_png(path, image) -> None:
    """Write a float ``[0, 1]`` RGB image as an 8-bit PNG."""
    arr = quantize8(image)
    if not cv2.imwrite(os.fspath(path), np.ascontiguousarray(arr[:, :, ::-1])):
        raise DataError(f"cannot write {path}")


def quantize8(image) -> np.ndarray:
    arr = image.detach().cpu().numpy() if isinstance(image, torch.Tensor) else np.asarray(image)
    return np.clip(np.rint(arr.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)


def resize(image: np.ndarray | torch.Tensor, size: int = IMAGE_SIZE, mode: str = "bilinear") -> torch.Tensor:
    img = torch.as_tensor(image, dtype=torch.float32)
    if img.shape[0] == size and img.shape[1] == size:
        return img.clone()
    x = img.permute(2, 0, 1).unsqueeze(0)
    if mode == "bilinear":
        x = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)
    elif mode == "area":
        x = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False, antialias=True)
    else:
        raise ValueError(f"unknown resize mode {mode!r}")
    return x[0].permute(1, 2, 0).clamp(0.0, 1.0).contiguous()


def preprocess(image, size: int = IMAGE_SIZE, mode: str = "bilinear") -> torch.Tensor:
    """Load (if given a path) and resize to ``size x size`` floats in ``[0, 1]``."""
    if isinstance(image, (str, os.PathLike)):
        image = read_image(image)
    elif isinstance(image, np.ndarray) and image.dtype == np.uint8:
        image = image.astype(np.float32) / np.float32(255.0)
    elif isinstance(image, np.ndarray) and image.dtype == np.uint16:
        image = image.astype(np.float32) / np.float32(65535.0)
    return resize(image, size, mode)


def load_pairs(dataset: PairedDataset, size: int = IMAGE_SIZE, mode: str = "bilinear"
               ) -> tuple[torch.Tensor, torch.Tensor]:
    inputs = torch.stack([preprocess(a, size, mode) for a, _ in dataset.pairs])
    targets = torch.stack([preprocess(b, size, mode) for _, b in dataset.pairs])
    return inputs, targets


# --------------------------------------------------------------------------- batching


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([int(seed), int(epoch)]).permutation(n)


def batch_indices(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = epoch_order(n, seed, epoch)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def batches(dataset: PairedDataset, batch_size: int, seed: int, epoch: int,
            size: int = IMAGE_SIZE, cache: dict | None = None) -> Iterator[Batch]:
    """Shuffled batches for one epoch; the last batch may be short.

    Pass a dict as ``cache`` to keep decoded tensors across epochs.
    """
    ids = dataset.ids
    for idx in batch_indices(len(dataset), batch_size, seed, epoch):
        ins, tgts = [], []
        for i in idx:
            key = int(i)
            if cache is not None and key in cache:
                a, b = cache[key]
            else:
                pa, pb = dataset.pairs[key]
                a, b = preprocess(pa, size), preprocess(pb, size)
                if cache is not None:
                    cache[key] = (a, b)
            ins.append(a)
            tgts.append(b)
        yield Batch(torch.stack(ins), torch.stack(tgts), [ids[int(i)] for i in idx])
