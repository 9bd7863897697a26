"""Dataset walking and bundle export.

Datasets are image folders: ``root/<split>/<class_name>/<image files>``.
Class indices follow the sorted order of the class directory names, and
rows within a class follow the sorted order of the file names, so an
extraction is deterministic for a fixed tree and backbone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .backbones import Backbone, load_backbone
from .bundle import write_bundle
from .errors import DatasetNotFound

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


@dataclass(frozen=True)
class ExtractJob:
    dataset: str
    root: str
    out: str
    backbone: str = "hash"
    splits: tuple[str, ...] = ("train", "val", "test")
    template: str = "a photo of a {}."
    batch_size: int = 64

    def __post_init__(self):
        if not self.splits:
            raise ValueError("at least one split is required")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def discover_classes(root: Path, split: str) -> list[str]:
    split_dir = root / split
    if not split_dir.is_dir():
        raise DatasetNotFound(f"missing split directory {split_dir}")
    names = sorted(p.name for p in split_dir.iterdir() if p.is_dir())
    if not names:
        raise DatasetNotFound(f"no class directories under {split_dir}")
    return names


def _class_files(split_dir: Path, class_name: str) -> list[Path]:
    d = split_dir / class_name
    return sorted(
        p for p in d.iterdir()
        if p.is_file() and p.suffix.lower() in _IMAGE_SUFFIXES
    )


def extract_split(
    backbone: Backbone,
    root: Path,
    split: str,
    class_names: list[str],
    batch_size: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Embed every image of a split in canonical (class, filename) order."""
    split_dir = root / split
    feats = []
    labels = []
    batch: list[Image.Image] = []

    def flush():
        if batch:
            feats.append(backbone.embed_images(batch))
            for im in batch:
                im.close()
            batch.clear()

    for c, name in enumerate(class_names):
        files = _class_files(split_dir, name)
        if not files:
            raise DatasetNotFound(f"class {name!r} has no images in {split_dir}")
        for f in files:
            batch.append(Image.open(f))
            labels.append(c)
            if len(batch) == batch_size:
                flush()
    flush()
    return np.vstack(feats), np.asarray(labels, dtype=np.int64)


def extract(job: ExtractJob) -> dict:
    """Run the job; returns a manifest of written bundle directories."""
    root = Path(job.root)
    if not root.is_dir():
        raise DatasetNotFound(f"dataset root {root} does not exist")
    backbone = load_backbone(job.backbone)
    class_names = discover_classes(root, job.splits[0])
    out = Path(job.out)
    provenance = {
        "dataset": job.dataset,
        "backbone": job.backbone,
        "template": job.template,
    }
    written = {}
    for split in job.splits:
        split_classes = discover_classes(root, split)
        if split_classes != class_names:
            raise DatasetNotFound(
                f"split {split!r} class directories differ from "
                f"{job.splits[0]!r}; indices would not align"
            )
        features, labels = extract_split(
            backbone, root, split, class_names, job.batch_size
        )
        path = out / split
        write_bundle(
            path, features, kind="image", class_names=class_names,
            labels=labels, extra_meta=provenance,
        )
        written[split] = str(path)
    prompts = [job.template.format(name) for name in class_names]
    text_path = out / "text"
    write_bundle(
        text_path, backbone.embed_texts(prompts), kind="text",
        class_names=class_names, extra_meta=provenance,
    )
    written["text"] = str(text_path)
    return written
