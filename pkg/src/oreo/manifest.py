"""Manifest CSV ingest/export.

Format (UTF-8, header required):

    path,identity,set_id,attr_0,...,attr_{K-1}

`path` is resolved relative to the manifest's directory; images are 8-bit
grayscale PGM (P5) or PNG.  Export writes the same layout so a dataset
round-trips losslessly (generated pixels live on the 8-bit grid already).
"""

import csv
import os

import numpy as np

from .datagen import Dataset, ImageSample, occluded_flag
from .errors import DataError
from .fileio import read_raster, write_pgm, write_png


def export_dataset(dataset, out_dir, manifest_name="manifest.csv", image_format="pgm"):
    """Write images plus a manifest CSV under `out_dir`; returns the manifest path."""
    if image_format not in ("pgm", "png"):
        raise DataError(f"unsupported image format: {image_format}")
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, manifest_name)
    k = dataset.n_attributes
    with open(manifest_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["path", "identity", "set_id"] + [f"attr_{i}" for i in range(k)])
        for idx, sample in enumerate(dataset.samples):
            name = f"img_{idx:06d}.{image_format}"
            u8 = np.round(np.clip(sample.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
            if image_format == "pgm":
                write_pgm(os.path.join(out_dir, name), u8)
            else:
                write_png(os.path.join(out_dir, name), u8)
            writer.writerow(
                [name, sample.identity, sample.set_id or ""] + [int(a) for a in sample.attributes]
            )
    return manifest_path


def load_manifest(path, occlusion_subset=None):
    """Load a manifest CSV and its images into a Dataset."""
    path = str(path)
    if not os.path.exists(path):
        raise DataError(f"manifest not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty manifest") from None
        if header[:3] != ["path", "identity", "set_id"]:
            raise DataError(f"{path}: header must start with path,identity,set_id, got {header[:3]}")
        attr_cols = header[3:]
        expected = [f"attr_{i}" for i in range(len(attr_cols))]
        if attr_cols != expected:
            raise DataError(f"{path}: attribute columns must be {expected}, got {attr_cols}")
        k = len(attr_cols)
        if occlusion_subset is None:
            occlusion_subset = tuple(range(k))

        samples = []
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3 + k:
                raise DataError(
                    f"{path}:{row_no}: expected {3 + k} fields per header, got {len(row)}"
                )
            img_path = row[0] if os.path.isabs(row[0]) else os.path.join(base, row[0])
            if not os.path.exists(img_path):
                raise DataError(f"{path}:{row_no}: image file not found: {img_path}")
            try:
                raster = read_raster(img_path)
            except DataError:
                raise
            except Exception as exc:
                raise DataError(f"{path}:{row_no}: cannot read image {img_path}: {exc}") from exc
            try:
                identity = int(row[1])
                attributes = np.array([int(v) for v in row[3:]], dtype=np.uint8)
            except ValueError as exc:
                raise DataError(f"{path}:{row_no}: bad numeric field: {exc}") from exc
            if identity < 0:
                raise DataError(f"{path}:{row_no}: identity must be >= 0")
            if not np.all((attributes == 0) | (attributes == 1)):
                raise DataError(f"{path}:{row_no}: attributes must be 0/1")
            samples.append(
                ImageSample(
                    pixels=(raster.astype(np.float32) / 255.0),
                    identity=identity,
                    attributes=attributes,
                    occluded=occluded_flag(attributes, occlusion_subset),
                    set_id=row[2] or None,
                )
            )
    if not samples:
        raise DataError(f"{path}: manifest has no rows")
    return Dataset(
        samples=samples,
        attr_names=tuple(attr_cols),
        occlusion_subset=tuple(occlusion_subset),
    )
