"""Binary and raster file formats.

Rasters are 8-bit grayscale, written as PGM (P5, maxval 255) or PNG.
Checkpoints and embedding files use little-endian fixed layouts:

  checkpoint: magic "OREOCKPT", u32 version, then a sequence of named
  tensors [u32 name_len][utf-8 name][u32 rank][u32 dims...][f32 data]
  until EOF. Tensors are written in sorted name order so identical
  parameter sets produce identical bytes.

  embeddings: magic "OREOEMB1", u32 count, u32 dim, then count*dim f32.
  A sidecar CSV (index,identity,set_id,occluded) travels next to it.
"""

import csv
import struct

import numpy as np
from PIL import Image

from .errors import DataError

CKPT_MAGIC = b"OREOCKPT"
CKPT_VERSION = 1
EMB_MAGIC = b"OREOEMB1"


def write_pgm(path, pixels_u8):
    arr = np.asarray(pixels_u8, dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"PGM expects a 2-d raster, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise DataError(f"{path}: not a binary PGM (P5) file")
    # header tokens: magic, width, height, maxval; '#' comments allowed
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 PGM supported, got {maxval}")
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return raster.reshape(h, w).copy()


def write_png(path, pixels_u8):
    Image.fromarray(np.asarray(pixels_u8, dtype=np.uint8), mode="L").save(path)


def read_raster(path):
    """Read a grayscale raster (PGM or PNG) as uint8."""
    p = str(path)
    if p.lower().endswith(".pgm"):
        return read_pgm(p)
    return np.asarray(Image.open(p).convert("L"), dtype=np.uint8)


def save_checkpoint(path, tensors, version=CKPT_VERSION):
    """Write named float tensors; `tensors` maps name -> array-like."""
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", version))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into (tensors dict, version)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != CKPT_MAGIC:
        raise DataError(f"{path}: bad checkpoint magic")
    (version,) = struct.unpack_from("<I", data, 8)
    pos = 12
    tensors = {}
    while pos < len(data):
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos)
        pos += 4 * count
        tensors[name] = arr.reshape(dims).copy()
    return tensors, version


def save_embeddings(path, embeddings):
    emb = np.ascontiguousarray(embeddings, dtype="<f4")
    if emb.ndim != 2:
        raise ValueError(f"embedding matrix must be 2-d, got shape {emb.shape}")
    with open(path, "wb") as f:
        f.write(EMB_MAGIC)
        f.write(struct.pack("<II", emb.shape[0], emb.shape[1]))
        f.write(emb.tobytes())


def load_embeddings(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != EMB_MAGIC:
        raise DataError(f"{path}: bad embedding file magic")
    count, dim = struct.unpack_from("<II", data, 8)
    emb = np.frombuffer(data, dtype="<f4", count=count * dim, offset=16)
    return emb.reshape(count, dim).copy()


def save_sidecar(path, rows):
    """rows: iterable of (index, identity, set_id, occluded)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "identity", "set_id", "occluded"])
        for index, identity, set_id, occluded in rows:
            writer.writerow([index, identity, set_id if set_id is not None else "", int(occluded)])


def load_sidecar(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != ["index", "identity", "set_id", "occluded"]:
            raise DataError(f"{path}: unexpected sidecar header {header}")
        rows = []
        for line in reader:
            if not line:
                continue
            rows.append((int(line[0]), int(line[1]), line[2] or None, int(line[3])))
    return rows
