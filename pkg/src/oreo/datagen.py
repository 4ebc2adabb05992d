"""Deterministic synthetic occluded-face datasets.

Each identity is a vector of 8 geometry values (eye spacing, eye size, nose
length, mouth width, the two face ellipse semi-axes, eye height, mouth
height); every image re-renders that geometry with small jitter and optional
pixel noise.  A configurable fraction of each identity's images gets exactly
one occluder drawn over the face, and the matching attribute bit set.
Attribute bits can then be flipped with a small probability to emulate
pseudo-label error.

All randomness is keyed by (seed, stream tag, identity, image index) through
numpy's SeedSequence, so generation is bit-identical across runs and
independent of any parallel schedule.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

OCCLUDER_KINDS = ("glasses_bar", "hat_bar", "chin_patch", "side_patch", "mouth_patch")

# RNG stream tags (keep stable: they define the generated bits)
_STREAM_GEOMETRY = 1
_STREAM_IMAGE = 2
_STREAM_OCC_ASSIGN = 3
_STREAM_SPLIT = 4


@dataclass(frozen=True)
class SynthSpec:
    n_identities: int
    images_per_identity: int
    occluded_fraction: float = 0.4
    image_size: int = 64
    occluder_kinds: tuple = OCCLUDER_KINDS
    label_noise: float = 0.0
    seed: int = 0

    def validate(self):
        if not (0.0 <= self.occluded_fraction <= 1.0):
            raise ConfigError(f"occluded_fraction must be in [0,1], got {self.occluded_fraction}")
        if self.image_size < 16:
            raise ConfigError(f"image_size must be >= 16, got {self.image_size}")
        if not (0.0 <= self.label_noise < 1.0):
            raise ConfigError(f"label_noise must be in [0,1), got {self.label_noise}")
        if self.n_identities < 1 or self.images_per_identity < 1:
            raise ConfigError("n_identities and images_per_identity must be positive")
        unknown = [k for k in self.occluder_kinds if k not in OCCLUDER_KINDS]
        if unknown:
            raise ConfigError(f"unknown occluder kinds: {unknown}")
        if len(self.occluder_kinds) == 0:
            raise ConfigError("at least one occluder kind is required")


@dataclass
class ImageSample:
    pixels: np.ndarray  # (H, W) float32 in [0,1], quantized to the 8-bit grid
    identity: int
    attributes: np.ndarray  # (K,) uint8
    occluded: int
    set_id: str = None
    # generator-only ground truth; None for manifest-loaded data
    occluder_mask: np.ndarray = None
    face_mask: np.ndarray = None


@dataclass
class Dataset:
    samples: list
    attr_names: tuple
    occlusion_subset: tuple = None  # attribute indices that count as occluding

    def __post_init__(self):
        if self.occlusion_subset is None:
            self.occlusion_subset = tuple(range(len(self.attr_names)))
        k = len(self.attr_names)
        for i, s in enumerate(self.samples):
            if len(s.attributes) != k:
                raise DataError(f"sample {i}: expected {k} attributes, got {len(s.attributes)}")

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def n_attributes(self):
        return len(self.attr_names)

    def identities(self):
        return sorted({s.identity for s in self.samples})

    def pixel_array(self):
        return np.stack([s.pixels for s in self.samples]).astype(np.float32)

    def label_array(self):
        return np.array([s.identity for s in self.samples], dtype=np.int64)

    def attribute_array(self):
        return np.stack([s.attributes for s in self.samples]).astype(np.float32)

    def occluded_array(self):
        return np.array([s.occluded for s in self.samples], dtype=np.int64)


def occluded_flag(attributes, occlusion_subset):
    attrs = np.asarray(attributes)
    return int(any(attrs[i] for i in occlusion_subset))


def _identity_geometry(spec, identity):
    rng = np.random.default_rng([spec.seed, _STREAM_GEOMETRY, identity])
    geometry = np.array(
        [
            rng.uniform(0.10, 0.17),  # eye_dx: half eye spacing
            rng.uniform(0.028, 0.050),  # eye_r: eye radius
            rng.uniform(0.08, 0.16),  # nose_len
            rng.uniform(0.10, 0.18),  # mouth_w: half mouth width
            rng.uniform(0.28, 0.36),  # ax: ellipse semi-axis (horizontal)
            rng.uniform(0.34, 0.44),  # ay: ellipse semi-axis (vertical)
            rng.uniform(0.08, 0.14),  # eye_off: eyes above center
            rng.uniform(0.16, 0.24),  # mouth_off: mouth below center
        ]
    )
    skin = rng.uniform(0.55, 0.78)
    feature_dark = rng.uniform(0.10, 0.28)
    return geometry, skin, feature_dark


# occluder shade: chosen to contrast with skin (0.55-0.78) and features
_OCCLUDER_SHADE = {
    "glasses_bar": 0.05,
    "hat_bar": 0.92,
    "chin_patch": 0.25,
    "side_patch": 0.18,
    "mouth_patch": 0.08,
}


def _occluder_rect(kind, g, cx, cy, rng):
    """Normalized-coordinate rectangle (x0, x1, y0, y1) for one occluder."""
    eye_dx, eye_r, nose_len, mouth_w, ax, ay, eye_off, mouth_off = g
    if kind == "glasses_bar":
        half_w = eye_dx + 2.6 * eye_r
        half_h = 2.1 * eye_r
        return cx - half_w, cx + half_w, cy - eye_off - half_h, cy - eye_off + half_h
    if kind == "hat_bar":
        half_w = 0.85 * ax
        y0 = cy - ay - 0.02
        return cx - half_w, cx + half_w, y0, y0 + 0.45 * ay
    if kind == "chin_patch":
        half_w = 0.62 * ax
        return cx - half_w, cx + half_w, cy + 0.58 * ay, cy + ay + 0.02
    if kind == "side_patch":
        side = 1.0 if rng.random() < 0.5 else -1.0
        x_in = cx + side * 0.35 * ax
        x_out = cx + side * (ax + 0.02)
        return min(x_in, x_out), max(x_in, x_out), cy - 0.10, cy + 0.26
    if kind == "mouth_patch":
        half_w = 1.35 * mouth_w
        half_h = 0.062
        return cx - half_w, cx + half_w, cy + mouth_off - half_h, cy + mouth_off + half_h
    raise ConfigError(f"unknown occluder kind: {kind}")


def _render_sample(spec, identity, image_index, occluded):
    size = spec.image_size
    geometry, skin, feature_dark = _identity_geometry(spec, identity)
    rng = np.random.default_rng([spec.seed, _STREAM_IMAGE, identity, image_index])

    jitter = np.clip(rng.normal(1.0, 0.03, size=8), 0.9, 1.1)
    g = geometry * jitter
    eye_dx, eye_r, nose_len, mouth_w, ax, ay, eye_off, mouth_off = g
    cx = 0.5 + float(np.clip(rng.normal(0.0, 0.012), -0.03, 0.03))
    cy = 0.52 + float(np.clip(rng.normal(0.0, 0.012), -0.03, 0.03))

    coords = (np.arange(size) + 0.5) / size
    xs = coords[None, :]
    ys = coords[:, None]

    img = np.full((size, size), 0.12, dtype=np.float64)
    r2 = ((xs - cx) / ax) ** 2 + ((ys - cy) / ay) ** 2
    face = r2 <= 1.0
    img[face] = skin * (1.0 - 0.18 * r2[face])

    for ex in (cx - eye_dx, cx + eye_dx):
        eye = (xs - ex) ** 2 + (ys - (cy - eye_off)) ** 2 <= eye_r**2
        img[eye] = feature_dark
    nose_top = cy - eye_off + 0.05
    nose = (np.abs(xs - cx) <= 0.013) & (ys >= nose_top) & (ys <= nose_top + nose_len)
    img[nose] = feature_dark + 0.15
    mouth = (np.abs(xs - cx) <= mouth_w) & (np.abs(ys - (cy + mouth_off)) <= 0.018)
    img[mouth] = feature_dark

    occluder_mask = np.zeros((size, size), dtype=bool)
    kind = None
    if occluded:
        kind = spec.occluder_kinds[int(rng.integers(len(spec.occluder_kinds)))]
        x0, x1, y0, y1 = _occluder_rect(kind, g, cx, cy, rng)
        occluder_mask = (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
        img[occluder_mask] = _OCCLUDER_SHADE[kind]

    img += rng.normal(0.0, 0.02, size=(size, size))
    # quantize onto the 8-bit grid so PGM export/reload is lossless
    img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0

    attributes = np.zeros(len(spec.occluder_kinds), dtype=np.uint8)
    if kind is not None:
        attributes[spec.occluder_kinds.index(kind)] = 1
    if spec.label_noise > 0.0:
        flips = rng.random(len(attributes)) < spec.label_noise
        attributes = (attributes ^ flips.astype(np.uint8)).astype(np.uint8)

    return ImageSample(
        pixels=img.astype(np.float32),
        identity=identity,
        attributes=attributes,
        occluded=int(attributes.any()),
        set_id=None,
        occluder_mask=occluder_mask,
        face_mask=face,
    )


def generate_dataset(spec: SynthSpec) -> Dataset:
    """Render the full synthetic dataset described by `spec`."""
    spec.validate()
    n_occluded = int(math.floor(spec.occluded_fraction * spec.images_per_identity + 0.5))
    samples = []
    for identity in range(spec.n_identities):
        assign_rng = np.random.default_rng([spec.seed, _STREAM_OCC_ASSIGN, identity])
        order = assign_rng.permutation(spec.images_per_identity)
        occluded_images = set(int(i) for i in order[:n_occluded])
        for image_index in range(spec.images_per_identity):
            samples.append(
                _render_sample(spec, identity, image_index, image_index in occluded_images)
            )
    return Dataset(samples=samples, attr_names=tuple(spec.occluder_kinds))


@dataclass
class AttributeSplit:
    """Index triples for one attribute's gallery/probe protocol."""

    attribute_index: int
    identities: list  # identities contributing to all three sets, in order
    gallery: list  # dataset indices, one without-attribute image per identity
    probe_with: list  # one with-attribute image per identity
    probe_without: list  # one distinct without-attribute image per identity
    excluded: list = field(default_factory=list)  # (identity, reason)


def split_by_attribute(dataset: Dataset, attribute_index: int, seed: int = 0) -> AttributeSplit:
    """Enroll a one-image-per-identity gallery from images lacking the
    attribute and draw one with / one without probe per eligible identity."""
    if attribute_index >= dataset.n_attributes:
        raise ConfigError(
            f"attribute_index {attribute_index} out of range (K={dataset.n_attributes})"
        )
    by_identity = {}
    for idx, s in enumerate(dataset.samples):
        by_identity.setdefault(s.identity, {"with": [], "without": []})
        key = "with" if s.attributes[attribute_index] else "without"
        by_identity[s.identity][key].append(idx)

    identities, gallery, probe_with, probe_without, excluded = [], [], [], [], []
    for identity in sorted(by_identity):
        groups = by_identity[identity]
        if len(groups["without"]) < 2:
            excluded.append((identity, "fewer than 2 images without the attribute"))
            continue
        if len(groups["with"]) < 1:
            excluded.append((identity, "no image with the attribute"))
            continue
        rng = np.random.default_rng([seed, _STREAM_SPLIT, attribute_index, identity])
        without = list(groups["without"])
        g_pick = int(rng.integers(len(without)))
        gallery_idx = without.pop(g_pick)
        probe_wo_idx = without[int(rng.integers(len(without)))]
        probe_w_idx = groups["with"][int(rng.integers(len(groups["with"])))]
        identities.append(identity)
        gallery.append(gallery_idx)
        probe_with.append(probe_w_idx)
        probe_without.append(probe_wo_idx)

    if len(identities) < 2:
        raise DataError(
            f"attribute {attribute_index}: only {len(identities)} eligible identities "
            "(need >= 2); cannot build a split"
        )
    return AttributeSplit(
        attribute_index=attribute_index,
        identities=identities,
        gallery=gallery,
        probe_with=probe_with,
        probe_without=probe_without,
        excluded=excluded,
    )
