"""Template generator: convolutional backbone, two-level attention, fusion.

The bottom-up pathway is four plain blocks (3x3 conv, rectifier, 2x2 average
pool), each halving the spatial resolution; the global embedding is a linear
projection of the spatially averaged last block.  The top-down pathway
projects the global embedding back to the channel widths of the last two
blocks, broadcast-adds it, and squashes a two-layer 1x1-conv head into a
single-channel logistic mask per level.  Level 3 pools the masked map
directly; level 2 pools the complement so training can push occlusion-salient
regions out of the local feature.  Global and local features are concatenated
and linearly fused into the final template.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError


@dataclass(frozen=True)
class BackboneConfig:
    channels: tuple = (8, 16, 32, 64)
    embedding_dim: int = 32
    image_size: int = 64

    def validate(self):
        if len(self.channels) != 4 or any(c < 1 for c in self.channels):
            raise ConfigError(f"channels must be 4 positive ints, got {self.channels}")
        if self.image_size % 16 != 0:
            raise ConfigError(f"image_size must be divisible by 16, got {self.image_size}")
        if self.embedding_dim < 8:
            raise ConfigError(f"embedding_dim must be >= 8, got {self.embedding_dim}")


@dataclass
class FeatureMaps:
    b1: torch.Tensor
    b2: torch.Tensor
    b3: torch.Tensor
    b4: torch.Tensor
    t_g: torch.Tensor


@dataclass
class TemplateBundle:
    t_g: torch.Tensor
    t_l2: torch.Tensor
    t_l3: torch.Tensor
    t: torch.Tensor
    a2: torch.Tensor  # (B, 1, H2, W2), values in (0,1)
    a3: torch.Tensor  # (B, 1, H3, W3), values in (0,1)


class Backbone(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        config.validate()
        self.config = config
        c1, c2, c3, c4 = config.channels
        self.conv1 = nn.Conv2d(1, c1, 3, padding=1)
        self.conv2 = nn.Conv2d(c1, c2, 3, padding=1)
        self.conv3 = nn.Conv2d(c2, c3, 3, padding=1)
        self.conv4 = nn.Conv2d(c3, c4, 3, padding=1)
        self.pool = nn.AvgPool2d(2)
        self.fc = nn.Linear(c4, config.embedding_dim)

    def forward(self, images) -> FeatureMaps:
        if images.dim() == 3:
            images = images.unsqueeze(1)
        if images.shape[-1] != self.config.image_size or images.shape[-2] != self.config.image_size:
            raise ConfigError(
                f"input is {tuple(images.shape[-2:])}, model expects "
                f"{self.config.image_size}x{self.config.image_size}"
            )
        b1 = self.pool(torch.relu(self.conv1(images)))
        b2 = self.pool(torch.relu(self.conv2(b1)))
        b3 = self.pool(torch.relu(self.conv3(b2)))
        b4 = self.pool(torch.relu(self.conv4(b3)))
        t_g = self.fc(b4.mean(dim=(2, 3)))
        return FeatureMaps(b1=b1, b2=b2, b3=b3, b4=b4, t_g=t_g)


class MaskHead(nn.Module):
    """Project the global embedding into a feature map's channel space,
    broadcast-add, and reduce to a single-channel logistic mask."""

    def __init__(self, embedding_dim, channels):
        super().__init__()
        hidden = max(channels // 2, 1)
        self.proj = nn.Linear(embedding_dim, channels)
        self.reduce1 = nn.Conv2d(channels, hidden, 1)
        self.reduce2 = nn.Conv2d(hidden, 1, 1)

    def forward(self, t_g, feature_map):
        if feature_map.shape[1] != self.reduce1.in_channels:
            raise ConfigError(
                f"feature map has {feature_map.shape[1]} channels, head expects "
                f"{self.reduce1.in_channels}"
            )
        mixed = feature_map + self.proj(t_g)[:, :, None, None]
        logits = self.reduce2(torch.relu(self.reduce1(mixed)))
        return torch.sigmoid(logits)


class AttentionModule(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        _, c2, c3, _ = config.channels
        d = config.embedding_dim
        self.head3 = MaskHead(d, c3)
        self.head2 = MaskHead(d, c2)
        self.fuse = nn.Linear(d + c2 + c3, d)

    def forward(self, maps: FeatureMaps) -> TemplateBundle:
        a3, t_l3 = attend_level3(maps.t_g, maps.b3, self.head3)
        a2, t_l2 = attend_level2(maps.t_g, maps.b2, self.head2)
        t = aggregate(maps.t_g, t_l2, t_l3, self.fuse)
        return TemplateBundle(t_g=maps.t_g, t_l2=t_l2, t_l3=t_l3, t=t, a2=a2, a3=a3)


def attend_level3(t_g, b3, head: MaskHead):
    """Self-attention pooling: mask the map and spatially average it."""
    a3 = head(t_g, b3)
    t_l3 = (a3 * b3).mean(dim=(2, 3))
    return a3, t_l3


def attend_level2(t_g, b2, head: MaskHead):
    """Complement pooling: average the map where the mask is low, so the
    mask can learn to mark attribute/occlusion-salient regions for removal."""
    a2 = head(t_g, b2)
    t_l2 = ((1.0 - a2) * b2).mean(dim=(2, 3))
    return a2, t_l2


def aggregate(t_g, t_l2, t_l3, fuse: nn.Linear):
    return fuse(torch.cat([t_g, t_l2, t_l3], dim=1))


class OreoModel(nn.Module):
    """Backbone + attention + identity/attribute heads.

    Attention parameters are always constructed (so a fixed seed yields the
    same initialization whatever the toggles), but with `use_attention` off
    the template is the raw global embedding and the attention tensors never
    enter the graph.
    """

    def __init__(self, config: BackboneConfig, n_identities, n_attributes, use_attention=True):
        super().__init__()
        config.validate()
        if n_identities < 1:
            raise ConfigError("need at least one identity")
        self.config = config
        self.n_identities = n_identities
        self.n_attributes = n_attributes
        self.use_attention = use_attention
        self.backbone = Backbone(config)
        self.attention = AttentionModule(config)
        self.classifier = nn.Linear(config.embedding_dim, n_identities)
        self.attr_head = (
            nn.Linear(config.embedding_dim, n_attributes) if n_attributes > 0 else None
        )

    def check_finite(self):
        for name, p in self.named_parameters():
            if not torch.isfinite(p).all():
                raise ConfigError(f"non-finite parameter detected: {name}")

    def forward(self, images):
        maps = self.backbone(images)
        if self.use_attention:
            bundle = self.attention(maps)
        else:
            bundle = TemplateBundle(
                t_g=maps.t_g, t_l2=None, t_l3=None, t=maps.t_g, a2=None, a3=None
            )
        return maps, bundle

    def templates(self, images):
        _, bundle = self.forward(images)
        return bundle.t


def init_params(model: nn.Module, seed: int):
    """Fan-in-scaled Gaussian weights, zero biases; deterministic per seed."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for _, p in model.named_parameters():
            if p.dim() > 1:
                fan_in = p[0].numel()
                std = math.sqrt(2.0 / fan_in)
                p.copy_(torch.randn(p.shape, generator=gen, dtype=torch.float32) * std)
            else:
                p.zero_()
    return model


def bilinear_upsample(mask, out_size):
    """Corner-aligned bilinear resampling of a 2-d array."""
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d mask, got shape {m.shape}")
    if isinstance(out_size, int):
        out_h = out_w = out_size
    else:
        out_h, out_w = out_size
    h, w = m.shape

    def _coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out)
        return np.linspace(0.0, n_in - 1.0, n_out)

    ys = _coords(h, out_h)
    xs = _coords(w, out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = m[np.ix_(y0, x0)] * (1 - wx) + m[np.ix_(y0, x1)] * wx
    bot = m[np.ix_(y1, x0)] * (1 - wx) + m[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def render_attention_raster(mask, out_size, normalize=False):
    """Upsample a mask and map it onto 0..255 (round-half-up).

    With `normalize` the mask's min maps to 0 and max to 255; a constant
    mask normalizes to all zeros.
    """
    up = bilinear_upsample(mask, out_size)
    if normalize:
        lo, hi = float(up.min()), float(up.max())
        up = (up - lo) / (hi - lo) if hi > lo else np.zeros_like(up)
    return np.clip(np.floor(up * 255.0 + 0.5), 0, 255).astype(np.uint8)
