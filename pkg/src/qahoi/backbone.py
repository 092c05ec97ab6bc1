"""Hierarchical feature extractor and the flattened multi-scale token sequence.

The stand-in network downsamples by 4, 8, 16 and 32 with patchifying
convolutions. The /4 stage is computed and dropped; the last three stages
give x1 (2C_s, /8), x2 (4C_s, /16) and x3 (8C_s, /32). An optional x4
(C_d, /64) is a stride-2 3x3 convolution on x3.

Feature maps are stored channels-last, (B, H, W, C).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .config import BackboneConfig
from .layers import Conv2d, LayerNorm, Module, Parameter, trunc_normal
from .numerics import Array

PIXEL_MEAN = np.array([0.485, 0.456, 0.406])
PIXEL_STD = np.array([0.229, 0.224, 0.225])


@dataclass
class FeatureLevel:
    channels: int
    height: int
    width: int
    features: Array  # (B, H, W, C)
    stride: int


@dataclass
class FeaturePyramid:
    levels: list[FeatureLevel]
    image_sizes: list[tuple[int, int]]  # unpadded (H, W) per batch item
    padded_size: tuple[int, int]


@dataclass
class FlattenedSequence:
    tokens: Array  # (B, N_S, C_d)
    level_index: np.ndarray  # (N_S,)
    positions: np.ndarray  # (N_S, 2) normalized (x, y) of pixel centers
    level_shapes: list[tuple[int, int]]
    level_start: list[int]
    padding_mask: np.ndarray  # (B, N_S), True where the token lies in padding
    valid_ratios: np.ndarray  # (B, 2), unpadded/padded extent as (x, y)

    @property
    def num_tokens(self) -> int:
        return int(self.level_index.shape[0])


def pad_multiple(use_extra_level: bool) -> int:
    return 64 if use_extra_level else 32


def prepare_images(images, use_extra_level: bool = False) -> tuple[Array, list[tuple[int, int]]]:
    """Normalize a list of 3 x H x W images (values in [0, 1]) and zero-pad them.

    Padding goes on the bottom/right, up to a common size that is a multiple
    of 32 (64 when the extra level is used).
    """
    if isinstance(images, np.ndarray) and images.ndim == 3:
        images = [images]
    arrays = [np.asarray(im.data if isinstance(im, Array) else im, dtype=float) for im in images]
    for im in arrays:
        if im.ndim != 3 or im.shape[0] != 3 or im.shape[1] <= 0 or im.shape[2] <= 0:
            raise ValueError(f"expected a 3 x H x W image with positive extents, got {im.shape}")
    multiple = pad_multiple(use_extra_level)
    sizes = [(im.shape[1], im.shape[2]) for im in arrays]
    ph = max(multiple, -(-max(h for h, _ in sizes) // multiple) * multiple)
    pw = max(multiple, -(-max(w for _, w in sizes) // multiple) * multiple)
    batch = np.zeros((len(arrays), ph, pw, 3))
    for i, im in enumerate(arrays):
        hwc = im.transpose(1, 2, 0)
        batch[i, : im.shape[1], : im.shape[2]] = (hwc - PIXEL_MEAN) / PIXEL_STD
    return Array(batch), sizes


class ConvBlock(Module):
    """Convolution, channel layer norm, ReLU; optionally residual."""

    def __init__(self, in_ch, out_ch, kernel, stride, padding, rng, residual=False):
        self.conv = Conv2d(in_ch, out_ch, kernel, rng, stride=stride, padding=padding)
        self.norm = LayerNorm(out_ch)
        self.residual = residual

    def forward(self, x: Array) -> Array:
        y = nx.relu(self.norm(self.conv(x)))
        return x + y if self.residual else y


class Stage(Module):
    def __init__(self, in_ch, out_ch, stride, depth, rng):
        self.down = ConvBlock(in_ch, out_ch, stride, stride, 0, rng)
        self.blocks = [ConvBlock(out_ch, out_ch, 3, 1, 1, rng, residual=True) for _ in range(depth)]

    def forward(self, x: Array) -> Array:
        x = self.down(x)
        for block in self.blocks:
            x = block(x)
        return x


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        self.cfg = cfg
        c = cfg.base_dim
        widths = [c, 2 * c, 4 * c, 8 * c]
        strides = [4, 2, 2, 2]
        ins = [3] + widths[:-1]
        self.stages = [Stage(i, o, s, cfg.stage_depth, rng) for i, o, s in zip(ins, widths, strides)]
        if cfg.use_extra_level:
            self.extra = ConvBlock(8 * c, cfg.model_dim, 3, 2, 1, rng)

    def extract_pyramid(self, images, image_sizes=None) -> FeaturePyramid:
        """Run the stages on a prepared (B, H, W, 3) batch or raw 3 x H x W image(s)."""
        if not isinstance(images, Array) or images.ndim != 4:
            images, image_sizes = prepare_images(images, self.cfg.use_extra_level)
        B, H, W, _ = images.shape
        if image_sizes is None:
            image_sizes = [(H, W)] * B
        x = images
        levels = []
        stride = 1
        for i, stage in enumerate(self.stages):
            x = stage(x)
            stride *= stage.down.conv.stride
            if i > 0:
                levels.append(FeatureLevel(x.shape[3], x.shape[1], x.shape[2], x, stride))
        if self.cfg.use_extra_level:
            x4 = self.extra(x)
            levels.append(FeatureLevel(x4.shape[3], x4.shape[1], x4.shape[2], x4, stride * 2))
        return FeaturePyramid(levels, list(image_sizes), (H, W))

    forward = extract_pyramid


def sine_encoding(positions: np.ndarray, dim: int, temperature: float = 10000.0) -> np.ndarray:
    """Fixed 2-D sinusoidal encoding: first half encodes y, second half x.

    Within each half even channels hold sines and odd channels cosines of
    2*pi*coordinate at geometrically spaced frequencies.
    """
    if dim % 4:
        raise ValueError("encoding width must be divisible by 4")
    half = dim // 2
    dim_t = temperature ** (2 * (np.arange(half) // 2) / half)
    out = []
    for coord in (positions[:, 1], positions[:, 0]):
        phase = coord[:, None] * 2 * math.pi / dim_t
        enc = np.empty_like(phase)
        enc[:, 0::2] = np.sin(phase[:, 0::2])
        enc[:, 1::2] = np.cos(phase[:, 1::2])
        out.append(enc)
    return np.concatenate(out, axis=1)


class FeatureProjector(Module):
    """Per-level 1x1 projection to C_d, flattening, and level-aware positions.

    Levels beyond ``len(in_channels)`` (the extra x4 level) are already C_d
    wide and pass through unprojected.
    """

    def __init__(self, in_channels: list[int], model_dim: int, rng: np.random.Generator,
                 num_levels: int | None = None):
        num_levels = num_levels or len(in_channels)
        self.weights = [Parameter(trunc_normal(rng, (c, model_dim)), init_spec="trunc_normal(0.02)")
                        for c in in_channels]
        self.biases = [Parameter(np.zeros(model_dim), init_spec="zeros") for _ in in_channels]
        self.level_embed = Parameter(trunc_normal(rng, (num_levels, model_dim), std=1.0),
                                     init_spec="trunc_normal(1.0)")
        self.model_dim = model_dim

    def project_and_flatten(self, pyr: FeaturePyramid) -> FlattenedSequence:
        tokens, level_index, positions, shapes, starts, masks = [], [], [], [], [], []
        ph, pw = pyr.padded_size
        start = 0
        for li, level in enumerate(pyr.levels):
            B, h, w, c = level.features.shape
            flat = level.features.reshape(B, h * w, c)
            if li < len(self.weights):
                flat = flat @ self.weights[li] + self.biases[li]
            tokens.append(flat)
            ys, xs = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
            positions.append(np.stack([xs.ravel(), ys.ravel()], axis=1))
            level_index.append(np.full(h * w, li))
            shapes.append((h, w))
            starts.append(start)
            start += h * w
            rows = np.arange(h)[:, None] * level.stride
            cols = np.arange(w)[None, :] * level.stride
            masks.append(np.stack([~((rows < H) & (cols < W)).ravel() for H, W in pyr.image_sizes]))
        ratios = np.array([[W / pw, H / ph] for H, W in pyr.image_sizes])
        return FlattenedSequence(
            tokens=nx.concat(tokens, axis=1),
            level_index=np.concatenate(level_index),
            positions=np.concatenate(positions),
            level_shapes=shapes,
            level_start=starts,
            padding_mask=np.concatenate(masks, axis=1),
            valid_ratios=ratios,
        )

    def positional_encoding(self, seq: FlattenedSequence) -> Array:
        """Sinusoidal position of each token plus its level's learned embedding."""
        fixed = Array(sine_encoding(seq.positions, self.model_dim), dtype=self.level_embed.dtype)
        return fixed + self.level_embed[seq.level_index]
