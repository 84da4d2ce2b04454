"""Visual saliency model on tangent viewports.

Pipeline per clip: project each ERP frame onto the viewport layout, encode
every tangent patch with a strided conv stack, add an embedding of the
viewport center, run factored attention blocks (temporal attention within a
viewport, then spatial attention across viewports within a frame), decode
the last frame's viewports into saliency patches and blend them back to ERP.
"""

from __future__ import annotations

import contextlib
import json
import math
import threading
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from . import sphere
from . import tensor as tt
from .nn import Conv2d, LayerNorm, Linear, Module, param
from .tensor import Tensor

__all__ = [
    "NetConfig",
    "SalViT360",
    "MultiHeadAttention",
    "VstaBlock",
    "AttentionCost",
    "attention_cost",
    "count_scores",
    "sampling_map",
    "model_forward",
    "position_features",
]


@dataclass(frozen=True)
class NetConfig:
    frames: int = 8
    patch_size: int = 224
    encoder_channels: tuple[int, ...] = (32, 64, 128, 256, 512)
    heads: int = 8
    depth: int = 6
    decoder_channels: tuple[int, ...] = (256, 128, 64, 32)
    mlp_ratio: int = 4
    ln_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(self.encoder_channels))
        object.__setattr__(self, "decoder_channels", tuple(self.decoder_channels))
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if not self.encoder_channels:
            raise ValueError("encoder needs at least one stage")
        if self.dim % self.heads:
            raise ValueError(f"token dim {self.dim} not divisible by {self.heads} heads")
        if self.patch_size % (2 ** len(self.encoder_channels)):
            raise ValueError("patch size must be divisible by 2**encoder_stages")

    @property
    def dim(self) -> int:
        return self.encoder_channels[-1]

    @property
    def feature_size(self) -> int:
        return self.patch_size // 2 ** len(self.encoder_channels)

    @property
    def output_patch_size(self) -> int:
        return self.feature_size * 2 ** len(self.decoder_channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        d["decoder_channels"] = list(self.decoder_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown NetConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def micro(cls, **overrides) -> "NetConfig":
        """Small configuration used for training demos and gradient checks."""
        base = dict(frames=2, patch_size=32, encoder_channels=(16, 32, 64), heads=4, depth=2,
                    decoder_channels=(64, 32, 16))
        base.update(overrides)
        return cls(**base)


# ----------------------------------------------------------- cost counting --


@dataclass(frozen=True)
class AttentionCost:
    factored: int
    joint: int
    factored_total: int
    joint_total: int


def attention_cost(frames: int, views: int, dim: int = 512) -> AttentionCost:
    """Score-matrix sizes for factored vs joint space-time attention.

    ``factored``/``joint`` are entries per (head, token group): one temporal
    F x F matrix plus one spatial T x T matrix, against a single (FT) x (FT)
    matrix. The ``*_total`` figures count multiplies over the whole token grid
    for scores plus value aggregation (2 * dim per score entry).
    """
    if frames < 1 or views < 1:
        raise ValueError("frames and views must be >= 1")
    factored = frames**2 + views**2
    joint = frames**2 * views**2
    grid_factored = views * frames**2 + frames * views**2
    grid_joint = (frames * views) ** 2
    return AttentionCost(factored, joint, 2 * dim * grid_factored, 2 * dim * grid_joint)


class _ScoreLog(threading.local):
    records: list[tuple[str, int, int, int]] | None = None


_SCORE_LOG = _ScoreLog()


@contextlib.contextmanager
def count_scores():
    """Record ``(kind, groups, heads, length)`` for every attention score matrix."""
    prev = _SCORE_LOG.records
    _SCORE_LOG.records = records = []
    try:
        yield records
    finally:
        _SCORE_LOG.records = prev


# ------------------------------------------------------------------ layers --


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, kind: str = "attn"):
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self._heads = heads
        self._kind = kind
        self._last_probs: np.ndarray | None = None

    def __call__(self, x: Tensor) -> Tensor:
        """Self-attention over axis 1 of ``x`` with shape (groups, length, dim)."""
        b, n, d = x.shape
        h = self._heads
        dh = d // h

        def split(t):
            return t.reshape(b, n, h, dh).transpose(0, 2, 1, 3)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = tt.scale(tt.matmul(q, k.transpose(0, 1, 3, 2)), 1.0 / math.sqrt(dh))
        probs = tt.softmax(scores, axis=-1)
        self._last_probs = probs.data
        if _SCORE_LOG.records is not None:
            _SCORE_LOG.records.append((self._kind, b, h, n))
        ctx = tt.matmul(probs, v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.out(ctx)


class VstaBlock(Module):
    """Pre-norm block: temporal attention, spatial attention, then MLP."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, mlp_ratio: int = 4,
                 eps: float = 1e-5):
        self.norm_t = LayerNorm(dim, eps)
        self.attn_t = MultiHeadAttention(dim, heads, rng, kind="temporal")
        self.norm_s = LayerNorm(dim, eps)
        self.attn_s = MultiHeadAttention(dim, heads, rng, kind="spatial")
        self.norm_m = LayerNorm(dim, eps)
        self.fc1 = Linear(dim, mlp_ratio * dim, rng, gain=math.sqrt(2.0))
        self.fc2 = Linear(mlp_ratio * dim, dim, rng)

    def vta(self, z: Tensor) -> Tensor:
        """Attention across the F frames of each viewport; ``z`` is (T, F, d)."""
        return z + self.attn_t(self.norm_t(z))

    def vsa(self, z: Tensor) -> Tensor:
        """Attention across the T viewports of each frame."""
        zs = z.transpose(1, 0, 2)
        zs = zs + self.attn_s(self.norm_s(zs))
        return zs.transpose(1, 0, 2)

    def mlp(self, z: Tensor) -> Tensor:
        return self.fc2(tt.relu(self.fc1(self.norm_m(z))))

    def __call__(self, z: Tensor) -> Tensor:
        z = self.vsa(self.vta(z))
        return z + self.mlp(z)


class Encoder(Module):
    def __init__(self, channels, rng):
        chans = (3,) + tuple(channels)
        self.stages = [Conv2d(a, b, rng, k=3, stride=2, pad=1) for a, b in zip(chans, chans[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for conv in self.stages:
            x = tt.relu(conv(x))
        return x


class DecoderStage(Module):
    def __init__(self, c_in, c_out, rng, eps):
        self.conv = Conv2d(c_in, c_out, rng)
        self.norm = LayerNorm(c_out, eps)

    def __call__(self, x: Tensor) -> Tensor:
        return tt.relu(self.norm(self.conv(tt.upsample_nearest(x, 2)), axis=1))


class Decoder(Module):
    def __init__(self, dim, channels, rng, eps):
        chans = (dim,) + tuple(channels)
        self.stages = [DecoderStage(a, b, rng, eps) for a, b in zip(chans, chans[1:])]
        self.head = Conv2d(chans[-1], 1, rng)

    def __call__(self, feat: Tensor, token: Tensor) -> Tensor:
        """``feat`` (T, C, s, s) plus broadcast ``token`` (T, C) -> (T, p', p')."""
        x = (feat.transpose(2, 3, 0, 1) + token).transpose(2, 3, 0, 1)
        for stage in self.stages:
            x = stage(x)
        y = tt.softplus(self.head(x))
        return y.reshape(y.shape[0], y.shape[2], y.shape[3])


def position_features(layout: sphere.ViewportLayout) -> np.ndarray:
    """(T, 4) array of (sin lat, cos lat, sin lon, cos lon) per viewport center."""
    lat, lon = layout.lat_lon()
    return np.stack([np.sin(lat), np.cos(lat), np.sin(lon), np.cos(lon)], axis=1)


class SalViT360(Module):
    def __init__(self, config: NetConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = config
        self.encoder = Encoder(config.encoder_channels, rng)
        self.pos_embed = param(rng.normal(0.0, 0.5, (4, config.dim)))
        self.blocks = [
            VstaBlock(config.dim, config.heads, rng, config.mlp_ratio, config.ln_eps)
            for _ in range(config.depth)
        ]
        self.decoder = Decoder(config.dim, config.decoder_channels, rng, config.ln_eps)

    def encode(self, patches: Tensor) -> tuple[Tensor, Tensor]:
        """(N, 3, p, p) patches -> (N, C, s, s) feature maps and (N, C) pooled tokens."""
        feat = self.encoder(patches)
        return feat, tt.mean(feat, axis=(2, 3))

    def encode_patch(self, patch: np.ndarray) -> tuple[Tensor, Tensor]:
        """Single (p, p, 3) patch -> (s, s, C) feature map and (C,) token."""
        p = self.config.patch_size
        patch = np.asarray(patch, dtype=np.float64)
        if patch.shape != (p, p, 3):
            raise ValueError(f"expected a ({p}, {p}, 3) patch, got {patch.shape}")
        feat, token = self.encode(Tensor(patch.transpose(2, 0, 1)[None].copy()))
        return feat[0].transpose(1, 2, 0), token[0]

    def decode_patch(self, feat_map: Tensor, token: Tensor) -> Tensor:
        """(s, s, C) feature map and (C,) token -> (p', p') saliency patch."""
        feat = tt.reshape(feat_map.transpose(2, 0, 1), (1,) + feat_map.shape[2:] + feat_map.shape[:2])
        return self.decoder(feat, tt.reshape(token, (1, token.shape[0])))[0]

    def add_pos_embed(self, tokens: Tensor, layout: sphere.ViewportLayout) -> Tensor:
        if len(layout) != tokens.shape[0]:
            raise ValueError(f"layout has {len(layout)} viewports, tokens have {tokens.shape[0]}")
        emb = tt.matmul(Tensor(position_features(layout)), self.pos_embed)
        return (tokens.transpose(1, 0, 2) + emb).transpose(1, 0, 2)

    def embed_clip(self, clip: np.ndarray, layout: sphere.ViewportLayout):
        """Tangent features for a clip; returns (tokens (T, F, d), last-frame feat maps)."""
        cfg = self.config
        clip = _check_clip(clip)
        f_count, h, w = clip.shape[:3]
        smap = sampling_map(layout.with_patch_size(cfg.patch_size), h, w)
        patches = np.stack([sphere.project_to_tangents(frame, smap) for frame in clip], axis=1)
        t_count = patches.shape[0]
        x = Tensor(patches.reshape(t_count * f_count, cfg.patch_size, cfg.patch_size, 3)
                   .transpose(0, 3, 1, 2).copy())
        feat, tokens = self.encode(x)
        tokens = self.add_pos_embed(tokens.reshape(t_count, f_count, cfg.dim), layout)
        s = cfg.feature_size
        last_feat = feat.reshape(t_count, f_count, cfg.dim, s, s)[:, f_count - 1]
        return tokens, last_feat

    def decode_to_erp(self, tokens: Tensor, last_feat: Tensor, layout: sphere.ViewportLayout,
                      height: int, width: int, weighting: str = "uniform") -> Tensor:
        f_count = tokens.shape[1]
        patches = self.decoder(last_feat, tokens[:, f_count - 1])
        p_out = self.config.output_patch_size
        smap = sampling_map(layout.with_patch_size(p_out), height, width)
        flat = patches.reshape(patches.shape[0] * p_out * p_out, 1)
        erp = tt.sparse_matmul(smap.backprojection_matrix(weighting), flat).reshape(height, width)
        return erp / tt.sum(erp)

    def __call__(self, clip: np.ndarray, layout: sphere.ViewportLayout) -> Tensor:
        tokens, last_feat = self.embed_clip(clip, layout)
        for block in self.blocks:
            tokens = block(tokens)
        h, w = np.asarray(clip).shape[1:3]
        return self.decode_to_erp(tokens, last_feat, layout, h, w)


def _check_clip(clip) -> np.ndarray:
    clip = np.asarray(clip, dtype=np.float64)
    if clip.ndim == 3:  # grayscale frames
        clip = np.repeat(clip[..., None], 3, axis=-1)
    if clip.ndim != 4 or clip.shape[0] == 0 or clip.shape[3] != 3:
        raise ValueError(f"clip must be a non-empty (F, H, W, 3) array, got {clip.shape}")
    if clip.shape[2] != 2 * clip.shape[1]:
        raise ValueError("frames must satisfy W == 2H")
    return clip


@lru_cache(maxsize=32)
def sampling_map(layout: sphere.ViewportLayout, height: int, width: int) -> sphere.SamplingMap:
    """Memoized :func:`sphere.build_sampling_map` (maps are immutable)."""
    return sphere.build_sampling_map(layout, height, width)


def model_forward(clip: np.ndarray, layout: sphere.ViewportLayout, model: SalViT360) -> Tensor:
    return model(clip, layout)


def save_config(config: NetConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=1)
