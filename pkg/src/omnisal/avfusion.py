"""Audio-conditioned bottleneck adapters running beside frozen attention blocks.

Each adapter reads the concatenation of a visual token and the audio
feature of its viewport, squeezes it through a k-dim bottleneck and adds the
result, scaled by a learnable ``s``, to the host block's MLP output. With no
audio the adapters are skipped entirely and the visual model runs unchanged.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import audio
from . import tensor as tt
from .net import SalViT360, VstaBlock
from .nn import LayerNorm, Module, param
from .sphere import ViewportLayout
from .tensor import Tensor


@dataclass(frozen=True)
class AvConfig:
    d_audio: int = 128
    bottleneck: int = 64
    s_init: float = 0.1
    audio_hidden: int = 128
    window_s: float = audio.MAX_WINDOW_S

    def __post_init__(self):
        if self.d_audio < 1 or self.bottleneck < 1:
            raise ValueError("d_audio and bottleneck must be >= 1")
        if not 0 < self.window_s <= audio.MAX_WINDOW_S:
            raise ValueError(f"audio window must lie in (0, {audio.MAX_WINDOW_S}] seconds")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AvConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown AvConfig keys: {sorted(unknown)}")
        return cls(**d)


class AdapterBlock(Module):
    def __init__(self, dim: int, d_audio: int, k: int, rng: np.random.Generator,
                 s_init: float = 0.1):
        if not (k < dim and k < d_audio):
            raise ValueError(f"bottleneck {k} must be smaller than both {dim} and {d_audio}")
        self.norm = LayerNorm(dim + d_audio)
        self.w_down = param(rng.normal(0.0, 1.0 / math.sqrt(dim + d_audio), (dim + d_audio, k)))
        self.w_up = param(np.zeros((k, dim)))
        self.scale = param(np.array(s_init))

    def conditioning(self, z_vis: Tensor, z_aud: Tensor) -> Tensor:
        """``ReLU(LN([z_vis, z_aud]) W_down) W_up`` for tokens (T, F, d) and audio (T, d_a)."""
        t_count, f_count, dim = z_vis.shape
        if z_aud.shape[0] != t_count or z_aud.ndim != 2:
            raise ValueError(f"audio features {z_aud.shape} do not pair with tokens {z_vis.shape}")
        if z_aud.shape[1] + dim != self.w_down.shape[0]:
            raise ValueError("audio/visual dims do not match the adapter")
        joint = tt.concat([z_vis.transpose(1, 0, 2), tt.expand(z_aud, (f_count,))], axis=2)
        hidden = tt.relu(tt.matmul(self.norm(joint), self.w_down))
        return tt.matmul(hidden, self.w_up).transpose(1, 0, 2)

    def __call__(self, host: VstaBlock, z: Tensor, z_aud: Tensor) -> Tensor:
        """Host block with the adapter in parallel to its MLP."""
        z = host.vsa(host.vta(z))
        out = z + host.mlp(z)
        return out + self.scale * self.conditioning(z, z_aud)

    def expected_parameter_count(self) -> int:
        dd, k = self.w_down.shape
        dim = self.w_up.shape[1]
        return dd * k + k * dim + 2 * dd + 1


class SalViT360AV(Module):
    def __init__(self, visual: SalViT360, config: AvConfig = AvConfig(), seed: int = 1):
        rng = np.random.default_rng(seed)
        self.visual = visual
        self.av_config = config
        dim = visual.config.dim
        self.adapters = [
            AdapterBlock(dim, config.d_audio, config.bottleneck, rng, config.s_init)
            for _ in visual.blocks
        ]
        self.audio_mlp = audio.AudioFeatureMLP(
            rng, hidden=config.audio_hidden, d_audio=config.d_audio
        )

    def pooled_audio(self, foa: audio.FoaClip, layout: ViewportLayout) -> np.ndarray:
        """(T, n_mels) time-averaged log-mel of each viewport's directional signal."""
        if len(foa) == 0:
            raise ValueError("empty FOA clip")
        clip = foa.last_seconds(self.av_config.window_s)
        mels = [audio.mel_spectrogram(audio.resample(w)) for w in audio.viewport_waveforms(clip, layout)]
        return np.stack([audio.pool_mel(m) for m in mels])

    def audio_tokens(self, pooled: np.ndarray) -> Tensor:
        return self.audio_mlp(Tensor(pooled))

    def __call__(self, clip, foa: audio.FoaClip | None, layout: ViewportLayout,
                 pooled: np.ndarray | None = None) -> Tensor:
        if foa is None and pooled is None:
            return self.visual(clip, layout)
        if pooled is None:
            pooled = self.pooled_audio(foa, layout)
        if pooled.shape[0] != len(layout):
            raise ValueError("audio features do not match the layout")
        z_aud = self.audio_tokens(pooled)
        tokens, last_feat = self.visual.embed_clip(clip, layout)
        for block, adapter in zip(self.visual.blocks, self.adapters):
            tokens = adapter(block, tokens, z_aud)
        h, w = np.asarray(clip).shape[1:3]
        return self.visual.decode_to_erp(tokens, last_feat, layout, h, w)

    def set_scale(self, value: float) -> None:
        for a in self.adapters:
            a.scale.data[...] = value


def av_model_forward(clip, foa, layout, model: SalViT360AV) -> Tensor:
    return model(clip, foa, layout)


TRAINABLE_PREFIXES = ("adapters.", "audio_mlp.")


def freeze_mask(model: SalViT360AV) -> dict[str, Tensor]:
    """Freeze the visual model; returns the trainable (adapter + audio MLP) parameters."""
    params = model.named_parameters()
    trainable = {}
    for name, p in params.items():
        keep = name.startswith(TRAINABLE_PREFIXES)
        p.requires_grad = keep
        if keep:
            trainable[name] = p
    return trainable
