"""First-order ambisonics: encoding, rotation, directional decoding, features.

Channel order is (W, Y, Z, X). W carries a 1/sqrt(2) gain at encode time and
X/Y/Z are the Cartesian direction gains ``(cos lat cos lon, cos lat sin lon,
sin lat)`` of each source, so the forward decode ``2 (sqrt(2) W + X)`` of a
unit source at angle ``g`` from +X gives ``2 (1 + cos g)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import signal

from . import tensor as tt
from .nn import Linear, Module
from .sphere import SphericalCoord, ViewportLayout
from .tensor import Tensor

SQRT2 = math.sqrt(2.0)
TARGET_RATE = 32000
MEL_WIN_S = 0.025
MEL_HOP_S = 0.010
N_MELS = 128
MEL_EPS = 1e-10
MAX_WINDOW_S = 4.0


@dataclass(frozen=True)
class MonoClip:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError("mono clip must be one-dimensional")
        if not np.isfinite(s).all():
            raise ValueError("mono clip has non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return len(self.samples)

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2))) if len(self) else 0.0


@dataclass(frozen=True)
class FoaClip:
    """Four equal-length channels stored as rows ``(W, Y, Z, X)``."""

    data: np.ndarray
    sample_rate: float

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] != 4:
            raise ValueError(f"FOA data must have shape (4, N), got {d.shape}")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        object.__setattr__(self, "data", d)

    @property
    def w(self):
        return self.data[0]

    @property
    def y(self):
        return self.data[1]

    @property
    def z(self):
        return self.data[2]

    @property
    def x(self):
        return self.data[3]

    def __len__(self) -> int:
        return self.data.shape[1]

    @classmethod
    def from_wxyz(cls, data, sample_rate) -> "FoaClip":
        """Build from channels ordered (W, X, Y, Z)."""
        d = np.asarray(data)
        return cls(d[[0, 2, 3, 1]], sample_rate)

    def last_seconds(self, seconds: float) -> "FoaClip":
        """Final ``seconds`` of audio, zero-padded at the front when shorter."""
        n = int(round(seconds * self.sample_rate))
        if len(self) >= n:
            return FoaClip(self.data[:, len(self) - n :], self.sample_rate)
        pad = np.zeros((4, n - len(self)))
        return FoaClip(np.concatenate([pad, self.data], axis=1), self.sample_rate)


def direction_gains(lat, lon) -> np.ndarray:
    cl = math.cos(lat)
    return np.array([cl * math.cos(lon), cl * math.sin(lon), math.sin(lat)])


def encode_sources(sources: Sequence[tuple[MonoClip, SphericalCoord]],
                   sample_rate: float | None = None, length: int | None = None) -> FoaClip:
    """Sum plane-wave sources into an FOA clip.

    An empty source list needs ``sample_rate`` and ``length`` and yields silence.
    """
    if not sources:
        if sample_rate is None or length is None:
            raise ValueError("empty source list requires sample_rate and length")
        return FoaClip(np.zeros((4, length)), sample_rate)
    rate = sources[0][0].sample_rate
    n = len(sources[0][0])
    out = np.zeros((4, n))
    for clip, where in sources:
        if clip.sample_rate != rate or len(clip) != n:
            raise ValueError("all sources must share sample rate and length")
        gx, gy, gz = direction_gains(where.lat, where.lon)
        s = clip.samples
        out[0] += s / SQRT2
        out[1] += gy * s
        out[2] += gz * s
        out[3] += gx * s
    return FoaClip(out, rate)


def rotation_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """``R_roll @ R_pitch @ R_yaw`` acting on Cartesian (x, y, z).

    Yaw turns azimuth by ``+yaw`` about z, pitch raises elevation by
    ``+pitch`` about y, roll turns about x.
    """
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    r_yaw = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    r_pitch = np.array([[cp, 0.0, -sp], [0.0, 1.0, 0.0], [sp, 0.0, cp]])
    r_roll = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return r_roll @ r_pitch @ r_yaw


def rotate_foa_matrix(foa: FoaClip, rot: np.ndarray) -> FoaClip:
    xyz = foa.data[[3, 1, 2]]
    rx, ry, rz = rot @ xyz
    return FoaClip(np.stack([foa.w, ry, rz, rx]), foa.sample_rate)


def rotate_foa(foa: FoaClip, yaw: float = 0.0, pitch: float = 0.0, roll: float = 0.0) -> FoaClip:
    if yaw == 0.0 and pitch == 0.0 and roll == 0.0:
        return FoaClip(foa.data.copy(), foa.sample_rate)
    return rotate_foa_matrix(foa, rotation_matrix(yaw, pitch, roll))


def decode_forward(foa: FoaClip) -> MonoClip:
    """Directional mono signal toward +X: ``(sqrt(2) W + X) * 2``."""
    return MonoClip((SQRT2 * foa.w + foa.x) * 2, foa.sample_rate)


def viewport_waveforms(foa: FoaClip, layout: ViewportLayout) -> list[MonoClip]:
    """One mono clip per viewport: rotate its center onto +X, then decode."""
    out = []
    for c in layout.centers:
        rot = rotation_matrix(-c.lon, -c.lat, 0.0)
        out.append(decode_forward(rotate_foa_matrix(foa, rot)))
    return out


def _resample_filter(up: int, down: int, taps_per_phase: int = 32, beta: float = 8.6):
    n = taps_per_phase * max(up, down)
    n += 1 - n % 2
    return signal.firwin(n, 1.0 / max(up, down), window=("kaiser", beta)) * up


def resample(clip: MonoClip, target_rate: float = TARGET_RATE) -> MonoClip:
    """Rational polyphase resampling with a Kaiser-windowed sinc filter."""
    if target_rate <= 0:
        raise ValueError("target rate must be positive")
    if target_rate == clip.sample_rate:
        return MonoClip(clip.samples.copy(), clip.sample_rate)
    ratio = Fraction(target_rate / clip.sample_rate).limit_denominator(10000)
    up, down = ratio.numerator, ratio.denominator
    y = signal.resample_poly(clip.samples, up, down, window=_resample_filter(up, down))
    return MonoClip(y, target_rate)


# ------------------------------------------------------------------- mel --


@dataclass(frozen=True)
class MelSpec:
    values: np.ndarray  # (frames, n_mels) log energies
    sample_rate: float
    win: int
    hop: int
    n_fft: int

    @property
    def frames(self) -> int:
        return self.values.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: float, f_min=0.0, f_max=None) -> np.ndarray:
    """Triangular HTK-scale filters, shape (n_mels, n_fft // 2 + 1)."""
    f_max = sample_rate / 2 if f_max is None else f_max
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def mel_spectrogram(clip: MonoClip, n_mels: int = N_MELS) -> MelSpec:
    """Log-mel energies with 25 ms Hann windows and a 10 ms hop.

    Expects 32 kHz audio; other rates are resampled first.
    """
    if clip.sample_rate != TARGET_RATE:
        clip = resample(clip, TARGET_RATE)
    sr = clip.sample_rate
    win = int(round(MEL_WIN_S * sr))
    hop = int(round(MEL_HOP_S * sr))
    x = clip.samples
    if len(x) < win:
        raise ValueError(f"clip of {len(x)} samples is shorter than one {win}-sample window")
    n_fft = 1 << (win - 1).bit_length()
    n_frames = (len(x) - win) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]
    spec = np.abs(np.fft.rfft(frames * signal.get_window("hann", win, fftbins=True), n=n_fft)) ** 2
    energy = spec @ mel_filterbank(n_mels, n_fft, sr).T
    return MelSpec(np.log(MEL_EPS + energy), sr, win, hop, n_fft)


class AudioFeatureMLP(Module):
    """Time-pooled log-mel (n_mels) -> hidden -> d_audio, a stand-in audio backbone."""

    def __init__(self, rng: np.random.Generator, n_mels: int = N_MELS, hidden: int = 128,
                 d_audio: int = 128):
        self.fc1 = Linear(n_mels, hidden, rng, gain=math.sqrt(2.0))
        self.fc2 = Linear(hidden, d_audio, rng)

    def __call__(self, pooled: Tensor) -> Tensor:
        return self.fc2(tt.relu(self.fc1(pooled)))


def pool_mel(mel: MelSpec) -> np.ndarray:
    return mel.values.mean(axis=0)


def audio_features(mel: MelSpec, mlp: AudioFeatureMLP) -> Tensor:
    pooled = Tensor(pool_mel(mel)[None])
    return mlp(pooled)[0]
