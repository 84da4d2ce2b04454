"""File formats: PFM float rasters, 8-bit PNG, RIFF/WAV audio, layout JSON."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.io import wavfile

from .audio import FoaClip, MonoClip
from .sphere import ViewportLayout


class DataError(ValueError):
    """Malformed or unsupported input file."""


# --------------------------------------------------------------------- PFM --

_PFM_HEADER = re.compile(rb"^(PF|Pf)\s+(\d+)\s+(\d+)\s+(-?[0-9.eE+-]+)\s", re.S)


def write_pfm(path, arr) -> None:
    """Little-endian PFM; rows stored bottom-to-top as the format requires."""
    a = np.asarray(arr, dtype="<f4")
    if a.ndim == 2:
        tag = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM holds (H, W) or (H, W, 3) data, got {a.shape}")
    h, w = a.shape[:2]
    with open(path, "wb") as fh:
        fh.write(tag + b"\n%d %d\n-1.0\n" % (w, h))
        fh.write(np.ascontiguousarray(a[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = _PFM_HEADER.match(raw[:128])
    if not m:
        raise DataError(f"{path}: not a PFM file")
    color = m.group(1) == b"PF"
    w, h = int(m.group(2)), int(m.group(3))
    scale = float(m.group(4))
    dtype = "<f4" if scale < 0 else ">f4"
    shape = (h, w, 3) if color else (h, w)
    n = int(np.prod(shape))
    body = raw[m.end():]
    if len(body) < 4 * n:
        raise DataError(f"{path}: truncated PFM payload")
    data = np.frombuffer(body, dtype=dtype, count=n).reshape(shape)
    return data[::-1].astype(np.float64)


# --------------------------------------------------------------------- PNG --


def write_png(path, arr, normalize: bool = True) -> None:
    """8-bit grayscale or RGB; ``normalize`` min-max stretches float data."""
    a = np.asarray(arr, dtype=np.float64)
    if normalize:
        lo, hi = a.min(), a.max()
        a = (a - lo) / (hi - lo) * 255.0 if hi > lo else np.zeros_like(a)
    Image.fromarray(np.clip(np.rint(a), 0, 255).astype(np.uint8)).save(path)


def read_png(path, gray: bool = False) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("L" if gray else "RGB")
            return np.asarray(im, dtype=np.float64)
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc


def read_raster(path, gray: bool = False) -> np.ndarray:
    """PFM as float, anything else through Pillow in the 0-255 range."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        a = read_pfm(path)
        if gray and a.ndim == 3:
            a = a.mean(axis=2)
        return a
    return read_png(path, gray=gray)


def list_frames(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{d}: not a directory")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in (".png", ".pfm"))
    if not files:
        raise DataError(f"{d}: no PNG or PFM frames")
    return files


# --------------------------------------------------------------------- WAV --


def _to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2147483648.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    raise DataError(f"unsupported WAV sample type {data.dtype}")


def read_wav(path) -> tuple[np.ndarray, int]:
    """Samples as float64 (N, C) in [-1, 1) and the sample rate.

    scipy reads 24-bit PCM left-aligned into int32, so one scale covers both.
    """
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    data = _to_float(data)
    if data.ndim == 1:
        data = data[:, None]
    return data, int(rate)


def read_mono_wav(path) -> MonoClip:
    data, rate = read_wav(path)
    if data.shape[1] != 1:
        raise DataError(f"{path}: expected 1 channel, got {data.shape[1]}")
    return MonoClip(data[:, 0], rate)


def read_foa_wav(path, wxyz: bool = False) -> FoaClip:
    """4-channel file as (W, Y, Z, X), or (W, X, Y, Z) when ``wxyz`` is set."""
    data, rate = read_wav(path)
    if data.shape[1] != 4:
        raise DataError(f"{path}: expected 4 channels, got {data.shape[1]}")
    return FoaClip.from_wxyz(data.T, rate) if wxyz else FoaClip(data.T, rate)


def write_wav(path, samples, rate: int, fmt: str = "float32") -> None:
    """``fmt`` is ``float32`` or ``pcm16``; samples are (N,) or (N, C)."""
    x = np.asarray(samples, dtype=np.float64)
    if fmt == "float32":
        out = x.astype(np.float32)
    elif fmt == "pcm16":
        out = np.clip(np.rint(x * 32767.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    wavfile.write(path, int(rate), out)


# ------------------------------------------------------------------ layout --


def read_layout(path) -> ViewportLayout:
    try:
        return ViewportLayout.from_json(Path(path).read_text(encoding="utf-8"))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: bad layout ({exc})") from exc


def write_layout(path, layout: ViewportLayout) -> None:
    Path(path).write_text(layout.to_json() + "\n", encoding="utf-8")
