"""Synthetic clips and small training loops used by ``train-toy`` and the tests."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import audio, metrics, optim
from . import tensor as tt
from .avfusion import AvConfig, SalViT360AV, freeze_mask
from .net import NetConfig, SalViT360, sampling_map
from .sphere import SphericalCoord, ViewportLayout, angular_distance, augmented_layout, \
    erp_pixel_centers, to_unit

TOY_HEIGHT = 64
BLOB_SPREAD_DEG = 12.0
GT_SPREAD_DEG = 20.0
BACKGROUND = 0.1


def _grid_unit(height: int, width: int) -> np.ndarray:
    lat, lon = erp_pixel_centers(height, width)
    return to_unit(*np.meshgrid(lat, lon, indexing="ij"))


def spherical_blob(height: int, lat_deg: float, lon_deg: float, spread_deg: float) -> np.ndarray:
    g = angular_distance(_grid_unit(height, 2 * height),
                         to_unit(math.radians(lat_deg), math.radians(lon_deg)))
    return np.exp(-(g * g) / (2 * math.radians(spread_deg) ** 2))


@dataclass
class ToyExample:
    clip: np.ndarray  # (F, H, W, 3)
    gt: np.ndarray  # (H, W), sums to 1
    fixations: np.ndarray  # (H, W) binary
    foa: audio.FoaClip | None = None


def moving_blob_example(lat_deg: float, lon_deg: float, frames: int = 2,
                        height: int = TOY_HEIGHT, drift_deg: float = 3.0) -> ToyExample:
    """A bright blob drifting in longitude; the target follows its last position."""
    clip = []
    for f in range(frames):
        b = spherical_blob(height, lat_deg, lon_deg + drift_deg * f, BLOB_SPREAD_DEG)
        clip.append(np.repeat((BACKGROUND + (1 - BACKGROUND) * b)[..., None], 3, axis=-1))
    gt = spherical_blob(height, lat_deg, lon_deg + drift_deg * (frames - 1), GT_SPREAD_DEG)
    gt /= gt.sum()
    fix = np.zeros_like(gt)
    i, j = np.unravel_index(np.argmax(gt), gt.shape)
    w = gt.shape[1]
    for di, dj in ((0, 0), (1, 2), (-1, -2)):
        fix[min(max(i + di, 0), gt.shape[0] - 1), (j + dj) % w] = 1.0
    return ToyExample(np.stack(clip), gt, fix)


def visual_examples(frames: int = 2, height: int = TOY_HEIGHT) -> list[ToyExample]:
    return [moving_blob_example(10.0, 30.0, frames, height),
            moving_blob_example(-20.0, -120.0, frames, height)]


def sounding_example(layout: ViewportLayout, view: int, frames: int = 2,
                     height: int = TOY_HEIGHT, seconds: float = audio.MAX_WINDOW_S,
                     rate: int = audio.TARGET_RATE, seed: int = 0) -> ToyExample:
    """Visually flat frames with a noise source at one viewport center.

    The saliency target sits on the source, so only the audio can point to it.
    """
    rng = np.random.default_rng(seed)
    c = layout.centers[view]
    lat_deg, lon_deg = c.degrees()
    clip = np.full((frames, height, 2 * height, 3), 0.5)
    gt = spherical_blob(height, lat_deg, lon_deg, GT_SPREAD_DEG)
    gt /= gt.sum()
    fix = np.zeros_like(gt)
    fix[np.unravel_index(np.argmax(gt), gt.shape)] = 1.0
    noise = audio.MonoClip(rng.standard_normal(int(seconds * rate)) * 0.1, rate)
    foa = audio.encode_sources([(noise, SphericalCoord(c.lat, c.lon))])
    return ToyExample(clip, gt, fix, foa)


def footprint(layout: ViewportLayout, view: int, height: int) -> np.ndarray:
    """Boolean ERP mask of pixels covered by one viewport."""
    single = ViewportLayout((layout.centers[view],), layout.fov_deg, layout.patch_size)
    return sampling_map(single, height, 2 * height).coverage > 0


# ------------------------------------------------------------- training --


@dataclass
class TrainLog:
    steps: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    kld: list[list[float]] = field(default_factory=list)
    cc: list[list[float]] = field(default_factory=list)
    seconds: float = 0.0

    def as_rows(self) -> list[dict]:
        return [{"step": s, "loss": l, "kld": k, "cc": c}
                for s, l, k, c in zip(self.steps, self.loss, self.kld, self.cc)]


def evaluate(model: SalViT360, examples, layout) -> tuple[list[float], list[float]]:
    kl, cs = [], []
    with tt.no_grad():
        for ex in examples:
            pred = model(ex.clip, layout).data
            kl.append(metrics.kld(ex.gt, pred))
            cs.append(metrics.cc(pred, ex.gt))
    return kl, cs


def train_visual(steps: int = 2000, seed: int = 0, log_every: int = 100,
                 config: NetConfig | None = None, examples=None,
                 layout: ViewportLayout | None = None, callback=None):
    """Overfit the micro model on the synthetic clips with AdamW and cosine decay.

    Returns the model and a log; ``log.loss[0]`` is the summed loss before the
    first update and ``log.loss[-1]`` the loss after ``steps`` updates.
    """
    config = config or NetConfig.micro()
    layout = layout or augmented_layout("coarse")
    examples = examples if examples is not None else visual_examples(config.frames)
    model = SalViT360(config, seed=seed)
    opt = optim.AdamW(model.named_parameters())
    log = TrainLog()
    t0 = time.perf_counter()
    for step in range(steps + 1):
        opt.zero_grad()
        total = 0.0
        for ex in examples:
            loss = metrics.supervised_loss(model(ex.clip, layout), ex.gt, ex.fixations)
            if step < steps:
                loss.backward()
            total += loss.item()
        if not math.isfinite(total):
            raise FloatingPointError(f"non-finite loss at step {step}")
        if step % log_every == 0 or step == steps:
            kl, cs = evaluate(model, examples, layout)
            log.steps.append(step)
            log.loss.append(total)
            log.kld.append(kl)
            log.cc.append(cs)
            if callback:
                callback(step, total, kl, cs)
        if step < steps:
            opt.step(optim.cosine_lr(step, steps))
    log.seconds = time.perf_counter() - t0
    return model, log


@dataclass
class AdapterRun:
    mass: list[float]
    frozen_before: dict[str, np.ndarray]
    frozen_after: dict[str, np.ndarray]
    trainable: list[str]
    seconds: float

    def frozen_unchanged(self) -> bool:
        return all(np.array_equal(self.frozen_before[k], self.frozen_after[k])
                   for k in self.frozen_before)


def train_adapters(steps: int = 200, seed: int = 0, view: int = 3,
                   config: NetConfig | None = None, av_config: AvConfig | None = None,
                   lr: float = optim.LR_START) -> AdapterRun:
    """Adapter-only tuning on one example whose target is given only by sound.

    Tracks the predicted mass inside the sounding viewport's footprint.
    """
    config = config or NetConfig.micro()
    av_config = av_config or AvConfig(d_audio=32, bottleneck=16, audio_hidden=32)
    layout = augmented_layout("coarse")
    ex = sounding_example(layout, view, config.frames, seed=seed)
    model = SalViT360AV(SalViT360(config, seed=seed), av_config, seed=seed + 1)
    trainable = freeze_mask(model)
    frozen_before = {k: p.data.copy() for k, p in model.named_parameters().items()
                     if k not in trainable}
    mask = footprint(layout, view, ex.gt.shape[0])
    pooled = model.pooled_audio(ex.foa, layout)
    opt = optim.AdamW(trainable, lr=lr)
    mass = []
    t0 = time.perf_counter()
    for step in range(steps + 1):
        opt.zero_grad()
        pred = model(ex.clip, ex.foa, layout, pooled=pooled)
        mass.append(float(pred.data[mask].sum()))
        if step == steps:
            break
        loss = metrics.supervised_loss(pred, ex.gt, ex.fixations)
        loss.backward()
        opt.step(optim.cosine_lr(step, steps, lr, lr * optim.LR_END / optim.LR_START))
    frozen_after = {k: p.data.copy() for k, p in model.named_parameters().items()
                    if k not in trainable}
    return AdapterRun(mass, frozen_before, frozen_after, sorted(trainable),
                      time.perf_counter() - t0)
