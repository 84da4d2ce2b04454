"""Fast invariant and oracle checks run by ``omnisal selftest``.

Every check returns a deterministic summary value so two runs can be
compared byte for byte; wall-clock timings are kept out of the report.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import audio, gaze, metrics, net, quality, sphere
from . import tensor as tt
from .avfusion import AvConfig, SalViT360AV
from .tensor import Tensor


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: str


def _gnomonic_roundtrip(seed: int) -> tuple[bool, float]:
    rng = np.random.default_rng(seed)
    n = 2000
    lat0 = rng.uniform(-1.4, 1.4, n)
    lon0 = rng.uniform(-math.pi, math.pi, n)
    x = rng.uniform(-0.8, 0.8, n)
    y = rng.uniform(-0.8, 0.8, n)
    lat, lon = sphere.gnomonic_inverse(lat0, lon0, x, y)
    x2, y2, _ = sphere.gnomonic_forward(lat0, lon0, lat, lon)
    lat2, lon2 = sphere.gnomonic_inverse(lat0, lon0, x2, y2)
    err = float(np.max(sphere.angular_distance(sphere.to_unit(lat, lon), sphere.to_unit(lat2, lon2))))
    return err < 1e-10, err


def _overlap(seed: int) -> tuple[bool, int]:
    layout = sphere.default_layout()
    h, w = 64, 128
    mask = sphere.overlap_mask(layout, h, w)
    lat, lon = sphere.erp_pixel_centers(h, w)
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    count = np.zeros((h, w), dtype=np.int64)
    t = layout.half_extent
    for c in layout.centers:
        x, y, cosc = sphere.gnomonic_forward(c.lat, c.lon, la, lo)
        with np.errstate(invalid="ignore"):
            count += (cosc > 0) & (np.abs(x) <= t) & (np.abs(y) <= t)
    return bool(np.array_equal(mask, count)) and int(mask.max()) == 4, int(mask.max())


def _dense_attention(attn: net.MultiHeadAttention, x: np.ndarray) -> np.ndarray:
    """Per-group, per-head loops over plain numpy."""
    g, n, d = x.shape
    h = attn._heads
    dh = d // h
    out = np.zeros_like(x)
    for b in range(g):
        q = x[b] @ attn.q.weight.data + attn.q.bias.data
        k = x[b] @ attn.k.weight.data + attn.k.bias.data
        v = x[b] @ attn.v.weight.data + attn.v.bias.data
        ctx = np.zeros((n, d))
        for head in range(h):
            sl = slice(head * dh, (head + 1) * dh)
            s = q[:, sl] @ k[:, sl].T / math.sqrt(dh)
            p = np.exp(s - s.max(axis=1, keepdims=True))
            ctx[:, sl] = (p / p.sum(axis=1, keepdims=True)) @ v[:, sl]
        out[b] = ctx @ attn.out.weight.data + attn.out.bias.data
    return out


def _attention(seed: int) -> tuple[bool, float]:
    rng = np.random.default_rng(seed)
    block = net.VstaBlock(16, 4, rng)
    z = rng.standard_normal((5, 3, 16))
    got = block.vsa(block.vta(Tensor(z))).data
    ln = lambda a, m: (a - a.mean(-1, keepdims=True)) / np.sqrt(a.var(-1, keepdims=True) + m._eps) \
        * m.gamma.data + m.beta.data
    ref = z + _dense_attention(block.attn_t, ln(z, block.norm_t))
    zs = ref.transpose(1, 0, 2)
    ref = (zs + _dense_attention(block.attn_s, ln(zs, block.norm_s))).transpose(1, 0, 2)
    err = float(np.max(np.abs(got - ref)))
    cost = net.attention_cost(8, 18)
    return err < 1e-10 and (cost.factored, cost.joint) == (388, 20736), err


def _gradients(seed: int) -> tuple[bool, float]:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 5))
    g = rng.standard_normal(5)
    b = rng.standard_normal(5)
    worst = max(
        tt.grad_check(lambda t: tt.sum(tt.softmax(t, axis=-1) * Tensor(x)), x),
        tt.grad_check(lambda t: tt.sum(tt.layer_norm(t, Tensor(g), Tensor(b)) * Tensor(x[::-1].copy())), x),
        tt.grad_check(lambda t: tt.sum(tt.softplus(t) * tt.exp(t * 0.3)), x),
    )
    q = metrics.normalize_sum(rng.random((6, 8)))
    fix = (rng.random((6, 8)) > 0.8).astype(float)
    fix[0, 0] = 1.0
    p0 = rng.random((6, 8)) + 0.1
    worst = max(worst, tt.grad_check(
        lambda t: metrics.supervised_loss(t / tt.sum(t), q, fix), p0))
    return worst < 1e-4, worst


def _metric_identities(seed: int) -> tuple[bool, float]:
    rng = np.random.default_rng(seed)
    p = metrics.normalize_sum(rng.random((16, 32)))
    fix = np.zeros_like(p)
    fix[3, 4] = fix[8, 20] = 1
    ok = (metrics.kld(p, p) <= 1e-6 and abs(metrics.cc(p, p) - 1) < 1e-12
          and abs(metrics.sim(p, p) - 1) < 1e-12 and metrics.nss(np.ones_like(p), fix) == 0.0)
    return ok, metrics.kld(p, p)


def _ambisonics(seed: int) -> tuple[bool, float]:
    rng = np.random.default_rng(seed)
    n = 256
    s = audio.MonoClip(rng.standard_normal(n), 16000)
    worst = 0.0
    for _ in range(20):
        lat, lon = rng.uniform(-1.5, 1.5), rng.uniform(-math.pi, math.pi)
        foa = audio.encode_sources([(s, sphere.SphericalCoord(lat, lon))])
        out = audio.decode_forward(foa).samples
        gamma = sphere.angular_distance(sphere.to_unit(lat, lon), sphere.to_unit(0.0, 0.0))
        worst = max(worst, float(np.max(np.abs(out - 2 * (1 + math.cos(gamma)) * s.samples))))
    unit = audio.FoaClip(np.array([[1.0], [0.0], [0.0], [1.0]]), 16000)
    eq = abs(audio.decode_forward(unit).samples[0] - 2 * (math.sqrt(2) + 1))
    return worst < 1e-9 and eq < 1e-12, worst


def _no_audio(seed: int) -> tuple[bool, float]:
    cfg = net.NetConfig.micro(patch_size=16, encoder_channels=(8, 16), heads=2, depth=1,
                              decoder_channels=(8, 4))
    visual = net.SalViT360(cfg, seed=seed)
    av = SalViT360AV(visual, AvConfig(d_audio=8, bottleneck=4, audio_hidden=8), seed=seed + 1)
    layout = sphere.augmented_layout("coarse")
    rng = np.random.default_rng(seed)
    clip = rng.random((2, 16, 32, 3))
    with tt.no_grad():
        base = net.model_forward(clip, layout, visual).data
        bare = av(clip, None, layout).data
        for a in av.adapters:
            a.w_up.data[...] = rng.standard_normal(a.w_up.shape)
        av.set_scale(0.0)
        pooled = rng.standard_normal((len(layout), audio.N_MELS))
        muted = av(clip, None, layout, pooled=pooled).data
    ok = np.array_equal(base, bare) and np.array_equal(base, muted)
    return ok, float(np.max(np.abs(base - muted)))


def _idt(seed: int) -> tuple[bool, float]:
    rng = np.random.default_rng(seed)
    centers = [(10.0, 20.0), (-5.0, 100.0)]
    trace = []
    t = 0.0
    for lat, lon in centers:
        for _ in range(40):
            d = rng.normal(0, 0.1, 2)
            trace.append(gaze.GazeSample(t, sphere.SphericalCoord.from_degrees(lat + d[0], lon + d[1])))
            t += 1 / 120
        t += 0.05
    fx = gaze.idt_fixations(trace)
    return len(fx) == 2, float(len(fx))


def _vqa(seed: int) -> tuple[bool, float]:
    rng = np.random.default_rng(seed)
    ref = rng.integers(0, 256, (3, 8, 16)).astype(float)
    imp = np.clip(ref + rng.normal(0, 4, ref.shape), 0, 255)
    ones = np.ones_like(ref)
    plain = float(np.mean([10 * math.log10(255**2 / np.mean((r - i) ** 2)) for r, i in zip(ref, imp)]))
    a = quality.weighted_psnr(ref, imp, ones)
    sal = rng.random(ref.shape)
    ok = abs(a - plain) < 1e-9 and quality.weighted_psnr(ref, imp, sal) == \
        quality.weighted_psnr(ref, imp, sal * 4.0)
    return ok, abs(a - plain)


CHECKS: dict[str, Callable[[int], tuple[bool, float]]] = {
    "gnomonic-roundtrip": _gnomonic_roundtrip,
    "overlap-mask": _overlap,
    "attention-oracle": _attention,
    "gradients": _gradients,
    "metric-identities": _metric_identities,
    "ambisonics": _ambisonics,
    "no-audio-degradation": _no_audio,
    "idt": _idt,
    "vqa-identities": _vqa,
}


def _run_one(name: str, seed: int) -> CheckResult:
    try:
        ok, value = CHECKS[name](seed)
    except Exception as exc:  # reported, not raised: selftest summarizes all checks
        return CheckResult(name, False, f"{type(exc).__name__}: {exc}")
    return CheckResult(name, bool(ok), repr(float(value)))


def run(seed: int = 0, jobs: int = 1, names=None) -> list[CheckResult]:
    """Run checks, possibly concurrently; results come back in a fixed order."""
    names = list(names or CHECKS)
    if jobs <= 1:
        return [_run_one(n, seed) for n in names]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda n: _run_one(n, seed), names))
