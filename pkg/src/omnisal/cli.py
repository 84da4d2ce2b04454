"""Command-line entry point: ``omnisal <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Options shared by every subcommand (``--config``, ``--seed``, ``--jobs``,
``--layout``, ``--dump-config``) may appear before or after the subcommand.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import audio, gaze, io, metrics, net, quality, selftest, sphere, toy
from . import tensor as tt
from .avfusion import AvConfig, SalViT360AV
from .checkpoint import load_checkpoint, save_checkpoint

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
LAYOUT_NAMES = ("default", "shifted", "wide-fov", "coarse")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ config --


@dataclass
class RunConfig:
    """Every tunable knob; serialized as the effective-config JSON."""

    net: dict = field(default_factory=lambda: net.NetConfig().to_dict())
    av: dict = field(default_factory=lambda: asdict(AvConfig()))
    layout: str = "default"
    weighting: str = "uniform"
    dispersion_deg: float = gaze.MAX_DISPERSION_DEG
    min_dur_s: float = gaze.MIN_DURATION_S
    sigma_deg: float = gaze.DENSITY_SIGMA_DEG
    window_s: float = gaze.CONSISTENCY_WINDOW_S
    seed: int = 0
    jobs: int = 1

    def validate(self) -> "RunConfig":
        net.NetConfig.from_dict(self.net)
        AvConfig.from_dict(self.av)
        if self.layout not in LAYOUT_NAMES:
            raise UsageError(f"unknown layout {self.layout!r}")
        if self.weighting not in ("uniform", "cosine"):
            raise UsageError(f"unknown weighting {self.weighting!r}")
        if self.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise io.DataError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    def net_config(self) -> net.NetConfig:
        return net.NetConfig.from_dict(self.net)

    def av_config(self) -> AvConfig:
        return AvConfig.from_dict(self.av)


def _env_int(name: str) -> int | None:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{name} must be an integer, got {raw!r}") from None


def resolve_config(args) -> RunConfig:
    """Defaults < ``--config`` file < environment < command-line flags."""
    cfg = RunConfig()
    path = getattr(args, "config", None)
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise io.DataError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise io.DataError(f"config {path} must hold a JSON object")
        cfg = RunConfig.from_dict(data)
    for env, key in (("OMNISAL_SEED", "seed"), ("OMNISAL_JOBS", "jobs")):
        val = _env_int(env)
        if val is not None:
            setattr(cfg, key, val)
    for key in ("seed", "jobs", "layout", "weighting", "dispersion_deg", "min_dur_s",
                "sigma_deg", "window_s"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    return cfg.validate()


# ----------------------------------------------------------------- helpers --


def _layout(cfg: RunConfig, args, patch_size: int | None = None) -> sphere.ViewportLayout:
    path = getattr(args, "layout_json", None)
    lay = io.read_layout(path) if path else sphere.layout_by_name(cfg.layout)
    return lay.with_patch_size(patch_size) if patch_size else lay


def _pmap(fn, items, jobs: int) -> list:
    """Order-preserving map, threaded when ``jobs > 1``."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _finite(arr, what: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values in {what}")
    return arr


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _json_num(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return x


def _emit(obj, out) -> None:
    text = json.dumps(obj, indent=1)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


# ------------------------------------------------------------- subcommands --


def cmd_project(args, cfg):
    erp = io.read_raster(args.input)
    layout = _layout(cfg, args, args.patch_size)
    smap = sphere.build_sampling_map(layout, erp.shape[0], erp.shape[1])
    patches = sphere.project_to_tangents(erp, smap)
    out = _out_dir(args.out_dir)
    for t, patch in enumerate(patches):
        io.write_pfm(out / f"view_{t:02d}.pfm", patch)
    io.write_layout(out / "layout.json", layout)
    return EXIT_OK


def cmd_backproject(args, cfg):
    src = Path(args.patches)
    files = sorted(src.glob("view_*.pfm"))
    if not files:
        raise io.DataError(f"{src}: no view_*.pfm patches")
    layout_path = args.layout_json or (src / "layout.json" if (src / "layout.json").exists() else None)
    patches = np.stack([io.read_pfm(f) for f in files])
    layout = (io.read_layout(layout_path) if layout_path else sphere.layout_by_name(cfg.layout))
    layout = layout.with_patch_size(patches.shape[1])
    if len(layout) != len(patches):
        raise io.DataError(f"{len(patches)} patches for a {len(layout)}-view layout")
    smap = sphere.build_sampling_map(layout, args.height, 2 * args.height)
    erp, weight = sphere.back_project(patches, smap, weighting=cfg.weighting)
    io.write_pfm(args.out, erp)
    if args.weight_out:
        io.write_pfm(args.weight_out, weight)
    return EXIT_OK


def cmd_mask(args, cfg):
    mask = sphere.overlap_mask(_layout(cfg, args), args.height, 2 * args.height)
    io.write_pfm(args.out, mask.astype(np.float64))
    if args.png:
        io.write_png(args.png, mask * (255.0 / max(1, mask.max())), normalize=False)
    print(f"max coverage {int(mask.max())}, uncovered pixels {int((mask == 0).sum())}")
    return EXIT_OK


def _subject_fixations(paths, cfg) -> list[tuple[str, gaze.Fixation]]:
    def one(path):
        trace = gaze.read_gaze_csv(path)
        return [(Path(path).stem, f) for f in
                gaze.idt_fixations(trace, cfg.dispersion_deg, cfg.min_dur_s)]
    return [row for rows in _pmap(one, paths, cfg.jobs) for row in rows]


def cmd_fixations(args, cfg):
    rows = _subject_fixations(args.traces, cfg)
    gaze.write_fixation_csv(args.out, rows)
    print(f"{len(rows)} fixations from {len(args.traces)} trace(s)")
    return EXIT_OK


def cmd_salmap(args, cfg):
    by_subject = gaze.read_fixation_csv(args.fixations)
    if args.subject:
        if args.subject not in by_subject:
            raise io.DataError(f"subject {args.subject!r} not in {args.fixations}")
        fx = by_subject[args.subject]
    else:
        fx = [f for s in sorted(by_subject) for f in by_subject[s]]
    dmap = gaze.density_map(fx, args.height, 2 * args.height, cfg.sigma_deg)
    io.write_pfm(args.out, dmap)
    if args.png:
        io.write_png(args.png, dmap)
    return EXIT_OK


def cmd_consistency(args, cfg):
    if args.fixations:
        by_subject = gaze.read_fixation_csv(args.fixations)
    else:
        by_subject = {}
        for subject, f in _subject_fixations(args.traces, cfg):
            by_subject.setdefault(subject, []).append(f)
        for p in args.traces:
            by_subject.setdefault(Path(p).stem, [])
    scores = gaze.inter_subject_consistency(by_subject, cfg.window_s, args.height,
                                            2 * args.height, cfg.sigma_deg)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_start_s", "score"])
        for start, score in scores:
            w.writerow([repr(start), "nan" if math.isnan(score) else repr(score)])
    return EXIT_OK


def cmd_metrics(args, cfg):
    preds = io.list_frames(args.pred)
    gts = io.list_frames(args.gt)
    if len(preds) != len(gts):
        raise io.DataError(f"{len(preds)} predictions but {len(gts)} ground-truth maps")
    fixes = io.list_frames(args.fix) if args.fix else [None] * len(preds)
    if len(fixes) != len(preds):
        raise io.DataError("fixation map count does not match predictions")
    video = Path(args.pred).name

    def one(k):
        p = io.read_raster(preds[k], gray=True)
        g = io.read_raster(gts[k], gray=True)
        if p.shape != g.shape:
            raise io.DataError(f"{preds[k].name}: shape {p.shape} vs ground truth {g.shape}")
        pn, gn = metrics.normalize_sum(p), metrics.normalize_sum(g)
        row = {"video": video, "frame": k, "nss": None,
               "kld": metrics.kld(gn, pn), "cc": metrics.cc(p, g), "sim": metrics.sim(pn, gn)}
        if fixes[k] is not None:
            row["nss"] = metrics.nss(p, io.read_raster(fixes[k], gray=True))
        return row

    rows = _pmap(one, range(len(preds)), cfg.jobs)
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, ["video", "frame", "nss", "kld", "cc", "sim"], lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    _emit(rows, args.out)
    return EXIT_OK


def cmd_audio_rotate_decode(args, cfg):
    foa = io.read_foa_wav(args.input, wxyz=args.wxyz)
    out = _out_dir(args.out_dir)
    clips = audio.viewport_waveforms(foa, _layout(cfg, args))
    for t, clip in enumerate(clips):
        io.write_wav(out / f"view_{t:02d}.wav", _finite(clip.samples, "decoded audio"),
                     int(clip.sample_rate))
    return EXIT_OK


def cmd_audio_mel(args, cfg):
    mel = audio.mel_spectrogram(io.read_mono_wav(args.input))
    io.write_pfm(args.out, _finite(mel.values, "mel spectrogram"))
    print(f"{mel.frames} frames x {mel.values.shape[1]} bands (win {mel.win}, hop {mel.hop})")
    return EXIT_OK


def _load_visual(cfg: RunConfig, checkpoint) -> net.SalViT360:
    if checkpoint:
        params, meta = load_checkpoint(checkpoint)
        ncfg = net.NetConfig.from_dict(meta["net"]) if "net" in meta else cfg.net_config()
        model = net.SalViT360(ncfg, seed=cfg.seed)
        model.load_state_dict(params)
        return model
    return net.SalViT360(cfg.net_config(), seed=cfg.seed)


def cmd_forward(args, cfg):
    frames = [io.read_raster(p) for p in io.list_frames(args.frames)]
    clip_all = np.stack(frames)
    visual = _load_visual(cfg, args.checkpoint)
    f_count = visual.config.frames
    if len(frames) < f_count:
        raise io.DataError(f"need at least {f_count} frames, found {len(frames)}")
    layout = _layout(cfg, args)
    model = visual
    foa = None
    if args.audio:
        foa = io.read_foa_wav(args.audio, wxyz=args.wxyz)
        model = SalViT360AV(visual, cfg.av_config(), seed=cfg.seed + 1)
        if args.adapters:
            params, _ = load_checkpoint(args.adapters)
            state = model.state_dict()
            unknown = set(params) - set(state)
            if unknown:
                raise io.DataError(f"adapter checkpoint has unknown tensors {sorted(unknown)[:3]}")
            state.update(params)
            model.load_state_dict(state)
        if args.scale is not None:
            model.set_scale(args.scale)
    out = _out_dir(args.out_dir)
    ends = list(range(f_count - 1, len(frames)))

    def one(end):
        clip = clip_all[end - f_count + 1 : end + 1]
        with tt.no_grad():
            if foa is None:
                sal = net.model_forward(clip, layout, visual).data
            else:
                part = foa
                if args.fps:
                    n = int(round((end + 1) / args.fps * foa.sample_rate))
                    part = audio.FoaClip(foa.data[:, :max(n, 1)], foa.sample_rate)
                sal = model(clip, part, layout).data
        _finite(sal, f"saliency for frame {end}")
        io.write_pfm(out / f"sal_{end:05d}.pfm", sal)
        if args.png:
            io.write_png(out / f"sal_{end:05d}.png", sal)
        return end

    _pmap(one, ends, cfg.jobs)
    print(f"wrote {len(ends)} saliency map(s) to {out}")
    return EXIT_OK


def cmd_train_toy(args, cfg):
    if args.adapters_only:
        run = toy.train_adapters(steps=args.steps or 200, seed=cfg.seed)
        rows = [{"step": s, "footprint_mass": m} for s, m in enumerate(run.mass)]
        for r in rows[:: max(1, len(rows) // 10)]:
            print(f"step {r['step']:5d}  footprint mass {r['footprint_mass']:.6f}")
        increased = run.mass[-1] > run.mass[0]
        print(f"mass {run.mass[0]:.6f} -> {run.mass[-1]:.6f}  "
              f"increased={increased}  frozen_unchanged={run.frozen_unchanged()}")
        if args.log:
            _emit(rows, args.log)
        return EXIT_OK if increased and run.frozen_unchanged() else EXIT_NUMERIC
    steps = args.steps or 2000

    def report(step, loss, kl, cs):
        print(f"step {step:5d}  loss {loss:.5f}  kld {' '.join(f'{v:.4f}' for v in kl)}  "
              f"cc {' '.join(f'{v:.4f}' for v in cs)}", flush=True)

    model, log = toy.train_visual(steps=steps, seed=cfg.seed, log_every=args.log_every,
                                  callback=report)
    if args.out:
        save_checkpoint(args.out, model.named_parameters(),
                        {"net": model.config.to_dict(), "steps": steps})
    if args.log:
        _emit(log.as_rows(), args.log)
    return EXIT_OK


def _read_gray_dir(path) -> list[np.ndarray]:
    return [io.read_raster(p, gray=True) for p in io.list_frames(path)]


def cmd_vqa(args, cfg):
    ref, imp, sal = _read_gray_dir(args.ref), _read_gray_dir(args.imp), _read_gray_dir(args.sal)
    if not (len(ref) == len(imp) == len(sal)):
        raise io.DataError(f"frame counts differ: {len(ref)}, {len(imp)}, {len(sal)}")
    rows = quality.per_frame(ref, imp, sal)
    agg = {"frame": "all", "wpsnr": quality.weighted_psnr(ref, imp, sal),
           "wwspsnr": quality.weighted_ws_psnr(ref, imp, sal)}
    out = [{k: _json_num(v) if isinstance(v, float) else v for k, v in r.items()}
           for r in rows + [agg]]
    _emit(out, args.out)
    return EXIT_OK


def cmd_selftest(args, cfg):
    results = selftest.run(seed=cfg.seed, jobs=cfg.jobs)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<22s} {r.value}")
    if args.out:
        _emit([asdict(r) for r in results], args.out)
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


# ------------------------------------------------------------------ parser --


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="RunConfig JSON file")
    p.add_argument("--dump-config", default=d, metavar="PATH",
                   help="write the effective config ('-' for stdout) and continue")
    p.add_argument("--seed", type=int, default=d, help="seed for every random draw (env OMNISAL_SEED)")
    p.add_argument("--jobs", type=int, default=d, help="worker threads (env OMNISAL_JOBS)")
    p.add_argument("--layout", choices=LAYOUT_NAMES, default=d)
    p.add_argument("--layout-json", default=d, metavar="PATH", help="explicit layout file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="omnisal", description=__doc__.splitlines()[0])
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        _common(p, suppress=True)
        p.set_defaults(func=fn)
        return p

    p = add("project", cmd_project, "ERP image -> tangent patches (PFM)")
    p.add_argument("--input", required=True)
    p.add_argument("--patch-size", type=int, default=64)
    p.add_argument("--out-dir", required=True)

    p = add("backproject", cmd_backproject, "tangent patches -> ERP image")
    p.add_argument("--patches", required=True, help="directory of view_XX.pfm")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--weighting", choices=("uniform", "cosine"))
    p.add_argument("--out", required=True)
    p.add_argument("--weight-out")

    p = add("mask", cmd_mask, "viewport overlap count map")
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--out", required=True)
    p.add_argument("--png")

    p = add("fixations", cmd_fixations, "gaze CSV traces -> fixation CSV")
    p.add_argument("traces", nargs="+", help="one CSV per subject; the file stem is the id")
    p.add_argument("--dispersion-deg", type=float)
    p.add_argument("--min-dur-s", type=float)
    p.add_argument("--out", required=True)

    p = add("salmap", cmd_salmap, "fixation CSV -> density map")
    p.add_argument("--fixations", required=True)
    p.add_argument("--subject")
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--sigma-deg", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--png")

    p = add("consistency", cmd_consistency, "inter-subject consistency per time window")
    p.add_argument("traces", nargs="*")
    p.add_argument("--fixations", help="fixation CSV instead of raw traces")
    p.add_argument("--window-s", type=float)
    p.add_argument("--dispersion-deg", type=float)
    p.add_argument("--min-dur-s", type=float)
    p.add_argument("--sigma-deg", type=float)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--out", required=True)

    p = add("metrics", cmd_metrics, "NSS/KLD/CC/SIM of predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--fix", help="directory of binary fixation maps (enables NSS)")
    p.add_argument("--out")
    p.add_argument("--csv")

    p = add("audio", None, "ambisonic audio tools")
    asub = p.add_subparsers(dest="audio_command", parser_class=_Parser)
    q = asub.add_parser("rotate-decode", help="4-channel WAV -> one mono WAV per viewport")
    _common(q, suppress=True)
    q.set_defaults(func=cmd_audio_rotate_decode)
    q.add_argument("--input", required=True)
    q.add_argument("--wxyz", action="store_true", help="input channels are (W, X, Y, Z)")
    q.add_argument("--out-dir", required=True)
    q = asub.add_parser("mel", help="mono WAV -> log-mel matrix (PFM)")
    _common(q, suppress=True)
    q.set_defaults(func=cmd_audio_mel)
    q.add_argument("--input", required=True)
    q.add_argument("--out", required=True)

    p = add("forward", cmd_forward, "frames (+ FOA WAV) -> saliency maps")
    p.add_argument("--frames", required=True)
    p.add_argument("--checkpoint", help="visual checkpoint prefix; seeded init when absent")
    p.add_argument("--audio", help="4-channel FOA WAV; absent runs the visual-only path")
    p.add_argument("--wxyz", action="store_true")
    p.add_argument("--adapters", help="adapter checkpoint prefix")
    p.add_argument("--scale", type=float, help="override every adapter scale s")
    p.add_argument("--fps", type=float, help="frame rate used to align the audio window")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--png", action="store_true")

    p = add("train-toy", cmd_train_toy, "overfit the micro model on synthetic clips")
    p.add_argument("--steps", type=int)
    p.add_argument("--adapters-only", action="store_true")
    p.add_argument("--log-every", type=int, default=100)
    p.add_argument("--out", help="checkpoint prefix")
    p.add_argument("--log", help="JSON training log")

    p = add("vqa", cmd_vqa, "saliency-weighted PSNR and WS-PSNR")
    p.add_argument("--ref", required=True)
    p.add_argument("--imp", required=True)
    p.add_argument("--sal", required=True)
    p.add_argument("--out")

    p = add("selftest", cmd_selftest, "run the built-in invariant checks")
    p.add_argument("--out", help="JSON report")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            raise UsageError("omnisal: a subcommand is required (see --help)")
        if getattr(args, "command", None) == "consistency" and not (args.traces or args.fixations):
            raise UsageError("consistency: give gaze traces or --fixations")
        cfg = resolve_config(args)
        if getattr(args, "dump_config", None):
            if args.dump_config == "-":
                print(cfg.to_json())
            else:
                Path(args.dump_config).write_text(cfg.to_json() + "\n", encoding="utf-8")
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (io.DataError, ValueError, KeyError, OSError) as exc:
        print(f"data error: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
