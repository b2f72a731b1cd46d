"""Command-line pipeline: synth | pretrain | selftrain | derain | eval.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
abort. Every command's artifacts are a pure function of (config, checkpoint,
input bytes, seed); reruns may be byte-compared. NIGHTRAIN_THREADS caps BLAS
parallelism (read at package import).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .clip import Clip, load_clip, save_clip
from .config import Config, load_config
from .diffusion import sample_batch
from .errors import ConfigError, DataError, NightRainError, NumericsError
from .figures import save_loss_curve, save_metric_bars
from .metrics import MetricReport, psnr, ssim, write_report
from .rng import derive_seed
from .selftrain import selftrain_loop
from .synth import load_video, make_dataset, read_manifest, split_rows
from .train import init_run, pretrain_loop


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config errors (exit 1)
        raise ConfigError(message)


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True,
                        help="config file path, or a preset name (desk, paper)")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser = _Parser(prog="nightrain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common],
                       help="generate the synthetic dataset and manifest")
    p.add_argument("--out", default=None,
                   help="dataset root (default: config data root)")

    p = sub.add_parser("pretrain", parents=[common],
                       help="supervised diffusion training on the paired split")
    p.add_argument("--in", dest="in_dir", default=None,
                   help="dataset root (default: config data root)")
    p.add_argument("--out", required=True, help="run directory for artifacts")
    p.add_argument("--checkpoint", default=None,
                   help="resume from this checkpoint")

    p = sub.add_parser("selftrain", parents=[common],
                       help="unsupervised two-branch fine-tuning")
    p.add_argument("--in", dest="in_dir", default=None,
                   help="dataset root (default: config data root)")
    p.add_argument("--out", required=True, help="run directory for artifacts")
    p.add_argument("--checkpoint", required=True,
                   help="pretrained (or partially self-trained) checkpoint")

    p = sub.add_parser("derain", parents=[common],
                       help="run the teacher on a folder of frames")
    p.add_argument("--in", dest="in_dir", required=True,
                   help="input frame folder (frame_XXXXX.ppm)")
    p.add_argument("--out", required=True, help="output frame folder")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("eval", parents=[common],
                       help="PSNR/SSIM report for aligned prediction/reference pairs")
    p.add_argument("--in", dest="in_dir", required=True,
                   help="pairs manifest: TSV of clip_id, pred dir, ref dir")
    p.add_argument("--out", required=True, help="report directory")
    return parser


def _load_cfg(args) -> Config:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _write_loss_log(path: Path, start: int, losses) -> None:
    lines = ["step\tloss"]
    lines += [f"{start + i}\t{v:.6f}" for i, v in enumerate(losses)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _finish_run(run_dir: Path, ckpt, start: int, losses, title: str) -> None:
    save_checkpoint(run_dir / "checkpoint_final.nrck", ckpt)
    _write_loss_log(run_dir / "loss.tsv", start, losses)
    save_loss_curve(losses, run_dir / "loss_curve.png", title)


# ------------------------------------------------------------------ commands


def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    spec = cfg.dataset_spec(args.out)
    rows = make_dataset(spec)
    for split in ("paired", "unpaired_rain", "clear",
                  "test_paired", "test_shifted", "test_clear"):
        n = len(split_rows(rows, split))
        print(f"{split}\t{n} videos")
    print(f"wrote {len(rows)} videos under {spec.root}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_cfg(args)
    root = args.in_dir or cfg.data_root
    paired = split_rows(read_manifest(root), "paired")
    if not paired:
        raise DataError(f"no paired split in the manifest under {root}")
    videos = [(load_video(root, r, "clean"), load_video(root, r, "rain"))
              for r in paired]

    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint, expect=cfg)
        ckpt.config = cfg
    else:
        ckpt = init_run(cfg)
    if ckpt.step > cfg.pretrain_steps:
        raise ConfigError(
            f"checkpoint step {ckpt.step} is already past the pretraining "
            f"budget {cfg.pretrain_steps}")

    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    start = ckpt.step
    losses: list = []
    pretrain_loop(
        ckpt, videos,
        on_step=lambda step, loss: losses.append(loss),
        save_fn=lambda c: save_checkpoint(
            run_dir / f"checkpoint_{c.step:06d}.nrck", c))
    _finish_run(run_dir, ckpt, start, losses, "pretraining loss")
    recent = float(np.mean(losses[-50:])) if losses else float("nan")
    print(f"pretrained steps {start}..{ckpt.step}; recent loss {recent:.4f}")
    print(f"final checkpoint: {run_dir / 'checkpoint_final.nrck'}")
    return 0


def cmd_selftrain(args) -> int:
    cfg = _load_cfg(args)
    root = args.in_dir or cfg.data_root
    rows = read_manifest(root)
    rain_clips = [load_video(root, r, "rain")
                  for r in split_rows(rows, "unpaired_rain")]
    clear_clips = [load_video(root, r, "clean")
                   for r in split_rows(rows, "clear")]

    ckpt = load_checkpoint(args.checkpoint, expect=cfg)
    ckpt.config = cfg
    base = cfg.pretrain_steps
    start = ckpt.step - base
    if start < 0:
        raise ConfigError(
            f"checkpoint is mid-pretrain (step {ckpt.step} of {base}); "
            "finish pretraining first")
    if start > cfg.selftrain_steps:
        raise ConfigError(
            f"checkpoint is already past the self-training budget "
            f"{cfg.selftrain_steps}")
    if start == 0:
        ckpt.adam = cfg.selftrain_adam_state()  # fresh optimizer for fine-tuning

    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    losses: list = []

    def on_step(step, loss):
        losses.append(loss)
        ckpt.step = base + step + 1
        if (step + 1) % cfg.selftrain_checkpoint_interval == 0:
            save_checkpoint(run_dir / f"checkpoint_{ckpt.step:06d}.nrck", ckpt)

    selftrain_loop(ckpt.ts, rain_clips, clear_clips, cfg.selftrain_config(),
                   cfg.schedule(), ckpt.adam, start_step=start, on_step=on_step)
    ckpt.step = base + cfg.selftrain_steps
    _finish_run(run_dir, ckpt, start, losses, "self-training loss")
    print(f"self-trained steps {start}..{cfg.selftrain_steps} "
          f"(rain pool {len(rain_clips)}, clear pool {len(clear_clips)})")
    print(f"final checkpoint: {run_dir / 'checkpoint_final.nrck'}")
    return 0


def cmd_derain(args) -> int:
    cfg = _load_cfg(args)
    ckpt = load_checkpoint(args.checkpoint, expect=cfg)
    video = load_clip(args.in_dir)
    _, n, h, w = video.shape
    if (h, w) != (cfg.height, cfg.width):
        raise DataError(
            f"input frames are {h}x{w}, checkpoint expects "
            f"{cfg.height}x{cfg.width}")
    if n < cfg.frames:
        raise DataError(f"need at least {cfg.frames} frames, got {n}")

    ts_len = cfg.frames
    full_starts = list(range(0, n - ts_len + 1, ts_len))
    tail = n - len(full_starts) * ts_len
    tiles = full_starts + ([n - ts_len] if tail else [])
    conds = np.stack([video.data[:, s:s + ts_len] for s in tiles])
    seeds = [derive_seed(cfg.seed, "derain", s) for s in tiles]
    preds = sample_batch(ckpt.ts.teacher, conds, seeds,
                         cfg.sampler_config(cfg.seed), cfg.schedule())

    out = np.empty_like(video.data)
    for i, s in enumerate(full_starts):
        out[:, s:s + ts_len] = preds[i]
    if tail:
        out[:, n - tail:] = preds[-1][:, ts_len - tail:]
    save_clip(Clip(out, "pixel"), args.out)
    print(f"derained {n} frames in {len(tiles)} tiles -> {args.out}")
    return 0


def _read_pairs(path: Path):
    if not path.is_file():
        raise DataError(f"no pairs manifest at {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split("\t") != ["clip_id", "pred", "ref"]:
        raise DataError(f"{path}: first line must be 'clip_id<TAB>pred<TAB>ref'")
    pairs = []
    for ln, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{ln}: expected 3 tab-separated fields")
        clip_id, pred, ref = parts
        base = path.parent
        pairs.append((clip_id, base / pred, base / ref))
    return pairs


def cmd_eval(args) -> int:
    _load_cfg(args)  # validated for interface uniformity; metrics need no knobs
    pairs = _read_pairs(Path(args.in_dir))
    report = MetricReport()
    for clip_id, pred_dir, ref_dir in pairs:
        a, b = load_clip(pred_dir), load_clip(ref_dir)
        report.add(clip_id, psnr(a, b), ssim(a, b))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report(report, out_dir / "report.tsv")
    save_metric_bars(report, out_dir)
    print(f"mean_psnr_db={report.mean_psnr:.4f} mean_ssim={report.mean_ssim:.6f} "
          f"over {len(report)} clips -> {out_dir / 'report.tsv'}")
    return 0


_COMMANDS = {"synth": cmd_synth, "pretrain": cmd_pretrain,
             "selftrain": cmd_selftrain, "derain": cmd_derain,
             "eval": cmd_eval}


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericsError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    except NightRainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
