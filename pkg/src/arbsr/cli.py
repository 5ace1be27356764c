"""Command-line entry point: ``arbsr <command> ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import experiments as ex
from .audio_io import AudioSignal, read_wav, sinc_resample, write_wav
from .inference import stream_upsample, upsample
from .metrics import LsdConfig
from .model import ModelWeights
from .synth import chirp_corpus
from .training import TrainConfig, fit, format_config_text, parse_config_text, write_history_csv

log = logging.getLogger("arbsr")


def _load_config(path):
    if path is None:
        return TrainConfig()
    with open(path) as f:
        return parse_config_text(f.read())


def _training_clips(directory, cfg):
    """Clips at ``r_data`` long enough for one crop; other rates are resampled."""
    need = int(round(cfg.task.clip_length * cfg.task.r_data))
    clips = []
    for name, clip in ex.load_corpus(directory):
        if clip.rate != cfg.task.r_data:
            clip = sinc_resample(clip, cfg.task.r_data)
        if len(clip) < need:
            log.warning("skipping %s: %d samples, need %d", name, len(clip), need)
            continue
        clips.append(clip)
    if not clips:
        raise ValueError(f"no usable training clips in {directory}")
    return clips


def _load_model(path):
    weights = ModelWeights.load(path)
    meta = ex.checkpoint_meta(path)
    cfg = TrainConfig.from_dict(meta["train"]) if "train" in meta else TrainConfig()
    return weights, cfg


def cmd_train(args):
    cfg = _load_config(args.config)
    overrides = {k: v for k, v in (("epochs", args.epochs), ("seed", args.seed)) if v is not None}
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    clips = _training_clips(args.data, cfg)
    log.info("training on %d clips\n%s", len(clips), format_config_text(cfg))
    weights, history = fit(clips, cfg)
    weights.save(args.out, {"train": cfg.to_dict()})
    if args.history:
        write_history_csv(history, args.history)
    print(f"saved {args.out} (final loss {history[-1]['total']:.6g})" if history else f"saved {args.out}")


def cmd_upsample(args):
    weights, cfg = _load_model(args.ckpt)
    signal = read_wav(args.input)
    if signal.rate != cfg.task.r_in:
        log.info("resampling input from %g Hz to %g Hz", signal.rate, cfg.task.r_in)
        signal = sinc_resample(signal, cfg.task.r_in)
    if args.stream:
        if args.chunk < 1:
            raise ValueError("--chunk must be at least 1")
        out = stream_upsample(signal, weights, args.rate, args.chunk)
    else:
        out = upsample(signal, weights, args.rate)
    peak = float(np.max(np.abs(out.samples))) if len(out) else 0.0
    if peak > 1.0 and args.bit_depth == 16:
        log.warning("output peak %.3f clipped to [-1, 1]", peak)
    write_wav(AudioSignal(np.clip(out.samples, -1.0, 1.0) if args.bit_depth == 16 else out.samples, out.rate),
              args.output, bit_depth=args.bit_depth)
    print(f"wrote {len(out)} samples at {args.rate:g} Hz to {args.output}")


def _testset(directory):
    return ex.load_corpus(directory)


def _method_args(args):
    if args.method == "model":
        if args.ckpt is None:
            raise ValueError("--ckpt is required for method 'model'")
        weights, cfg = _load_model(args.ckpt)
        return weights, cfg.task.r_in, ex.config_hash(cfg)
    return None, args.r_in, "-"


def cmd_eval(args):
    weights, r_in, h = _method_args(args)
    rep = ex.evaluate(_testset(args.data), args.scale, weights, r_in, args.method, h)
    ex.write_reports([rep], args.report)
    print(f"scale {rep.scale:g}: {rep.count} files, SNR {rep.mean_snr:.3f} dB, LSD {rep.mean_lsd:.4f}")


def cmd_sweep(args):
    weights, r_in, h = _method_args(args)
    scales = [float(s) for s in args.scales.split(",") if s.strip()]
    if not scales:
        raise ValueError("--scales is empty")
    reports = ex.sweep_scales(_testset(args.data), scales, weights, r_in, args.method, h)
    ex.write_reports(reports, args.report)
    for rep in reports:
        print(f"scale {rep.scale:g}: SNR {rep.mean_snr:.3f} dB, LSD {rep.mean_lsd:.4f}")
    print(f"spearman(scale, SNR) = {ex.trend(reports):.3f}")


def cmd_ablate(args):
    cfg = _load_config(args.config)
    if args.epochs is not None:
        cfg = cfg.with_overrides(epochs=args.epochs)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        ex.variant_config(cfg, v)  # validate names before training anything
    clips = _training_clips(args.data, cfg)
    table = ex.ablate(clips, _testset(args.test_data), cfg, variants, args.scale)
    ex.write_ablation(table, args.report)
    for row in table:
        print(f"{row['variant']:>6}: SNR {row['snr_db']:.3f} dB, LSD {row['lsd']:.4f}")


def cmd_spec_dump(args):
    signal = read_wav(args.input)
    ex.spectrogram_dump(signal, args.output, LsdConfig(args.fft_size, args.hop))
    print(f"wrote {args.output}")


def cmd_synth(args):
    os.makedirs(args.out, exist_ok=True)
    for i, clip in enumerate(chirp_corpus(args.count, seed=args.seed, duration=args.duration)):
        write_wav(clip, os.path.join(args.out, f"chirp_{i:04d}.wav"), bit_depth=32)
    print(f"wrote {args.count} clips to {args.out}")


def build_parser():
    p = argparse.ArgumentParser(prog="arbsr", description="Arbitrary-scale audio super-resolution.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train a model on a directory of WAV clips")
    s.add_argument("--config", help="key = value training config (defaults if omitted)")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--history", help="per-epoch loss CSV")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("upsample", help="upsample one WAV file to an arbitrary rate")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--rate", type=float, required=True)
    s.add_argument("--out", dest="output", required=True)
    s.add_argument("--stream", action="store_true", help="process in chunks with bounded lookahead")
    s.add_argument("--chunk", type=int, default=256)
    s.add_argument("--bit-depth", type=int, default=16, choices=(16, 32))
    s.set_defaults(func=cmd_upsample)

    for name, helptext in (("eval", "score one scale on a test directory"),
                           ("sweep", "score several scales on a test directory")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--ckpt")
        s.add_argument("--data", required=True)
        s.add_argument("--report", required=True)
        s.add_argument("--method", default="model", choices=("model",) + ex.METHODS)
        s.add_argument("--r-in", type=float, default=8000.0, help="input rate for baseline methods")
        if name == "eval":
            s.add_argument("--scale", type=float, default=2.0)
            s.set_defaults(func=cmd_eval)
        else:
            s.add_argument("--scales", default="1.25,1.5,2,2.5,3,4,5,6")
            s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("ablate", help="train and compare ablation variants")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--test-data", required=True)
    s.add_argument("--variants", default=",".join(ex.VARIANTS))
    s.add_argument("--scale", type=float, default=2.0)
    s.add_argument("--epochs", type=int)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("spec-dump", help="write a log-power spectrogram as PNG or CSV")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", dest="output", required=True)
    s.add_argument("--fft-size", type=int, default=2048)
    s.add_argument("--hop", type=int, default=512)
    s.set_defaults(func=cmd_spec_dump)

    s = sub.add_parser("synth", help="write a synthetic chirp corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=256)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--duration", type=float, default=0.25)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
