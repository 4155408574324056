"""Command-line interface: ``camsim <command> [options]``.

Every option can also come from a ``key = value`` config file passed with
``--config``; command-line flags win. Exit codes: 0 success, 1 usage
error, 2 data or format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import (DegenerateDataError, DimensionError, FormatError, NumericError,
                     ParameterError, StateError)

log = logging.getLogger("camsim")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fraction(text: str) -> Fraction:
    try:
        value = Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number or ratio: {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return value


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _common(p):
    p.add_argument("--config", type=Path, help="key = value file; flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def _model_opt(p):
    p.add_argument("--model", type=Path, help="model bundle directory (zero-initialized if omitted)")


def _target_opts(p):
    p.add_argument("--iso", type=float, required=False)
    p.add_argument("--time", type=_fraction, help="exposure time in seconds, e.g. 1/250")
    p.add_argument("--fnumber", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="camsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="render a synthetic dataset")
    _common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--kind", choices=["mixed", "noise", "aperture"], default="mixed")
    p.add_argument("--clean", type=_bool, default=False, help="noise-free aperture frames")

    p = sub.add_parser("train", help="train all stages, then finetune jointly")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--schedule", choices=["desk", "full"], default="desk")
    for name in ("exposure_epochs", "noise_epochs", "aperture_epochs", "joint_epochs",
                 "batch_size", "patch_size", "pairs_per_epoch", "decay_every"):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=int)
    for name in ("lr", "lr_decay"):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=float)
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--nlf-mode", choices=["physical", "literal"], default="physical")
    p.add_argument("--report", type=Path, help="directory for loss-curve CSV and PNG")

    p = sub.add_parser("simulate", help="re-render one raw frame under new settings")
    _common(p)
    _model_opt(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _target_opts(p)
    p.add_argument("--preview", type=Path, help="PNG preview of the output")
    for stage in ("exposure", "noise", "aperture", "renoise"):
        p.add_argument(f"--{stage}", type=_bool, default=True)

    p = sub.add_parser("eval", help="PSNR/SSIM after each stage on held-out sequences")
    _common(p)
    _model_opt(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--stage", choices=["exposure", "noise", "aperture"], default="exposure",
                   help="pair-selection rule for the evaluated pairs")
    p.add_argument("--out", type=Path, help="CSV output (also printed)")
    p.add_argument("--figure", type=Path)
    p.add_argument("--renoise", type=_bool, default=False)

    p = sub.add_parser("hdr", help="simulate a -4..+4 EV bracket and fuse it")
    _common(p)
    _model_opt(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="fused PNG")
    p.add_argument("--frames", type=Path, help="directory for the bracket PNGs")

    p = sub.add_parser("autoexpose", help="score a 64-state settings grid")
    _common(p)
    _model_opt(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, help="score table CSV (also printed)")
    p.add_argument("--figure", type=Path)
    return parser


def read_config(path) -> dict:
    from .dataset import parse_key_values

    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    return {k.replace("-", "_"): v for k, v in parse_key_values(text)}


def parse_args(argv=None) -> argparse.Namespace:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, rest = pre.parse_known_args(argv)
    command = next((a for a in rest if not a.startswith("-")), None)
    subparsers = parser._subparsers._group_actions[0].choices
    if known.config is None or command not in subparsers:
        return parser.parse_args(argv)
    config = read_config(known.config)
    subparser = subparsers[command]
    actions = {a.dest: a for a in subparser._actions}
    unknown = sorted(set(config) - set(actions) - {"config"})
    if unknown:
        parser.error(f"unknown config keys: {', '.join(unknown)}")
    defaults = {}
    for key, raw in config.items():
        action = actions[key]
        try:
            if isinstance(action, argparse._StoreTrueAction):
                value = _bool(raw)
            else:
                value = action.type(raw) if action.type else raw
        except (argparse.ArgumentTypeError, ValueError) as exc:
            parser.error(f"config key {key}: {exc}")
        if action.choices is not None and value not in action.choices:
            parser.error(f"config key {key}: {value!r} not in {list(action.choices)}")
        defaults[key] = value
    subparser.set_defaults(**defaults)
    # flags the config supplies no longer have to appear on the command line
    for action in subparser._actions:
        if action.dest in defaults:
            action.required = False
    return parser.parse_args(argv)


# --------------------------------------------------------------------------- commands


def _load_model(args):
    from .pipeline import SimulatorModel, load_model

    if args.model is None:
        return SimulatorModel.create(seed=args.seed)
    return load_model(args.model)


def _target(args, source):
    from .dataset import check_settings_range, make_settings

    t = args.time if args.time is not None else source.t
    iso = args.iso if args.iso is not None else source.g
    n = args.fnumber if args.fnumber is not None else source.n
    try:
        target = make_settings(t, iso, n)
    except ParameterError as exc:
        raise UsageError(str(exc)) from None
    check_settings_range(target, "target ")
    return target


def _settings_row(s):
    return [f"{float(s.t):.8g}", f"{float(s.g):g}", f"{float(s.n):g}"]


def cmd_synth(args):
    from .dataset import synthetic_dataset, write_sequence

    if args.scenes < 1 or args.size < 8 or args.size % 2:
        raise UsageError("need --scenes >= 1 and an even --size >= 8")
    seqs = synthetic_dataset(args.scenes, args.size, args.seed, args.kind, args.clean)
    for seq in seqs:
        write_sequence(seq, args.out / seq.scene_id)
    print(f"wrote {len(seqs)} sequences to {args.out}")


def cmd_train(args):
    from .dataset import read_dataset
    from .pipeline import SimulatorModel, save_model, train
    from .report import plot_loss_curves, write_csv
    from .training import TrainSchedule

    overrides = {k: getattr(args, k) for k in TrainSchedule.field_names()
                 if getattr(args, k, None) is not None and k != "seed"}
    try:
        base = TrainSchedule.desk if args.schedule == "desk" else TrainSchedule
        schedule = base(seed=args.seed, **overrides)
    except ParameterError as exc:
        raise UsageError(str(exc)) from None
    data = read_dataset(args.data)
    model = SimulatorModel.create(args.width, args.depth, args.seed)
    model.config["nlf_mode"] = args.nlf_mode
    train(model, data, schedule)
    save_model(model, args.out)
    rows = [[stage, i, f"{v:.8g}"] for stage, curve in model.history.items()
            for i, v in enumerate(curve)]
    text = write_csv(None, ["stage", "step", "loss"], rows)
    if args.report is not None:
        args.report.mkdir(parents=True, exist_ok=True)
        write_csv(args.report / "loss_curves.csv", ["stage", "step", "loss"], rows)
        plot_loss_curves(model.history, args.report / "loss_curves.png")
    sys.stdout.write(text)
    print(f"# exposure w={model.exposure.w:.8g} b={model.exposure.b:.8g}; model saved to {args.out}")


def cmd_simulate(args):
    from .dataset import read_raw, write_raw
    from .pipeline import SimulateOptions, simulate
    from .render import render_srgb
    from .report import save_png

    model = _load_model(args)
    raw = read_raw(args.input)
    target = _target(args, raw.settings)
    opts = SimulateOptions(args.exposure, args.noise, args.aperture, args.renoise, args.seed)
    out = simulate(model, raw, target, opts)
    _check_finite(out.data)
    write_raw(args.out, out)
    if args.preview is not None:
        save_png(render_srgb(out), args.preview)
    print("t,iso,fnumber,mean")
    print(",".join(_settings_row(target) + [f"{out.data.mean():.6g}"]))


def cmd_eval(args):
    from .dataset import read_dataset
    from .pipeline import SimulateOptions, evaluate
    from .report import plot_stage_metrics

    model = _load_model(args)
    data = read_dataset(args.data)
    report = evaluate(model, data, args.stage, SimulateOptions(renoise=args.renoise, seed=args.seed))
    if report.pairs == 0:
        raise DegenerateDataError(f"no {args.stage} pairs in {args.data}")
    text = report.to_delimited()
    if args.out is not None:
        args.out.write_text(text)
    if args.figure is not None:
        plot_stage_metrics(report, args.figure)
    sys.stdout.write(text)


def cmd_hdr(args):
    from .dataset import read_raw
    from .render import hdr_preview, well_exposed_fraction
    from .report import save_png

    model = _load_model(args)
    raw = read_raw(args.input)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fused, frames, targets = hdr_preview(model, raw, seed=args.seed)
    for w in caught:
        log.warning("%s", w.message)
    save_png(fused, args.out)
    if args.frames is not None:
        args.frames.mkdir(parents=True, exist_ok=True)
        for k, f in enumerate(frames):
            save_png(f, args.frames / f"bracket_{k:02d}.png")
    print("frame,t,iso,fnumber,well_exposed")
    for k, (s, f) in enumerate(zip(targets, frames)):
        print(",".join([str(k)] + _settings_row(s) + [f"{well_exposed_fraction(f):.4f}"]))
    print(",".join(["fused", "", "", "", f"{well_exposed_fraction(fused):.4f}"]))


def cmd_autoexpose(args):
    from .dataset import read_raw
    from .render import auto_expose, exposure_grid
    from .report import plot_scores, write_csv

    model = _load_model(args)
    raw = read_raw(args.input)
    best, table = auto_expose(model, raw, exposure_grid(), seed=args.seed)
    rows = [[i] + _settings_row(s.settings) + [f"{s.score:.6g}"] for i, s in enumerate(table)]
    text = write_csv(args.out, ["candidate", "t", "iso", "fnumber", "score"], rows)
    if args.figure is not None:
        plot_scores(table, args.figure, table.index(best))
    sys.stdout.write(text)
    print("# best: t={} iso={} fnumber={} score={:.6g}".format(*_settings_row(best.settings),
                                                              best.score))


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite values in output")


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "simulate": cmd_simulate,
            "eval": cmd_eval, "hdr": cmd_hdr, "autoexpose": cmd_autoexpose}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"camsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with np.errstate(invalid="raise", divide="raise"):
            COMMANDS[args.command](args)
    except (UsageError, ParameterError) as exc:
        print(f"camsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, DegenerateDataError, DimensionError, StateError, OSError) as exc:
        print(f"camsim: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError, ArithmeticError) as exc:
        print(f"camsim: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
