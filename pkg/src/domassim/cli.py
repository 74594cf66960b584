"""Command-line entry point: ``domassim {train,attack-eval,glcm,hist,synth}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys


from . import data as D
from .attacks import ATTACKS
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .evaluation import EPSILON_GRID, parse_epsilon, robustness_sweep, write_report_csv, write_text_atomic
from .models import ModelStack
from .texture import ORIENTATIONS, GlcmOffset, glcm, glcm_normalize, histogram_stats, quantize, sot_features
from .train import ConfigError, TrainConfig, train

log = logging.getLogger("domassim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_data_args(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", metavar="DIR", help="image root laid out as DIR/<class>/*.png|pgm")
    src.add_argument("--synth", action="store_true", help="use the synthetic texture dataset")
    p.add_argument("--config", metavar="FILE", help="key = value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--group", metavar="OLD=NEW,...", help="class regrouping applied before balancing (--data only)")


def build_parser():
    parser = _Parser(prog="domassim", description="Texture/colour domain assimilation and robustness workbench.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one model variant and write a checkpoint")
    _add_data_args(p)
    p.add_argument("--variant", choices=["base", "tc", "tc-glcm", "tc_glcm"], default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None, help="defaults to min(config patience, epochs)")
    p.add_argument("--out", required=True, metavar="CKPT")

    p = sub.add_parser("attack-eval", help="robustness sweep of one or more checkpoints")
    _add_data_args(p)
    p.add_argument("--ckpt", required=True, action="append", help="checkpoint; repeat for several variants")
    p.add_argument("--attacks", default=",".join(ATTACKS), help="comma list of " + ",".join(ATTACKS))
    p.add_argument("--epsilons", default=",".join(f"{k}/255" for k in EPSILON_GRID))
    p.add_argument("--steps", type=int, default=10, help="iterations for bim/mifgsm/pgd")
    p.add_argument("--out", required=True, metavar="CSV")

    for name, helptext in (("glcm", "texture features per orientation"), ("hist", "first-order histogram stats")):
        p = sub.add_parser(name, help=helptext)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--image")
        src.add_argument("--dir")
        if name == "glcm":
            p.add_argument("--distance", type=int, default=3)
            p.add_argument("--levels", type=int, default=16)
        p.add_argument("--out", required=True, metavar="CSV")

    p = sub.add_parser("synth", help="write the synthetic texture dataset as PNGs")
    p.add_argument("--n", type=int, default=200, help="images per class")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, metavar="DIR")
    return parser


def _config(args, **overrides) -> TrainConfig:
    overrides["seed"] = args.seed
    epochs = overrides.get("epochs")
    if epochs is not None and overrides.get("patience") is None:
        base = TrainConfig.from_file(args.config) if args.config else TrainConfig()
        overrides["patience"] = min(base.patience, epochs)
    if args.config:
        return TrainConfig.from_file(args.config, **overrides)
    return TrainConfig(**{k: v for k, v in overrides.items() if v is not None})


def _parse_group(text):
    if not text:
        return None
    mapping = {}
    for part in text.split(","):
        old, sep, new = part.partition("=")
        if not sep or not old.strip() or not new.strip():
            raise UsageError(f"bad --group entry {part!r}; expected OLD=NEW")
        mapping[old.strip()] = new.strip()
    return mapping


def _dataset(args, cfg: TrainConfig):
    """Preprocessed, balanced dataset split into (train, test)."""
    if args.synth:
        ds = D.synth_textures(cfg.n_per_class, cfg.input_size, cfg.seed)
    else:
        ds = D.load_image_dir(args.data)
        ds = D.preprocess_dataset(ds, D.PreprocessSpec(cfg.input_size, cfg.input_size))
        grouping = _parse_group(args.group)
        if grouping is not None:
            grouping = {c: grouping.get(c, c) for c in ds.class_names}
        ds = D.group_and_balance(ds, grouping, cfg.seed)
    return D.split(ds, cfg.train_fraction, cfg.seed)


def cmd_train(args):
    variant = args.variant.replace("-", "_") if args.variant else None
    cfg = _config(args, variant=variant, epochs=args.epochs, patience=args.patience)
    tr, te = _dataset(args, cfg)
    stack = ModelStack(cfg.variant, (cfg.input_size, cfg.input_size), len(tr.class_names), width=cfg.width,
                       dropout_p=cfg.dropout, hidden=cfg.hidden, seed=cfg.seed)
    stack, hist = train(stack, tr, te, cfg)
    save_checkpoint(stack, args.out)
    print(f"variant={cfg.variant} epochs_run={len(hist.records)} best_epoch={hist.best_epoch} "
          f"best_val_acc={hist.best_val_acc:.4f} stop={hist.stop_reason} -> {args.out}")
    return 0


def cmd_attack_eval(args):
    names = [a.strip().lower() for a in args.attacks.split(",") if a.strip()]
    bad = [a for a in names if a not in ATTACKS]
    if bad or not names:
        raise UsageError(f"unknown attack name(s) {', '.join(bad) or '(none)'}; valid names: {', '.join(ATTACKS)}")
    try:
        eps = [parse_epsilon(e) for e in args.epsilons.split(",") if e.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    cfg = _config(args)
    stacks = [load_checkpoint(path) for path in args.ckpt]
    size = stacks[0].input_size
    if any(s.input_size != size for s in stacks):
        raise UsageError("all checkpoints must share one input size")
    cfg.input_size = size[0]
    _, test = _dataset(args, cfg)
    rows = []
    for stack in stacks:
        rows += robustness_sweep(stack, test, names, eps, seed=cfg.seed, steps=args.steps)
    write_report_csv(rows, args.out)
    print(f"{len(rows)} rows -> {args.out}")
    return 0


def _image_paths(args):
    if args.image:
        return [args.image]
    out = []
    for root, _, files in os.walk(args.dir):
        out += [os.path.join(root, f) for f in files if os.path.splitext(f)[1].lower() in D.IMAGE_EXTENSIONS]
    if not out:
        raise UsageError(f"no .png/.pgm images under {args.dir}")
    return sorted(out)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def cmd_glcm(args):
    if args.levels < 2 or args.distance < 1:
        raise UsageError("--levels must be >= 2 and --distance >= 1")
    rows = []
    for path in _image_paths(args):
        lv = quantize(D.read_image(path), args.levels)
        for angle in ORIENTATIONS:
            off = GlcmOffset.from_angle(args.distance, angle)
            feats = sot_features(glcm_normalize(glcm(lv, off, args.levels)))
            rows.append([path, angle, args.distance] + [repr(float(v)) for v in feats])
    header = ["image_path", "orientation", "distance", "asm", "contrast", "homogeneity", "correlation",
              "dissimilarity"]
    write_text_atomic(args.out, _csv_text(header, rows))
    return 0


def cmd_hist(args):
    rows = []
    for path in _image_paths(args):
        s = histogram_stats(D.read_image(path))
        rows.append([path] + [repr(float(v)) for v in (s.mean, s.variance, s.skewness, s.kurtosis)])
    write_text_atomic(args.out, _csv_text(["image_path", "mean", "variance", "skewness", "kurtosis"], rows))
    return 0


def cmd_synth(args):
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    if args.size < 16:
        raise UsageError("--size must be >= 16")
    ds = D.synth_textures(args.n, args.size, args.seed)
    D.write_dataset(ds, args.out)
    print(f"{len(ds)} images -> {args.out}")
    return 0


COMMANDS = {"train": cmd_train, "attack-eval": cmd_attack_eval, "glcm": cmd_glcm, "hist": cmd_hist,
            "synth": cmd_synth}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"domassim: config error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (CheckpointError, OSError, ValueError, RuntimeError) as exc:
        print(f"domassim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
