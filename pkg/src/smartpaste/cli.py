"""smartpaste command line: forge, train, paste, gradcheck.

Exit codes: 0 success, 1 usage error (and a failed gradcheck), 2 data
error, 3 numerical failure during training.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .sample_forge import CorpusError, ForgeConfig, MaskConfig, forge_batch, load_corpus, write_sample
from .geometric import DegenerateGeometryError
from .models import composite_output, generator_forward
from .photometric import ColorRanges
from .tensor_core import ContractError, read_image, read_mask, write_image
from .trainer import NonFiniteLossError, TrainConfig, init_state, train

log = logging.getLogger("smartpaste")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# forge


def cmd_forge(args) -> int:
    cfg = ForgeConfig(
        crop=args.crop,
        sigma=args.sigma,
        shading_mode=args.shading_mode,
        color=ColorRanges.identity() if args.identity_shading else ColorRanges(
            saturation=tuple(args.saturation), hue=tuple(args.hue),
            contrast=tuple(args.contrast), brightness=tuple(args.brightness)),
        mask=MaskConfig(area=tuple(args.mask_area), aspect=tuple(args.mask_aspect), rotation=tuple(args.mask_rotation)),
        fixed_mask=args.fixed_mask,
    )
    cfg.mask.validate()
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    corpus = load_corpus(args.corpus, args.target_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(args.count):
        (sample,) = forge_batch(corpus, cfg, args.seed, [k])
        write_sample(out, f"{k:06d}", sample)
    print(f"wrote {args.count} samples to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

_TRAIN_ALIASES = {"iterations": ["--iters"], "resolution": ["--res"]}


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    """One flag per TrainConfig field; unset flags stay None and take the dataclass default."""
    for f in dataclasses.fields(TrainConfig):
        names = ["--" + f.name.replace("_", "-")] + _TRAIN_ALIASES.get(f.name, [])
        default = f.default
        help_text = f"default {list(default) if isinstance(default, tuple) else default}"
        if isinstance(default, bool):
            p.add_argument(*names, dest=f.name, action=argparse.BooleanOptionalAction, default=None, help=help_text)
        elif isinstance(default, tuple):
            p.add_argument(*names, dest=f.name, type=type(default[0]), nargs="+", default=None, metavar="V", help=help_text)
        else:
            p.add_argument(*names, dest=f.name, type=type(default), default=None, help=help_text)


def _given_train_flags(args) -> dict:
    return {f.name: getattr(args, f.name) for f in dataclasses.fields(TrainConfig) if getattr(args, f.name) is not None}


def cmd_train(args) -> int:
    # everything that can fail on bad input happens before the first write
    corpus = load_corpus(args.corpus, args.target_size)
    out = Path(args.out)
    given = _given_train_flags(args)
    if args.resume:
        extra = sorted(set(given) - {"iterations"})
        if extra:
            raise UsageError(f"--resume takes its config from the checkpoint; only --iters may be given, not {extra}")
        state = load_checkpoint(args.resume)
        if "iterations" in given:
            state.cfg = dataclasses.replace(state.cfg, iterations=given["iterations"])
    else:
        state = init_state(TrainConfig(**given))
    if not out.parent.is_dir():
        raise CorpusError(f"output directory {out.parent} does not exist")
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log")
    state, history = train(corpus, state=state, log_path=log_path, checkpoint_path=out)
    if history:
        last = history[-1]
        print(f"iteration {state.iteration}: l_rec {last['l_rec']:.5f}  d_loss {last['d_loss']:.5f}")
    print(f"checkpoint {out}, metrics {log_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# paste


def paste_images(state, source, target, mask, noise_seed: int = 0) -> np.ndarray:
    """Composite ``source`` (inside ``mask``) into ``target`` with the trained generator.

    Inputs are ``(H, W, 3)`` images and an ``(H, W, 1)`` binary mask with
    ``H`` and ``W`` divisible by 8.  Context pixels of the result equal the
    target exactly; the result is not clamped.
    """
    shapes = {"source": source.shape[:2], "target": target.shape[:2], "mask": mask.shape[:2]}
    if len(set(shapes.values())) != 1:
        dims = ", ".join(f"{k} {h}x{w}" for k, (h, w) in shapes.items())
        raise ContractError(f"image dimensions differ: {dims}")
    h, w = shapes["target"]
    if h % 8 or w % 8:
        raise ContractError(
            f"dimensions {h}x{w} are not divisible by 8; pad to {-(-h // 8) * 8}x{-(-w // 8) * 8}")
    target = np.asarray(target, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    composite = target * (1 - m) + source * m
    x = np.concatenate([composite, m], axis=-1)[None]
    residual = generator_forward(state.generator, x, state.cfg.generator_config(), noise=noise_seed)
    # composite in float64 so context pixels are the caller's values, not a float32 rounding
    y = composite_output(residual.value.astype(np.float64), x[..., :3], target[None], m[None])
    return y[0]


def _rgb(path) -> np.ndarray:
    img = read_image(path)
    if img.shape[-1] == 1:
        img = np.repeat(img, 3, axis=-1)
    return img[..., :3]


def cmd_paste(args) -> int:
    state = load_checkpoint(args.ckpt)
    source, target, mask = _rgb(args.source), _rgb(args.target), read_mask(args.mask)
    y = paste_images(state, source, target, mask, args.noise_seed)
    write_image(args.out, y)
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    from .autodiff.gradcheck import CASES, run_cases

    names = None if args.ops == "all" else [n.strip() for n in args.ops.split(",")]
    if names is not None:
        unknown = [n for n in names if n not in CASES]
        if unknown:
            raise UsageError(f"unknown op(s) {unknown}; choose from: all, {', '.join(CASES)}")
    results = run_cases(names, tol=args.tol, seed=args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed" + (f"; failed: {', '.join(failed)}" if failed else ""))
    return EXIT_USAGE if failed else EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smartpaste", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("forge", help="write forged training samples")
    f.add_argument("--corpus", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--count", type=int, default=1)
    f.add_argument("--crop", type=int, default=64)
    f.add_argument("--sigma", type=float, default=15.0)
    f.add_argument("--shading-mode", choices=("local", "global"), default="local")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--identity-shading", action="store_true", help="disable color corruption")
    f.add_argument("--fixed-mask", action="store_true", help="same mask for every sample")
    f.add_argument("--target-size", type=int, default=None, help="rescale images so the short side has this many pixels")
    defaults = ColorRanges()
    for name in ("saturation", "hue", "contrast", "brightness"):
        f.add_argument(f"--{name}", type=float, nargs=2, default=list(getattr(defaults, name)), metavar=("LO", "HI"))
    mdef = MaskConfig()
    f.add_argument("--mask-area", type=float, nargs=2, default=list(mdef.area), metavar=("LO", "HI"))
    f.add_argument("--mask-aspect", type=float, nargs=2, default=list(mdef.aspect), metavar=("LO", "HI"))
    f.add_argument("--mask-rotation", type=float, nargs=2, default=list(mdef.rotation), metavar=("LO", "HI"))
    f.set_defaults(func=cmd_forge)

    t = sub.add_parser("train", help="train generator and critic")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", default=None, help="metrics log (default: <out>.log)")
    t.add_argument("--resume", default=None, help="continue from this checkpoint")
    t.add_argument("--target-size", type=int, default=None)
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("paste", help="composite a masked source into a target")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--source", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--noise-seed", type=int, default=0)
    s.set_defaults(func=cmd_paste)

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    g.add_argument("--ops", default="all", help="'all' or comma-separated case names")
    g.add_argument("--tol", type=float, default=None, help="override every tolerance")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLossError as exc:
        print(f"numerical failure: {exc}\n{exc.diagnostics}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorpusError, CheckpointError, ContractError, DegenerateGeometryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
