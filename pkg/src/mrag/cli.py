"""Command-line entry point: ``mrag <command> ...``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import jpeg
from .data import Pair, make_pairs

EXIT_OK, EXIT_PIPELINE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ config


@dataclass
class CliConfig:
    pairs: str = ""
    model: str = "model.mrag"
    surrogate: str = ""
    quality: int = 75
    seed: int = 0
    lr: float = 5e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-6
    weight_decay: float = 5e-4
    batch_size: int = 4
    steps: int = 500
    precision: int = 32
    growth: int = 32
    fusion_layers: int = 3
    size: int = 64
    pair_count: int = 32
    surrogate_epochs: int = 30
    standin_rate: float = 0.1
    log_json: str = ""
    log_csv: str = ""


KEYS = {f.name: f.type for f in fields(CliConfig)}
_CASTS = {"int": int, "float": float, "str": str}


def parse_config(text: str) -> dict[str, object]:
    """``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out: dict[str, object] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {n}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KEYS:
            raise UsageError(f"config line {n}: unknown key {key!r}")
        try:
            out[key] = _CASTS[KEYS[key]](value)
        except ValueError:
            raise UsageError(f"config line {n}: bad value for {key}: {value!r}") from None
    return out


def resolve_config(args: argparse.Namespace) -> CliConfig:
    """Defaults, then the config file, then MRAG_SEED, then explicit flags."""
    values: dict[str, object] = {}
    if getattr(args, "config", None):
        values.update(parse_config(Path(args.config).read_text()))
    if "MRAG_SEED" in os.environ:
        try:
            values["seed"] = int(os.environ["MRAG_SEED"])
        except ValueError:
            raise UsageError(f"MRAG_SEED must be an integer, got {os.environ['MRAG_SEED']!r}") from None
    for key in KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return CliConfig(**values)


# --------------------------------------------------------------------- io


def load_image(path):
    """A baseline JPEG becomes a JpegImage; an 8-bit RGB PNG becomes (H, W, 3) uint8."""
    data = Path(path).read_bytes()
    if data[:2] == b"\xff\xd8":
        return jpeg.parse(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image

        with Image.open(path) as im:
            if im.mode != "RGB":
                raise jpeg.UnsupportedFormatError(f"{path}: PNG must be 8-bit RGB, got mode {im.mode}")
            return np.asarray(im, dtype=np.uint8).copy()
    raise jpeg.UnsupportedFormatError(f"{path}: neither a JPEG nor a PNG file")


def save_png(path, rgb: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(rgb, dtype=np.uint8), "RGB").save(path)


def load_pairs(directory) -> list[Pair]:
    """Every ``<stem>.jpg`` cover with a matching ``<stem>.png`` secret."""
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"pair directory {root} does not exist")
    pairs = []
    for cover_path in sorted(root.glob("*.jpg")):
        secret_path = cover_path.with_suffix(".png")
        if not secret_path.exists():
            continue
        cover = load_image(cover_path)
        secret = load_image(secret_path)
        if not isinstance(cover, jpeg.JpegImage) or isinstance(secret, jpeg.JpegImage):
            raise jpeg.UnsupportedFormatError(f"{cover_path.stem}: expected a JPEG cover and a PNG secret")
        pairs.append(Pair(cover, secret, jpeg.decode_pixels(cover)))
    if not pairs:
        raise FileNotFoundError(f"no <name>.jpg / <name>.png pairs in {root}")
    return pairs


def _emit(payload: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(payload))
    else:
        for k, v in payload.items():
            print(f"{k}: {v}")


# --------------------------------------------------------------- commands


def cmd_synth(args, cfg: CliConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, p in enumerate(make_pairs(cfg.pair_count, cfg.size, cfg.quality, cfg.seed)):
        jpeg.write(out / f"pair{i:03d}.jpg", p.cover)
        save_png(out / f"pair{i:03d}.png", p.secret)
    _emit({"pairs": cfg.pair_count, "dir": str(out)}, args.json)
    return EXIT_OK


def _surrogate_for(cfg: CliConfig, pairs: list[Pair]):
    from .losses import Surrogate, pretrain_surrogate, standin_stego

    h, w = pairs[0].cover.height, pairs[0].cover.width
    if cfg.surrogate and Path(cfg.surrogate).exists():
        sur = Surrogate.load(cfg.surrogate, h, w, cfg.quality)
        sur.freeze()
        return sur, None
    covers = [p.cover for p in pairs]
    stegos = [standin_stego(c, cfg.standin_rate, cfg.seed + i) for i, c in enumerate(covers)]
    result = pretrain_surrogate(covers, stegos, cfg.surrogate_epochs, seed=cfg.seed,
                                target_accuracy=0.95, quality=cfg.quality)
    if cfg.surrogate:
        result.surrogate.save(cfg.surrogate)
    return result.surrogate, result


def cmd_train(args, cfg: CliConfig) -> int:
    from .network import MragConfig, MragModel
    from .train import TrainConfig, train

    ad.set_precision(cfg.precision)
    pairs = load_pairs(cfg.pairs) if cfg.pairs else make_pairs(cfg.pair_count, cfg.size, cfg.quality, cfg.seed)
    surrogate, pre = _surrogate_for(cfg, pairs)
    h, w = pairs[0].cover.height, pairs[0].cover.width
    model = MragModel(MragConfig(height=h, width=w, growth=cfg.growth,
                                 fusion_layers=cfg.fusion_layers, seed=cfg.seed))
    tc = TrainConfig(cfg.lr, (cfg.beta1, cfg.beta2), cfg.eps, cfg.weight_decay,
                     cfg.batch_size, cfg.steps, cfg.seed, cfg.precision)

    def progress(step, row):
        if not args.json and (step % 50 == 0 or step == tc.steps - 1):
            print(f"step {step:4d}  L_total {row['l_total']:+.5f}  L_hi {row['l_hi']:.2e}  "
                  f"L_re {row['l_re']:.2e}  L_an {row['l_an']:+.4f}", flush=True)

    result = train(model, surrogate, pairs, tc, progress)
    model.save(cfg.model)
    if cfg.log_json:
        result.write_json(cfg.log_json)
    if cfg.log_csv:
        result.write_csv(cfg.log_csv)
    _emit({"model": cfg.model, "steps": tc.steps, "seconds": round(result.seconds, 1),
           "final_l_total": result.log[-1]["l_total"],
           "surrogate_accuracy": pre.accuracy[pre.best_epoch] if pre else None}, args.json)
    return EXIT_OK


def _load_model(path):
    from .network import MragModel

    return MragModel.load(path)


def cmd_hide(args, cfg: CliConfig) -> int:
    from .network import hide

    cover, secret = load_image(args.cover), load_image(args.secret)
    if not isinstance(cover, jpeg.JpegImage):
        raise jpeg.UnsupportedFormatError(f"{args.cover}: cover must be a JPEG")
    if isinstance(secret, jpeg.JpegImage):
        raise jpeg.UnsupportedFormatError(f"{args.secret}: secret must be a PNG")
    bundle = hide(cover, secret, _load_model(args.model))
    Path(args.out).write_bytes(bundle.to_bytes())
    _emit({"stego": args.out}, args.json)
    return EXIT_OK


def cmd_reveal(args, cfg: CliConfig) -> int:
    from .network import reveal

    stego = load_image(args.stego)
    if not isinstance(stego, jpeg.JpegImage):
        raise jpeg.UnsupportedFormatError(f"{args.stego}: stego must be a JPEG")
    save_png(args.out, reveal(stego, _load_model(args.model)))
    _emit({"secret": args.out}, args.json)
    return EXIT_OK


def cmd_eval(args, cfg: CliConfig) -> int:
    from .losses import Surrogate, standin_stego
    from .train import evaluate

    pairs = load_pairs(args.pairs)
    model = _load_model(args.model)
    surrogate, standins = None, None
    if args.surrogate:
        surrogate = Surrogate.load(args.surrogate, model.config.height, model.config.width, cfg.quality)
        standins = [standin_stego(p.cover, cfg.standin_rate, cfg.seed + i) for i, p in enumerate(pairs)]
    report = evaluate(model, pairs, surrogate, standins)
    if args.json:
        print(report.to_json())
    else:
        for k, v in report.summary().items():
            print(f"{k}: {v if v is None else round(v, 4)}")
    return EXIT_OK


def cmd_selfcheck(args, cfg: CliConfig) -> int:
    from .selfcheck import run

    results = run(args.precision)
    passed = sum(r.ok for r in results)
    if args.json:
        print(json.dumps({"passed": passed, "failed": len(results) - passed,
                          "checks": [asdict(r) for r in results]}))
    else:
        for r in results:
            print(f"{'PASS' if r.ok else 'FAIL'}  {r.name}  {r.detail}")
        print(f"{passed} passed, {len(results) - passed} failed")
    return EXIT_OK if passed == len(results) else EXIT_PIPELINE


def cmd_jpeg_dump(args, cfg: CliConfig) -> int:
    img = load_image(args.file)
    if not isinstance(img, jpeg.JpegImage):
        raise jpeg.UnsupportedFormatError(f"{args.file}: not a JPEG")
    sys.stdout.write(jpeg.dump(img))
    return EXIT_OK


# ----------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mrag", description="Hide RGB secrets in color JPEG covers.")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--quality", type=int)
        sp.add_argument("--json", action="store_true", default=argparse.SUPPRESS)

    t = sub.add_parser("train", help="pretrain the surrogate (if needed) and train a model")
    common(t)
    t.add_argument("--pairs", help="directory of <name>.jpg / <name>.png pairs (default: synthetic)")
    t.add_argument("--model")
    t.add_argument("--surrogate", help="surrogate weights to load, or where to save a fresh one")
    for name, typ in [("steps", int), ("lr", float), ("batch-size", int), ("precision", int),
                      ("growth", int), ("fusion-layers", int), ("pair-count", int), ("size", int),
                      ("surrogate-epochs", int), ("log-json", str), ("log-csv", str)]:
        t.add_argument(f"--{name}", type=typ)

    h = sub.add_parser("hide", help="embed a PNG secret into a JPEG cover")
    common(h)
    for name in ("cover", "secret", "model", "out"):
        h.add_argument(f"--{name}", required=True)

    r = sub.add_parser("reveal", help="recover the secret from a stego JPEG")
    common(r)
    for name in ("stego", "model", "out"):
        r.add_argument(f"--{name}", required=True)

    e = sub.add_parser("eval", help="PSNR/SSIM/APD and detection accuracy on a pair directory")
    common(e)
    e.add_argument("--pairs", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--surrogate")

    s = sub.add_parser("selfcheck", help="run the built-in invariant checks")
    common(s)
    s.add_argument("--precision", type=int, choices=(32, 64), default=32)

    d = sub.add_parser("jpeg-dump", help="print tables and quantized coefficients")
    common(d)
    d.add_argument("file")

    y = sub.add_parser("synth", help="write seeded desk-scale pairs to a directory")
    common(y)
    y.add_argument("--out", required=True)
    y.add_argument("--pair-count", type=int)
    y.add_argument("--size", type=int)
    return p


COMMANDS = {"train": cmd_train, "hide": cmd_hide, "reveal": cmd_reveal, "eval": cmd_eval,
            "selfcheck": cmd_selfcheck, "jpeg-dump": cmd_jpeg_dump, "synth": cmd_synth}


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args, cfg)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (jpeg.JpegError, ValueError, OSError, FloatingPointError, KeyError, RuntimeError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_PIPELINE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
