"""Command-line entry point: train / sample / fid / pairs / synth / inspect / serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="charstudio", description="Character silhouette GAN engine and studio")
    parser.add_argument(
        "--deterministic",
        action="store_true",
        help="single-threaded reproducible math (limits BLAS thread pools)",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("train", parents=[], help="train a model", add_help=True)
    p.add_argument("--arch", required=True, choices=["dcgan", "wgan", "wgan-gp", "translator", "biggan-deep"])
    p.add_argument("--data", help="dataset root (one subdirectory per class)")
    p.add_argument("--pairs", help="pair manifest for translator training")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--res", type=int, choices=[32, 64], default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--conditional", action="store_true")
    p.add_argument("--merge", action="store_true", help="collapse class labels into one")
    p.add_argument("--augment", action="store_true")
    p.add_argument("--p0", type=float, default=0.0, help="initial augmentation probability")
    p.add_argument("--checkpoint-every", type=int, default=1)
    p.add_argument("--resume", help="checkpoint to resume from")

    p = sub.add_parser("sample", help="generate images from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trunc", type=float, default=1.0)
    p.add_argument("--class", dest="class_label", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fid", help="score generated images against a real set")
    p.add_argument("--real", required=True)
    p.add_argument("--fake", help="directory of generated images")
    p.add_argument("--checkpoint", help="generator checkpoint to sample from")
    p.add_argument("--extractor", choices=["pixel", "randconv"], default="pixel")
    p.add_argument("--n", type=int, default=50_000)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="write the JSON report here")

    p = sub.add_parser("pairs", help="derive silhouettes for colored images")
    p.add_argument("--colored", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.95)

    p = sub.add_parser("synth", help="write a synthetic toy corpus")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)

    p = sub.add_parser("inspect", help="print a checkpoint header")
    p.add_argument("file")

    p = sub.add_parser("serve", help="run the studio HTTP service")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--models", required=True)
    p.add_argument("--session", required=True)

    return parser


def _cmd_train(args, parser: _Parser) -> int:
    from . import data, training, zoo

    if args.arch == "translator":
        if not args.pairs:
            parser.error("translator training needs --pairs MANIFEST")
    elif not args.data:
        parser.error(f"{args.arch} training needs --data DIR")

    overrides = {"seed": args.seed, "resolution": args.res, "base_width": args.width,
                 "conditional": args.conditional, "augment": args.augment,
                 "augment_p0": args.p0, "checkpoint_every": args.checkpoint_every}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.batch is not None:
        overrides["batch_size"] = args.batch
    cfg = training.preset(args.arch, **overrides)

    if cfg.arch == "translator":
        sils, cols = data.load_pairs(args.pairs, 64)
        pair = zoo.build_translator(
            base_width=cfg.base_width, init=cfg.init, seed=cfg.seed, leaky_slope=cfg.leaky_slope
        )
        result = training.train_translator(pair, sils, cols, cfg, args.out, resume=args.resume)
    else:
        dataset = data.load_dataset(args.data, cfg.resolution, merge=args.merge or not cfg.conditional)
        pair = zoo.build_gan(
            cfg.arch, cfg.resolution, conditional=cfg.conditional, base_width=cfg.base_width,
            latent_dim=cfg.latent_dim, init=cfg.init, seed=cfg.seed, leaky_slope=cfg.leaky_slope,
        )
        result = training.train_gan(pair, dataset, cfg, args.out, resume=args.resume)
    print(f"trained {result.steps} steps over {result.epochs} epochs")
    print(f"checkpoints: {', '.join(str(c) for c in result.checkpoints)}")
    print(f"metrics: {result.metrics_path}")
    return 0


def _cmd_sample(args) -> int:
    from . import checkpoint as ck
    from . import data, zoo
    from .tensor import Rng

    loaded = ck.load(args.checkpoint)
    pair = zoo.build_from_descriptor(loaded.descriptor)
    ck.load_into_pair(pair, loaded)
    labels = args.class_label if pair.conditional else None
    images = zoo.generate_images(pair, args.n, Rng(args.seed, stream=11), truncation=args.trunc, labels=labels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.n):
        (out / f"sample_{i:04d}.png").write_bytes(data.encode_png(images[i]))
    print(f"wrote {args.n} images to {out}")
    return 0


def _cmd_fid(args, parser: _Parser) -> int:
    from . import fid

    if (args.fake is None) == (args.checkpoint is None):
        parser.error("provide exactly one of --fake DIR or --checkpoint FILE")
    extractor = fid.FeatureExtractor(args.extractor, seed=args.seed)
    if args.fake is not None:
        report = fid.score_dirs(args.real, args.fake, extractor, resolution=args.res)
    else:
        report = fid.score_model(
            args.checkpoint, args.real, extractor, n_samples=args.n, seed=args.seed
        )
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True))
    print(f"fid: {report['score']:.6f} ({args.extractor}, n_real={report['n_real']})")
    return 0


def _cmd_pairs(args) -> int:
    from . import data

    manifest = data.make_pairs(args.colored, args.out, args.threshold)
    count = len(manifest.read_text().splitlines())
    print(f"wrote {count} pairs; manifest at {manifest}")
    return 0


def _cmd_synth(args) -> int:
    from . import data

    records = data.synth_toy_corpus(args.n, resolution=args.res, seed=args.seed)
    manifest = data.write_corpus(records, args.out)
    print(f"wrote {len(records)} figures under {args.out} (manifest {manifest})")
    return 0


def _cmd_inspect(args) -> int:
    from . import checkpoint as ck

    header = ck.inspect(args.file)
    index = header.pop("tensor_index")
    print(json.dumps(header, indent=2, sort_keys=True))
    print(f"tensors: {len(index)}")
    for entry in index:
        print(f"  {entry['name']}  {tuple(entry['shape'])}  {entry['dtype']}")
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    serve(args.models, args.session, host=args.host, port=args.port)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1

    if args.deterministic:
        try:
            import threadpoolctl

            threadpoolctl.threadpool_limits(1)
        except ImportError:
            sys.stderr.write("warning: threadpoolctl unavailable; thread count not pinned\n")

    try:
        if args.command == "train":
            return _cmd_train(args, parser)
        if args.command == "sample":
            return _cmd_sample(args)
        if args.command == "fid":
            return _cmd_fid(args, parser)
        if args.command == "pairs":
            return _cmd_pairs(args)
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "inspect":
            return _cmd_inspect(args)
        if args.command == "serve":
            return _cmd_serve(args)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    except KeyboardInterrupt:
        return 2
    except Exception as err:  # noqa: BLE001 - runtime failures exit 2
        sys.stderr.write(f"charstudio: {err}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
