"""``rischan`` command-line entry point.

Exit codes: 0 success, 1 failed self-test, 2 configuration error,
3 integrity error in a container or checkpoint.
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..denoiser.checkpoint import CheckpointError
from ..denoiser.layers import ShapeError
from ..patching import DatasetFormatError
from . import experiments as ex
from .config import PROFILES, ConfigError, load_config

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_INTEGRITY = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--profile", default="desk", choices=sorted(PROFILES))
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    common.add_argument("--deterministic", action="store_true",
                        help="pin BLAS to one thread so results are bit-reproducible")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rischan", description="RIS cascaded-channel estimation experiments")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write patch containers and test sets")
    t = sub.add_parser("train", parents=[common], help="train the denoiser")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--epochs", type=int, help="override the epoch budget")
    e = sub.add_parser("eval", parents=[common], help="NMSE table on the stored test sets")
    e.add_argument("--checkpoint")
    s = sub.add_parser("sweep", parents=[common], help="NMSE along one axis")
    s.add_argument("--axis", required=True, choices=ex.SWEEP_AXES)
    s.add_argument("--checkpoint")
    sub.add_parser("direct", parents=[common], help="direct-channel denoising experiment")
    sub.add_parser("complexity", parents=[common], help="MAC cost of the configured network")
    sub.add_parser("selftest", parents=[common], help="fast internal checks")
    return p


def _overrides(args) -> dict:
    over = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        over[k.strip()] = v.strip()
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out_dir is not None:
        over["out_dir"] = args.out_dir
    if args.deterministic:
        over["deterministic"] = "true"
    return over


def _print_rows(rows) -> None:
    print(ex.rows_csv(rows), end="")


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, args.profile, _overrides(args))
        limiter = None
        if cfg.deterministic:
            from threadpoolctl import threadpool_limits
            limiter = threadpool_limits(1)
        try:
            return _dispatch(args, cfg)
        finally:
            if limiter is not None:
                limiter.unregister()
    except (ConfigError, ShapeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetFormatError, CheckpointError) as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except FileNotFoundError as exc:
        print(f"missing input: {exc.filename}; run the earlier pipeline step first", file=sys.stderr)
        return EXIT_CONFIG


def _dispatch(args, cfg) -> int:
    cmd = args.command
    if cmd == "generate":
        info = ex.generate(cfg)
        print(f"train patches {info['train']}, validation patches {info['val']}, "
              f"test samples {info['test_samples']} per SNR -> {cfg.out_dir}")
    elif cmd == "train":
        info = ex.train_model(cfg, resume=args.resume, epochs=args.epochs)
        print(f"validation NMSE {info['val_nmse_db']:.3f} dB; checkpoint {info['checkpoint']}")
    elif cmd == "eval":
        _print_rows(ex.evaluate(cfg, args.checkpoint))
    elif cmd == "sweep":
        _print_rows(ex.sweep(cfg, args.axis, args.checkpoint))
    elif cmd == "direct":
        _print_rows(ex.direct_experiment(cfg))
    elif cmd == "complexity":
        print(ex.complexity_report(cfg))
    elif cmd == "selftest":
        results = ex.selftest(cfg.seed)
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_FAIL
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
