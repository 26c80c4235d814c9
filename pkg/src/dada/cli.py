"""Command-line entry point: ``dada run|curves|dump|gradcheck``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import config as C
from . import harness
from .errors import DadaError
from .models import load_augmenter

EXIT_OK, EXIT_USAGE, EXIT_CELL_FAILED = 0, 1, 2


def _split_overrides(rest: list[str]) -> dict[str, str]:
    """``--train.k_g 200`` / ``--train.k_g=200`` pairs to a dict."""
    out: dict[str, str] = {}
    i = 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--") or "." not in tok:
            raise C.ConfigError(f"unrecognized argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        else:
            if i + 1 >= len(rest):
                raise C.ConfigError(f"missing value for {tok}")
            i += 1
            val = rest[i]
        out[key] = val
        i += 1
    return out


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dada", description="Adversarial data augmentation experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run the experiment matrix; extra --section.key VALUE flags override the config")
    r.add_argument("--config", help="flat key = value config file (defaults apply to missing keys)")
    r.add_argument("--mode", help="comma-separated modes, overrides experiment.modes")
    r.add_argument("--n-per-class", help="comma-separated sample counts, overrides experiment.n_per_class")
    r.add_argument("--seeds", help="comma-separated seeds, overrides experiment.seeds")
    r.add_argument("--workers", help="parallel worker processes, overrides experiment.workers")
    r.add_argument("--out", default="runs", help="output directory (default: runs)")

    c = sub.add_parser("curves", help="write accuracy-vs-n CSV from a result file")
    c.add_argument("--result", required=True)
    c.add_argument("--out", required=True)

    d = sub.add_parser("dump", help="write generated samples from a saved augmenter")
    d.add_argument("--params", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--count", type=int, default=4, help="samples per class (default: 4)")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--grid", help="HxWxC layout for image output, e.g. 28x28x1")

    g = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    g.add_argument("--trials", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    return p


def _cmd_run(args, rest) -> int:
    overrides = _split_overrides(rest)
    for flag, key in (("mode", "experiment.modes"), ("n_per_class", "experiment.n_per_class"), ("seeds", "experiment.seeds"), ("workers", "experiment.workers")):
        if getattr(args, flag) is not None:
            overrides[key] = getattr(args, flag)
    cfg = C.load(args.config, overrides)
    result = harness.run_experiment(cfg, args.out)
    for mode, per_n in result["aggregate"].items():
        for n, s in per_n.items():
            print(f"{mode:12s} n={n:>4s}  acc {s['mean']:.4f} +- {s['std']:.4f}  ({s['n_seeds']} seeds)")
    print(f"result: {args.out}/result.json  ({result['wall_time']:.1f}s)")
    if result["failed"]:
        print(f"{result['failed']} cell(s) failed; see {args.out}/cells/", file=sys.stderr)
        return EXIT_CELL_FAILED
    return EXIT_OK


def _cmd_curves(args) -> int:
    harness.emit_curves(harness.load_result(args.result), args.out)
    return EXIT_OK


def _parse_grid(text: str | None):
    if not text:
        return None
    try:
        h, w, c = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise C.ConfigError(f"grid must look like 28x28x1, got {text!r}") from None
    return h, w, c


def _cmd_dump(args) -> int:
    aug = load_augmenter(args.params)
    files = harness.dump_generated(aug, aug.k, args.count, args.out, seed=args.seed, grid=_parse_grid(args.grid))
    print(f"wrote {len(files)} file(s) to {args.out}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    rows = harness.gradcheck_suite(trials=args.trials, seed=args.seed)
    for r in rows:
        print(json.dumps(r))
    return EXIT_OK if all(r["passed"] for r in rows) else EXIT_CELL_FAILED


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args, rest = parser.parse_known_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "run":
            return _cmd_run(args, rest)
        if rest:
            raise C.ConfigError(f"unrecognized arguments: {' '.join(rest)}")
        if args.cmd == "curves":
            return _cmd_curves(args)
        if args.cmd == "dump":
            return _cmd_dump(args)
        return _cmd_gradcheck(args)
    except (DadaError, ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
