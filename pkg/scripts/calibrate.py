"""Sweep the mixture sigma and report mean accuracy per mode.

Used to pick the overlap of the default mixture so that the plain
classifier lands in a target accuracy band at 5 samples per class.

    python3 scripts/calibrate.py --sigmas 0.9,1.0,1.1 --modes c,dada --seeds 0-9
"""

import argparse
import time

from dada import config as C
from dada import harness


def seed_list(text):
    if "-" in text:
        lo, hi = text.split("-")
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",")]


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--config", default=None)
    p.add_argument("--sigmas", required=True)
    p.add_argument("--modes", default="c")
    p.add_argument("--seeds", default="0-9")
    p.add_argument("--set", nargs="*", default=[], help="extra key=value overrides")
    args = p.parse_args()
    extra = dict(kv.split("=", 1) for kv in args.set)
    for sigma in args.sigmas.split(","):
        cfg = C.load(args.config, {**extra, "data.sigma": sigma, "experiment.modes": args.modes})
        cfg["experiment.seeds"] = seed_list(args.seeds)
        t0 = time.perf_counter()
        res = harness.run_experiment(cfg)
        accs = {m: res["aggregate"][m][str(cfg["experiment.n_per_class"][0])]["mean"] for m in res["aggregate"]}
        line = "  ".join(f"{m}={a:.4f}" for m, a in accs.items())
        print(f"sigma={sigma} dim={cfg['data.dim']}  {line}  ({time.perf_counter() - t0:.0f}s)", flush=True)


if __name__ == "__main__":
    main()
