"""Experiment matrix: modes x samples-per-class x seeds, plus result I/O."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np

from . import config as C
from . import losses as L
from . import tensor as T
from .data import (
    AugmentOps,
    Dataset,
    SubsampleSpec,
    circle_means,
    gen_gaussian_mixture,
    load_csv,
    load_idx,
    mixture_bound,
    split,
    subsample,
    traditional_augment,
)
from .errors import ConfigError, UsageError
from .models import AugmenterNet, ClassifierNet, Head
from .trainer import RunLog, TrainConfig, Trainer, evaluate

log = logging.getLogger(__name__)


# -- resolved config -> typed pieces -------------------------------------------------


def train_config(cfg: dict, seed: int = 0) -> TrainConfig:
    return TrainConfig(
        k_g=cfg["train.k_g"],
        k_c=cfg["train.k_c"],
        batch_size=cfg["train.batch_size"],
        g_inner=cfg["train.g_inner"],
        lambda_fm=cfg["train.lambda_fm"],
        lr=cfg["adam.lr"],
        beta1=cfg["adam.beta1"],
        beta2=cfg["adam.beta2"],
        eps=cfg["adam.eps"],
        d_z=cfg["model.d_z"],
        seed=seed,
        noise_sigma=cfg["model.noise_sigma"],
        augmentation_ratio=cfg["train.augmentation_ratio"],
        aug_widths=tuple(cfg["model.aug_widths"]),
        clf_widths=tuple(cfg["model.clf_widths"]),
        phase2_fixed_set=cfg["train.phase2_fixed_set"],
        eval_every=cfg["train.eval_every"],
    )


def augment_ops(cfg: dict, grid: bool) -> AugmentOps:
    if not grid:
        return AugmentOps(jitter=cfg["augment.jitter"])
    return AugmentOps(
        rotate=cfg["augment.rotate"],
        translate=cfg["augment.translate"],
        flip_h=cfg["augment.flip_h"],
        jitter=0.0,
    )


_DATA_CACHE: dict[str, tuple[Dataset, Dataset]] = {}


def load_data(cfg: dict) -> tuple[Dataset, Dataset]:
    """(training pool, held-out test set) for the configured source, memoized per process."""
    key = json.dumps({k: v for k, v in cfg.items() if k.startswith("data.")}, sort_keys=True)
    if key not in _DATA_CACHE:
        _DATA_CACHE.clear()
        _DATA_CACHE[key] = _load_data(cfg)
    return _DATA_CACHE[key]


def _load_data(cfg: dict) -> tuple[Dataset, Dataset]:
    src = cfg["data.source"]
    if src == "synthetic":
        k, sigma = cfg["data.k"], cfg["data.sigma"]
        means = circle_means(k, cfg["data.radius"], cfg["data.dim"])
        bound = mixture_bound(means, sigma)
        pool = gen_gaussian_mixture(k, cfg["data.pool_per_class"], means, sigma, cfg["data.pool_seed"], bound)
        test = gen_gaussian_mixture(k, cfg["data.test_per_class"], means, sigma, cfg["data.test_seed"], bound)
        return pool, test
    if src == "idx":
        full = load_idx(cfg["data.idx_images"], cfg["data.idx_labels"])
        if cfg["data.test_idx_images"]:
            test = load_idx(cfg["data.test_idx_images"], cfg["data.test_idx_labels"], k=full.k)
            return full, test
        return split(full, cfg["data.test_fraction"], cfg["data.split_seed"])
    full = load_csv(cfg["data.csv"])
    if cfg["data.test_csv"]:
        meta = Path(cfg["data.csv"]).with_name(Path(cfg["data.csv"]).name + ".meta.json")
        return full, load_csv(cfg["data.test_csv"], meta_path=meta)
    return split(full, cfg["data.test_fraction"], cfg["data.split_seed"])


# -- one matrix cell -------------------------------------------------------------------


def cell_name(mode: str, n: int, seed: int) -> str:
    return f"{mode}_n{n}_s{seed}"


def _seeds(n: int, seed: int) -> dict[str, np.random.Generator]:
    # identical across modes for the same (n, seed), so comparisons are paired
    names = ("classifier", "augmenter", "train", "augment_data")
    kids = np.random.SeedSequence([seed, n]).spawn(len(names))
    return {name: np.random.default_rng(s) for name, s in zip(names, kids)}


def _classifier(cfg: dict, k: int, dim: int, head: Head, tc: TrainConfig, rng) -> ClassifierNet:
    return ClassifierNet(k, dim, head=head, widths=tc.clf_widths, noise_sigma=tc.noise_sigma, seed=rng)


def _augmenter(k: int, dim: int, tc: TrainConfig, rng) -> AugmenterNet:
    return AugmenterNet(k, dim, d_z=tc.d_z, widths=tc.aug_widths, seed=rng)


def _pipeline(mode: str, cfg: dict, train: Dataset, test: Dataset, seed: int, params_path: Path | None):
    """Train one model for ``mode``; returns (classifier, run log)."""
    n = int(train.class_counts().min())
    rngs = _seeds(n, seed)
    tc = train_config(cfg, seed)
    k, dim = train.k, train.dim
    if mode in ("c_aug", "dada_aug"):
        ops = augment_ops(cfg, train.grid is not None)
        if not ops.enabled():
            raise ConfigError(f"mode {mode} needs at least one augmentation op enabled")
        train = traditional_augment(train, ops, cfg["augment.multiplier"], seed=rngs["augment_data"])
    if mode in ("c", "c_aug"):
        clf = _classifier(cfg, k, dim, Head.PLAIN, tc, rngs["classifier"])
        trainer = Trainer(clf, None, tc, rng=rngs["train"])
        return clf, trainer.train_classifier_only(train, tc.k_g + tc.k_c, test)
    if mode in ("dada", "dada_aug", "k_plus_one"):
        head = Head.K_PLUS_ONE if mode == "k_plus_one" else Head.TWO_K
        clf = _classifier(cfg, k, dim, head, tc, rngs["classifier"])
        aug = _augmenter(k, dim, tc, rngs["augmenter"])
        trainer = Trainer(clf, aug, tc, rng=rngs["train"])
        runlog = trainer.phase1(train, test)
        aug.set_trainable(False)
        runlog.extend(trainer.phase2(train, test))
        if params_path is not None:
            aug.save(params_path)
        return clf, runlog
    if mode == "vanilla_gan":
        return _vanilla_gan(cfg, train, test, tc, rngs)
    raise ConfigError(f"unknown mode {mode!r}")


def _vanilla_gan(cfg, train: Dataset, test: Dataset, tc: TrainConfig, rngs):
    """One unconditional 2-class GAN per class, then a k-way classifier on real + generated."""
    k, dim = train.k, train.dim
    gan_cfg = TrainConfig(**{**tc.to_dict(), "lambda_fm": 0.0})
    gens = []
    for c in range(1, k + 1):
        sub = Dataset(train.x[train.y == c], np.ones(int((train.y == c).sum()), dtype=np.int64), 1, train.grid)
        disc = _classifier(cfg, 1, dim, Head.BINARY, gan_cfg, rngs["classifier"])
        gen = _augmenter(1, dim, gan_cfg, rngs["augmenter"])
        Trainer(disc, gen, gan_cfg, rng=rngs["train"]).phase1(sub)
        gen.set_trainable(False)
        gens.append(gen)

    def provide(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        out = np.empty((y.size, dim))
        for c in np.unique(y):
            rows = np.flatnonzero(y == c)
            g = gens[c - 1]
            out[rows] = g(g.sample_latent(rows.size, rng), np.ones(rows.size, dtype=np.int64)).data
        return out

    clf = _classifier(cfg, k, dim, Head.PLAIN, tc, rngs["classifier"])
    trainer = Trainer(clf, None, tc, rng=rngs["train"])
    return clf, trainer.phase2(train, test, provider=provide)


def run_cell(cfg: dict, mode: str, n: int, seed: int, out_dir: str | Path | None = None) -> dict:
    """Subsample, train for ``mode`` and evaluate on the held-out set.

    Any exception is caught and recorded; the cell then has status "failed".
    """
    t0 = time.perf_counter()
    name = cell_name(mode, n, seed)
    rec: dict[str, Any] = {"mode": mode, "n_per_class": n, "seed": seed, "config": cfg}
    out = Path(out_dir) if out_dir is not None else None
    try:
        pool, test = load_data(cfg)
        train = subsample(pool, SubsampleSpec(n, seed))
        params = out / "params" / f"{name}.augmenter.bin" if out is not None else None
        if params is not None:
            params.parent.mkdir(parents=True, exist_ok=True)
        clf, runlog = _pipeline(mode, cfg, train, test, seed, params)
        rec.update(status="ok", test_acc=evaluate(clf, test), train_acc=evaluate(clf, train))
        if out is not None:
            (out / "logs").mkdir(parents=True, exist_ok=True)
            runlog.to_jsonl(out / "logs" / f"{name}.jsonl")
            rec["runlog"] = f"logs/{name}.jsonl"
            if params is not None and params.exists():
                rec["augmenter_params"] = f"params/{name}.augmenter.bin"
    except Exception as e:  # isolate the cell; the matrix carries on
        log.warning("cell %s failed: %s", name, e)
        rec.update(status="failed", error=f"{type(e).__name__}: {e}", traceback=traceback.format_exc())
    rec["wall_time"] = time.perf_counter() - t0
    if out is not None:
        (out / "cells").mkdir(parents=True, exist_ok=True)
        (out / "cells" / f"{name}.json").write_text(json.dumps(rec, indent=2))
    return rec


def _cell_job(args):
    return run_cell(*args)


# -- the matrix ---------------------------------------------------------------------------


def aggregate(cells: list[dict]) -> dict:
    """mode -> str(n) -> {mean, std, n_seeds} over successful cells."""
    groups: dict[tuple[str, int], list[float]] = {}
    for c in cells:
        if c.get("status") == "ok":
            groups.setdefault((c["mode"], c["n_per_class"]), []).append(c["test_acc"])
    agg: dict[str, dict] = {}
    for (mode, n), accs in sorted(groups.items()):
        a = np.array(accs)
        agg.setdefault(mode, {})[str(n)] = {
            "mean": float(a.mean()),
            "std": float(a.std(ddof=1)) if a.size > 1 else 0.0,
            "n_seeds": int(a.size),
        }
    return agg


def run_experiment(cfg: dict, out_dir: str | Path | None = None) -> dict:
    """Run every (mode, n, seed) cell and return the aggregated result.

    With ``out_dir`` set, cells already recorded as successful are loaded
    instead of re-run, and ``result.json`` is (re)written at the end.
    """
    C.validate(cfg)
    load_data(cfg)  # fail fast on an unloadable source
    t0 = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else None
    todo, cells = [], {}
    for mode in cfg["experiment.modes"]:
        for n in cfg["experiment.n_per_class"]:
            for seed in cfg["experiment.seeds"]:
                name = cell_name(mode, n, seed)
                path = out / "cells" / f"{name}.json" if out is not None else None
                if path is not None and path.exists():
                    prev = json.loads(path.read_text())
                    if prev.get("status") == "ok" and prev.get("config") == cfg:
                        cells[name] = prev
                        continue
                todo.append((cfg, mode, n, seed, out))
    workers = cfg["experiment.workers"]
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_cell_job, todo))
    else:
        done = [_cell_job(job) for job in todo]
    for rec in done:
        cells[cell_name(rec["mode"], rec["n_per_class"], rec["seed"])] = rec
    ordered = [
        cells[cell_name(m, n, s)]
        for m in cfg["experiment.modes"]
        for n in cfg["experiment.n_per_class"]
        for s in cfg["experiment.seeds"]
    ]
    result = {
        "config": cfg,
        "cells": [{k: v for k, v in c.items() if k not in ("config", "traceback")} for c in ordered],
        "aggregate": aggregate(ordered),
        "failed": sum(c["status"] != "ok" for c in ordered),
        "wall_time": time.perf_counter() - t0,
    }
    if out is not None:
        # timings live beside the result so that identical runs give identical result files
        out.mkdir(parents=True, exist_ok=True)
        stable = {**result, "cells": [{k: v for k, v in c.items() if k != "wall_time"} for c in result["cells"]]}
        del stable["wall_time"]
        (out / "result.json").write_text(json.dumps(stable, indent=2))
        timing = {"total": result["wall_time"], "cells": {cell_name(c["mode"], c["n_per_class"], c["seed"]): c["wall_time"] for c in ordered}}
        (out / "timing.json").write_text(json.dumps(timing, indent=2))
    return result


def load_result(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def emit_curves(result: dict, out_path: str | Path) -> None:
    """CSV ``mode,n_per_class,mean_acc,std_acc,n_seeds``, one row per (mode, n)."""
    agg = result.get("aggregate") or {}
    if not agg:
        raise UsageError("result holds no successful cells")
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "n_per_class", "mean_acc", "std_acc", "n_seeds"])
        for mode, per_n in agg.items():
            for n in sorted(per_n, key=int):
                s = per_n[n]
                w.writerow([mode, n, repr(s["mean"]), repr(s["std"]), s["n_seeds"]])


# -- sample dumps -----------------------------------------------------------------------------


def to_u8(x: np.ndarray) -> np.ndarray:
    """[-1, 1] -> [0, 255], endpoints exact."""
    return np.clip(np.rint((np.asarray(x) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def dump_generated(
    augmenter: AugmenterNet,
    k: int,
    count_per_class: int,
    out_path: str | Path,
    seed: int = 0,
    grid: tuple[int, int, int] | None = None,
) -> list[Path]:
    """Write generated samples for inspection.

    Grid data becomes one PGM (1 channel) or PPM (3 channels) file per sample;
    vector data becomes rows of ``samples.csv`` with a leading class column.
    """
    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(1, k + 1), count_per_class)
    x = augmenter(augmenter.sample_latent(y.size, rng), y).data
    written = []
    if grid is None:
        path = out / "samples.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y"] + [f"x{i + 1}" for i in range(x.shape[1])])
            for yi, xi in zip(y, x):
                w.writerow([int(yi)] + [repr(float(v)) for v in xi])
        return [path]
    h, wd, c = grid
    if c not in (1, 3) or h * wd * c != x.shape[1]:
        raise ConfigError(f"grid {grid} does not fit samples of width {x.shape[1]}")
    magic = b"P5" if c == 1 else b"P6"
    ext = "pgm" if c == 1 else "ppm"
    counters = {}
    for yi, xi in zip(y, x):
        j = counters.get(int(yi), 0)
        counters[int(yi)] = j + 1
        path = out / f"class{int(yi)}_{j:04d}.{ext}"
        path.write_bytes(magic + f"\n{wd} {h}\n255\n".encode() + to_u8(xi).tobytes())
        written.append(path)
    return written


# -- gradient suite -----------------------------------------------------------------------------


def gradcheck_suite(trials: int = 100, seed: int = 0, ks=(1, 2, 3, 5), tol: float = 1e-4, h: float = 1e-5) -> list[dict]:
    """grad_check every loss on ``trials`` random small instances each.

    Returns one row per loss with the worst relative error seen.
    """
    rng = np.random.default_rng(seed)

    def logits(n, width):
        return T.Tensor(rng.uniform(-2, 2, size=(n, width)), requires_grad=True)

    def labels(n, k):
        return rng.integers(1, k + 1, size=n)

    def eq1(k):
        a, b = logits(int(rng.integers(1, 9)), 2 * k), logits(int(rng.integers(1, 9)), 2 * k)
        ya, yb = labels(len(a), k), labels(len(b), k)
        return (lambda: L.loss_C_phase1(a, ya, b, yb, k)), [a, b]

    def eq2(k):
        b = logits(int(rng.integers(1, 9)), 2 * k)
        yb = labels(len(b), k)
        return (lambda: L.loss_G_phase1(b, yb, k)), [b]

    def _fm_case(k):
        m = int(rng.integers(1, 9 // k + 1)) if k < 9 else 1
        y = np.tile(np.arange(1, k + 1), m)
        width = int(rng.integers(1, 6))
        real = T.Tensor(rng.uniform(-2, 2, size=(y.size, width)))
        fake = logits(y.size, width)
        return y, real, fake

    def eq3(k):
        y, real, fake = _fm_case(k)
        return (lambda: L.loss_feature_matching(real, y, fake, y)), [fake]

    def eq4(k):
        y, real, fake = _fm_case(k)
        b = logits(y.size, 2 * k)
        lam = float(rng.uniform(0, 2))
        return (lambda: L.loss_G_total(L.loss_G_phase1(b, y, k), L.loss_feature_matching(real, y, fake, y), lam)), [b, fake]

    def eq5(k):
        a, b = logits(int(rng.integers(1, 9)), 2 * k), logits(int(rng.integers(1, 9)), 2 * k)
        ya, yb = labels(len(a), k), labels(len(b), k)
        return (lambda: L.loss_C_phase2(a, ya, b, yb, k)), [a, b]

    def _baseline(mode, width_of):
        def case(k):
            n = int(rng.integers(1, 9))
            z = logits(n, width_of(k))
            y, flags = labels(n, k), rng.random(n) < 0.5
            return (lambda: L.loss_baseline(mode, z, y, flags, k)), [z]

        return case

    def _baseline_gen(mode, width_of):
        def case(k):
            z = logits(int(rng.integers(1, 9)), width_of(k))
            y = labels(len(z), k)
            return (lambda: L.loss_baseline_generator(mode, z, y, k)), [z]

        return case

    cases = {
        "classifier_phase1": eq1,
        "generator_phase1": eq2,
        "feature_matching": eq3,
        "generator_total": eq4,
        "classifier_phase2": eq5,
        "vanilla_2class": _baseline("vanilla_2class", lambda k: 2),
        "k_plus_one": _baseline("k_plus_one", lambda k: k + 1),
        "vanilla_2class_generator": _baseline_gen("vanilla_2class", lambda k: 2),
        "k_plus_one_generator": _baseline_gen("k_plus_one", lambda k: k + 1),
    }
    rows = []
    for name, make in cases.items():
        worst, failures = 0.0, 0
        for i in range(trials):
            k = ks[i % len(ks)]
            f, params = make(k)
            rep = T.grad_check(f, params, h=h, tol=tol)
            worst = max(worst, rep.max_rel_error)
            failures += not rep.passed
        rows.append({"loss": name, "trials": trials, "max_rel_error": worst, "failures": failures, "passed": failures == 0})
    return rows
