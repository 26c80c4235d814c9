"""Flat dotted-key configuration files.

One ``key = value`` pair per line, ``#`` starts a comment. Lists are
comma-separated. Every key has a declared type and default below; the
resolved mapping (defaults plus file plus overrides) is what experiments
record next to their results.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

from .errors import ConfigError

MODES = ("c", "c_aug", "dada", "dada_aug", "vanilla_gan", "k_plus_one")


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v.strip()]


def _strs(s: str) -> list[str]:
    return [v.strip() for v in s.split(",") if v.strip()]


def _opt_str(s: str) -> str | None:
    return s.strip() or None


# key -> (parser, default)
SCHEMA: dict[str, tuple[Any, Any]] = {
    "experiment.modes": (_strs, ["c", "dada"]),
    "experiment.n_per_class": (_ints, [5]),
    "experiment.seeds": (_ints, [0, 1, 2, 3, 4]),
    "experiment.workers": (int, 1),
    "data.source": (str, "synthetic"),
    "data.k": (int, 3),
    "data.sigma": (float, 0.7),
    "data.radius": (float, 2.0),
    "data.dim": (int, 60),
    "data.pool_per_class": (int, 100),
    "data.test_per_class": (int, 500),
    "data.pool_seed": (int, 7919),
    "data.test_seed": (int, 104729),
    "data.idx_images": (_opt_str, None),
    "data.idx_labels": (_opt_str, None),
    "data.test_idx_images": (_opt_str, None),
    "data.test_idx_labels": (_opt_str, None),
    "data.csv": (_opt_str, None),
    "data.test_csv": (_opt_str, None),
    "data.test_fraction": (float, 0.2),
    "data.split_seed": (int, 0),
    "train.k_g": (int, 200),
    "train.k_c": (int, 600),
    "train.batch_size": (int, 64),
    "train.g_inner": (int, 1),
    "train.lambda_fm": (float, 1.0),
    "train.augmentation_ratio": (float, 10.0),
    "train.phase2_fixed_set": (_bool, False),
    "train.eval_every": (int, 50),
    "adam.lr": (float, 3e-4),
    "adam.beta1": (float, 0.9),
    "adam.beta2": (float, 0.999),
    "adam.eps": (float, 1e-8),
    "model.d_z": (int, 100),
    "model.aug_widths": (_ints, [128, 128]),
    "model.clf_widths": (_ints, [128, 64]),
    "model.noise_sigma": (float, 0.05),
    "augment.rotate": (float, 15.0),
    "augment.translate": (int, 2),
    "augment.flip_h": (_bool, True),
    "augment.jitter": (float, 0.05),
    "augment.multiplier": (int, 10),
}


def defaults() -> dict[str, Any]:
    return {k: (list(v) if isinstance(v, list) else v) for k, (_, v) in SCHEMA.items()}


def parse_value(key: str, raw: str) -> Any:
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    parser = SCHEMA[key][0]
    try:
        return parser(raw)
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {e}") from None


def parse_text(text: str) -> dict[str, Any]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        out[key] = parse_value(key, raw)
    return out


def load(path: str | Path | None, overrides: dict[str, str] | None = None) -> dict[str, Any]:
    """Defaults, then the file, then string-valued overrides."""
    cfg = defaults()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        cfg.update(parse_text(text))
    for key, raw in (overrides or {}).items():
        cfg[key] = parse_value(key, raw)
    validate(cfg)
    return cfg


def validate(cfg: dict[str, Any]) -> None:
    bad = [m for m in cfg["experiment.modes"] if m not in MODES]
    if bad:
        raise ConfigError(f"unknown modes {bad}; choose from {list(MODES)}")
    if not cfg["experiment.n_per_class"] or not cfg["experiment.seeds"]:
        raise ConfigError("experiment.n_per_class and experiment.seeds must be non-empty")
    if cfg["data.source"] not in ("synthetic", "idx", "csv"):
        raise ConfigError(f"data.source must be synthetic, idx or csv, not {cfg['data.source']!r}")
    if cfg["data.source"] == "idx" and not (cfg["data.idx_images"] and cfg["data.idx_labels"]):
        raise ConfigError("idx source needs data.idx_images and data.idx_labels")
    if cfg["data.source"] == "csv" and not cfg["data.csv"]:
        raise ConfigError("csv source needs data.csv")
    if cfg["experiment.workers"] < 1:
        raise ConfigError("experiment.workers must be >= 1")
    if cfg["augment.multiplier"] < 1:
        raise ConfigError("augment.multiplier must be >= 1")


def dumps(cfg: dict[str, Any]) -> str:
    lines = []
    for key in SCHEMA:
        v = cfg.get(key)
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        elif v is None:
            v = ""
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"
