"""Losses for 2k-output adversarial augmentation and its baselines.

Labels are 1-based everywhere. For a 2k head, column ``y - 1`` is "real
class y" and column ``k + y - 1`` is "fake class y". Conditional
probabilities are read off the full 2k softmax without renormalisation.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, DomainError, UsageError
from .models import Head
from .tensor import Tensor

LOSS_MODES = ("vanilla_2class", "k_plus_one")


def _labels(y, k: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.size and (y.min() < 1 or y.max() > k):
        raise DomainError(f"labels must lie in 1..{k}")
    return y


def _check_logits(logits: Tensor, width: int, n: int, what: str) -> None:
    if logits.ndim != 2 or logits.shape[1] != width:
        raise DimensionError(f"{what}: expected logits of width {width}, got shape {logits.shape}")
    if logits.shape[0] != n:
        raise DimensionError(f"{what}: {logits.shape[0]} logit rows for {n} labels")
    if n == 0:
        raise UsageError(f"{what}: empty batch")


def build_2k_target(y: int, is_real: bool, k: int) -> np.ndarray:
    if not 1 <= y <= k:
        raise DomainError(f"label {y} outside 1..{k}")
    t = np.zeros(2 * k)
    t[y - 1 if is_real else k + y - 1] = 1.0
    return t


def fold(p) -> np.ndarray:
    """Collapse a 2k distribution (or a batch of them) to k class probabilities."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] % 2:
        raise DimensionError(f"fold needs an even-length vector, got {p.shape[-1]}")
    k = p.shape[-1] // 2
    return p[..., :k] + p[..., k:]


def _nll(logits: Tensor, cols) -> Tensor:
    """Mean over rows of -log softmax(logits)[row, col]."""
    return T.scale(T.mean(T.gather(T.log_softmax(logits), cols)), -1.0)


def _folded_nll(logits: Tensor, cols) -> Tensor:
    """Mean over rows of -log(sum of softmax(logits) over the listed columns)."""
    picked = T.logsumexp(T.gather(logits, cols), axis=1)
    return T.mean(T.sub(T.logsumexp(logits, axis=1), picked))


def loss_C_phase1(logits_real: Tensor, y_real, logits_fake: Tensor, y_fake, k: int) -> Tensor:
    """Generation-phase classifier loss.

    Real samples target "real class y", generated samples target "fake class y".
    """
    y_real, y_fake = _labels(y_real, k), _labels(y_fake, k)
    _check_logits(logits_real, 2 * k, y_real.size, "loss_C_phase1 (real)")
    _check_logits(logits_fake, 2 * k, y_fake.size, "loss_C_phase1 (fake)")
    return T.add(_nll(logits_real, y_real - 1), _nll(logits_fake, k + y_fake - 1))


def loss_G_phase1(logits_fake: Tensor, y_fake, k: int) -> Tensor:
    """Generator loss: push each generated sample to the real index of its class."""
    y_fake = _labels(y_fake, k)
    _check_logits(logits_fake, 2 * k, y_fake.size, "loss_G_phase1")
    return _nll(logits_fake, y_fake - 1)


def loss_feature_matching(f_real: Tensor, y_real, f_fake: Tensor, y_fake) -> Tensor:
    """Mean over classes of ||mean f_real|y - mean f_fake|y||_2.

    Real-side features are treated as constants, so only the fake branch
    receives gradient.
    """
    y_real = np.asarray(y_real).reshape(-1)
    y_fake = np.asarray(y_fake).reshape(-1)
    if f_real.ndim != 2 or f_fake.ndim != 2 or f_real.shape[1] != f_fake.shape[1]:
        raise DimensionError(f"feature widths differ: {f_real.shape} vs {f_fake.shape}")
    if f_real.shape[0] != y_real.size or f_fake.shape[0] != y_fake.size:
        raise DimensionError("feature rows and label counts differ")
    if y_real.size == 0 or y_fake.size == 0:
        raise UsageError("loss_feature_matching: empty batch")
    classes = np.unique(y_real)
    if not np.array_equal(classes, np.unique(y_fake)):
        raise UsageError(
            f"classes differ between real {classes.tolist()} and generated {np.unique(y_fake).tolist()} batches"
        )
    real = f_real.data
    total = None
    for c in classes:
        mu_real = Tensor(real[y_real == c].mean(axis=0))
        mu_fake = T.mean(T.rows(f_fake, y_fake == c), axis=0)
        term = T.norm(T.sub(mu_fake, mu_real))
        total = term if total is None else T.add(total, term)
    return T.scale(total, 1.0 / classes.size)


def loss_G_total(loss_g: Tensor, loss_fm: Tensor, lam: float) -> Tensor:
    if lam < 0:
        raise ConfigError(f"feature-matching weight must be >= 0, got {lam}")
    if lam == 0:
        return loss_g
    return T.add(loss_g, T.scale(loss_fm, lam))


def loss_data(logits_real: Tensor, y_real, k: int) -> Tensor:
    """Real-sample term: -log(p[real y] + p[fake y])."""
    y_real = _labels(y_real, k)
    _check_logits(logits_real, 2 * k, y_real.size, "loss_data")
    return _folded_nll(logits_real, np.stack([y_real - 1, k + y_real - 1], axis=1))


def loss_gen(logits_fake: Tensor, y_fake, k: int) -> Tensor:
    """Generated-sample term: -log(p[fake y] + p[real y])."""
    y_fake = _labels(y_fake, k)
    _check_logits(logits_fake, 2 * k, y_fake.size, "loss_gen")
    return _folded_nll(logits_fake, np.stack([k + y_fake - 1, y_fake - 1], axis=1))


def loss_C_phase2(logits_real: Tensor, y_real, logits_fake: Tensor, y_fake, k: int) -> Tensor:
    """Classification-phase loss on the folded class probability."""
    return T.add(loss_data(logits_real, y_real, k), loss_gen(logits_fake, y_fake, k))


def loss_plain(logits: Tensor, y, k: int) -> Tensor:
    """Ordinary k-way cross-entropy."""
    y = _labels(y, k)
    _check_logits(logits, k, y.size, "loss_plain")
    return _nll(logits, y - 1)


def _baseline_width(mode: str, k: int) -> int:
    if mode == "vanilla_2class":
        return 2
    if mode == "k_plus_one":
        return k + 1
    raise ConfigError(f"unknown baseline mode {mode!r}; expected one of {LOSS_MODES}")


def loss_baseline(mode: str, logits: Tensor, labels, is_real, k: int) -> Tensor:
    """Discriminator loss for the 2-class and (k+1)-class baselines.

    Real and generated rows share one batch, flagged by ``is_real``; the result
    is the mean over real rows plus the mean over generated rows (a side with
    no rows contributes nothing). Vanilla targets column 0 for real and 1 for
    fake. k+1 targets column y-1 for real and column k for every fake.
    """
    width = _baseline_width(mode, k)
    is_real = np.asarray(is_real, dtype=bool).reshape(-1)
    labels = _labels(labels, k)
    _check_logits(logits, width, is_real.size, f"loss_baseline[{mode}]")
    if labels.size != is_real.size:
        raise DimensionError("labels and is_real flags differ in length")
    if mode == "vanilla_2class":
        target = np.where(is_real, 0, 1)
    else:
        target = np.where(is_real, labels - 1, k)
    total = None
    for mask in (is_real, ~is_real):
        if mask.any():
            term = _nll(T.rows(logits, mask), target[mask])
            total = term if total is None else T.add(total, term)
    return total


def loss_baseline_generator(mode: str, logits_fake: Tensor, y_fake, k: int) -> Tensor:
    """Generator side: vanilla targets "real", k+1 targets the conditioned class."""
    width = _baseline_width(mode, k)
    y_fake = _labels(y_fake, k)
    _check_logits(logits_fake, width, y_fake.size, f"loss_baseline_generator[{mode}]")
    target = np.zeros_like(y_fake) if mode == "vanilla_2class" else y_fake - 1
    return _nll(logits_fake, target)


def predict(logits, head: Head | str, k: int) -> np.ndarray:
    """1-based class predictions; ties go to the lowest class index."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    squeeze = z.ndim == 1
    z = np.atleast_2d(z)
    head = Head(head)
    if z.shape[1] != head.width(k):
        raise DimensionError(f"{head.value} head with k={k} expects width {head.width(k)}, got {z.shape[1]}")
    p = T.softmax_np(z)
    if head is Head.TWO_K:
        scores = fold(p)
    elif head is Head.K_PLUS_ONE:
        scores = p[:, :k]
    elif head is Head.BINARY:
        # a binary head has no class information; it only ever predicts class 1
        scores = np.zeros((z.shape[0], 1))
    else:
        scores = p
    pred = scores.argmax(axis=1) + 1
    return pred[0] if squeeze else pred
