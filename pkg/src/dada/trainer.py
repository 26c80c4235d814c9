"""Two-phase adversarial training, the Adam optimizer, and run bookkeeping."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import losses as L
from . import tensor as T
from .data import Dataset
from .errors import ConfigError, TrainingDiverged, UsageError
from .models import AugmenterNet, ClassifierNet, Head, features
from .tensor import Tensor


@dataclass
class TrainConfig:
    k_g: int = 200
    k_c: int = 600
    batch_size: int = 64
    g_inner: int = 1
    lambda_fm: float = 1.0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    d_z: int = 100
    seed: int = 0
    noise_sigma: float = 0.05
    augmentation_ratio: float = 10.0
    aug_widths: tuple[int, ...] = (128, 128)
    clf_widths: tuple[int, ...] = (128, 64)
    phase2_fixed_set: bool = False
    # evaluate train/test accuracy every this many epochs (the last epoch always)
    eval_every: int = 10

    def __post_init__(self):
        self.aug_widths = tuple(int(w) for w in self.aug_widths)
        self.clf_widths = tuple(int(w) for w in self.clf_widths)
        self.validate()

    def validate(self, k: int | None = None) -> None:
        if self.k_g < 0 or self.k_c < 0 or self.g_inner < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.batch_size < 1 or (k is not None and self.batch_size < k):
            raise ConfigError(f"batch size {self.batch_size} cannot hold one sample of each of {k} classes")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.lambda_fm < 0:
            raise ConfigError("feature-matching weight must be >= 0")
        if self.noise_sigma < 0:
            raise ConfigError("input noise sigma must be >= 0")
        if self.augmentation_ratio < 0:
            raise ConfigError("augmentation ratio must be >= 0")
        if self.d_z < 1:
            raise ConfigError("latent dimension must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aug_widths"] = list(self.aug_widths)
        d["clf_widths"] = list(self.clf_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


# -- Adam ------------------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
    cfg: TrainConfig,
    names: Sequence[str] | None = None,
) -> None:
    """One bias-corrected Adam update, in place."""
    for i, g in enumerate(grads):
        if g is not None and not np.all(np.isfinite(g)):
            label = names[i] if names else f"#{i}"
            raise TrainingDiverged(f"non-finite gradient for parameter {label}")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


class Adam:
    def __init__(self, named_params: Sequence[tuple[str, Tensor]], cfg: TrainConfig):
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.cfg = cfg
        self.state = AdamState.for_params(self.params)

    @property
    def steps(self) -> int:
        return self.state.t

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, self.cfg, self.names)


# -- run log ---------------------------------------------------------------------

PHASE_ORDER = {"generation": 1, "classification": 2, "classifier_only": 2}


@dataclass
class EpochRecord:
    phase: str
    epoch: int
    loss_C: float
    loss_G: float | None
    train_acc: float | None
    test_acc: float | None
    loss_tag: str


@dataclass
class RunLog:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, rec: EpochRecord) -> None:
        if self.records:
            prev = self.records[-1]
            if (PHASE_ORDER[rec.phase], rec.epoch) <= (PHASE_ORDER[prev.phase], prev.epoch):
                raise UsageError("run log records must be appended in (phase, epoch) order")
        self.records.append(rec)

    def extend(self, other: "RunLog") -> None:
        for r in other.records:
            self.append(r)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def phase(self, name: str) -> list[EpochRecord]:
        return [r for r in self.records if r.phase == name]

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r)) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "RunLog":
        log = cls()
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    log.append(EpochRecord(**json.loads(line)))
        return log


# -- batching --------------------------------------------------------------------


def balanced_batches(y: np.ndarray, k: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle a full pass over ``y`` into batches that each hold every class.

    The number of batches is ``len(y) // batch_size`` capped by the smallest
    class count, so batches can run larger than ``batch_size`` but never
    miss a class.
    """
    per_class = [rng.permutation(np.flatnonzero(y == c)) for c in range(1, k + 1)]
    smallest = min(p.size for p in per_class)
    if smallest == 0:
        raise ConfigError("every class needs at least one training sample")
    nb = max(1, min(y.size // batch_size, smallest))
    batches = [[] for _ in range(nb)]
    for idx in per_class:
        for b, chunk in enumerate(np.array_split(idx, nb)):
            batches[b].append(chunk)
    return [rng.permutation(np.concatenate(b)) for b in batches]


def evaluate(classifier: ClassifierNet, test: Dataset) -> float:
    """Fraction of correctly predicted samples, eval mode (no input noise)."""
    if len(test) == 0:
        raise UsageError("cannot evaluate on an empty test set")
    pred = L.predict(classifier.logits_np(test.x), classifier.head, classifier.k)
    return float(np.mean(pred == test.y))


# -- the trainer -------------------------------------------------------------------

Provider = Callable[[np.ndarray, np.random.Generator], np.ndarray]


class Trainer:
    """Holds one run's models, optimizers and random stream.

    Phase I alternates classifier and augmenter updates; phase II freezes the
    augmenter and trains the classifier on real plus generated batches. The
    classifier and its optimizer state carry over between phases.
    """

    def __init__(
        self,
        classifier: ClassifierNet,
        augmenter: AugmenterNet | None,
        cfg: TrainConfig,
        rng: np.random.Generator | None = None,
        record_batches: bool = False,
    ):
        self.clf = classifier
        self.aug = augmenter
        self.cfg = cfg
        self.k = classifier.k
        cfg.validate(self.k)
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.opt_c = Adam(classifier.named_parameters(), cfg)
        self.opt_g = Adam(augmenter.named_parameters(), cfg) if augmenter is not None else None
        self.record_batches = record_batches
        self.batch_labels: list[tuple[str, np.ndarray]] = []

    # -- helpers

    def _batches(self, data: Dataset, tag: str) -> list[np.ndarray]:
        batches = balanced_batches(data.y, self.k, self.cfg.batch_size, self.rng)
        if self.record_batches:
            self.batch_labels += [(tag, data.y[b].copy()) for b in batches]
        return batches

    def _uniform_labels(self, n: int) -> np.ndarray:
        return self.rng.integers(1, self.k + 1, size=n)

    def _generate(self, y: np.ndarray) -> Tensor:
        z = self.aug.sample_latent(y.size, self.rng)
        return self.aug(z, y)

    def _eval(self, epoch: int, total: int, data: Dataset, test: Dataset | None):
        every = self.cfg.eval_every
        if epoch != total and (every <= 0 or epoch % every):
            return None, None
        return evaluate(self.clf, data), (evaluate(self.clf, test) if test is not None else None)

    def _classifier_loss_phase1(self, xr, yr, xf, yf) -> Tensor:
        head = self.clf.head
        lr_ = self.clf(xr, train_mode=True, rng=self.rng)
        lf_ = self.clf(xf, train_mode=True, rng=self.rng)
        if head is Head.TWO_K:
            return L.loss_C_phase1(lr_, yr, lf_, yf, self.k)
        mode = "k_plus_one" if head is Head.K_PLUS_ONE else "vanilla_2class"
        logits = T.concat(lr_, lf_, axis=0)
        flags = np.concatenate([np.ones(yr.size, bool), np.zeros(yf.size, bool)])
        return L.loss_baseline(mode, logits, np.concatenate([yr, yf]), flags, self.k)

    def _generator_loss(self, xr: np.ndarray, yr: np.ndarray) -> Tensor:
        yf = yr.copy()
        fake = self._generate(yf)
        head = self.clf.head
        lam = self.cfg.lambda_fm
        if lam > 0:
            logits_f, feat_f = self.clf.forward(fake, train_mode=True, rng=self.rng)
        else:
            logits_f, feat_f = self.clf(fake, train_mode=True, rng=self.rng), None
        if head is Head.TWO_K:
            adv = L.loss_G_phase1(logits_f, yf, self.k)
        else:
            mode = "k_plus_one" if head is Head.K_PLUS_ONE else "vanilla_2class"
            adv = L.loss_baseline_generator(mode, logits_f, yf, self.k)
        if lam == 0:
            return adv
        feat_r = features(self.clf, xr, train_mode=True, rng=self.rng).detach()
        return L.loss_G_total(adv, L.loss_feature_matching(feat_r, yr, feat_f, yf), lam)

    # -- phases

    def phase1(self, data: Dataset, test: Dataset | None = None) -> RunLog:
        """Generation training: adversarial classifier/augmenter alternation."""
        if self.aug is None:
            raise UsageError("phase I needs an augmenter")
        if not self.aug.trainable:
            raise UsageError("phase I needs a trainable augmenter")
        if self.clf.head is Head.PLAIN:
            raise UsageError("phase I needs a real/fake-aware classifier head")
        _check_classes(data, self.k)
        log = RunLog()
        tag = "L_C^I" if self.clf.head is Head.TWO_K else f"baseline:{self.clf.head.value}"
        for epoch in range(1, self.cfg.k_g + 1):
            lc, lg = [], []
            for b in self._batches(data, "generation"):
                xr, yr = data.x[b], data.y[b]
                # classifier step, generated labels uniform over classes
                yf = self._uniform_labels(yr.size)
                xf = Tensor(self._generate(yf).data)
                self.opt_c.zero_grad()
                loss_c = self._classifier_loss_phase1(xr, yr, xf, yf)
                loss_c.backward()
                self.opt_c.step()
                lc.append(loss_c.item())
                # augmenter steps, generated labels copied from the real batch
                for _ in range(self.cfg.g_inner):
                    self.opt_g.zero_grad()
                    self.clf.zero_grad()
                    loss_g = self._generator_loss(xr, yr)
                    loss_g.backward()
                    self.opt_g.step()
                    lg.append(loss_g.item())
            self.clf.zero_grad()
            tr, te = self._eval(epoch, self.cfg.k_g, data, test)
            log.append(EpochRecord("generation", epoch, float(np.mean(lc)), float(np.mean(lg)) if lg else None, tr, te, tag))
        return log

    def augmenter_provider(self) -> Provider:
        aug = self.aug

        def provide(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
            return aug(aug.sample_latent(y.size, rng), y).data

        return provide

    def phase2(self, data: Dataset, test: Dataset | None = None, provider: Provider | None = None) -> RunLog:
        """Classification training with a frozen generator as data provider."""
        if provider is None:
            if self.aug is None:
                raise UsageError("phase II needs an augmenter or an explicit provider")
            if self.aug.trainable:
                raise UsageError("phase II requires a frozen augmenter; call set_trainable(False) first")
            provider = self.augmenter_provider()
        _check_classes(data, self.k)
        before = self.aug.checksum() if self.aug is not None else None
        cfg = self.cfg
        n_gen = int(math.ceil(cfg.augmentation_ratio * len(data)))
        fixed = None
        if cfg.phase2_fixed_set and n_gen:
            fy = np.resize(np.arange(1, self.k + 1), n_gen)
            fixed = (provider(fy, self.rng), fy)
        head = self.clf.head
        tag = {Head.TWO_K: "L_C^II", Head.K_PLUS_ONE: "ce:k_plus_one", Head.PLAIN: "ce:plain"}.get(head)
        if tag is None:
            raise UsageError(f"phase II does not support head {head.value}")
        passes = max(1, int(math.ceil(n_gen / len(data))))
        log = RunLog()
        for epoch in range(1, cfg.k_c + 1):
            losses = []
            done = 0
            gen_order = self.rng.permutation(n_gen) if fixed is not None else None
            # each real batch is paired with an equal-size generated batch until
            # this epoch's quota of ratio * |D| generated samples is used up
            for _ in range(passes):
                for b in self._batches(data, "classification"):
                    xr, yr = data.x[b], data.y[b]
                    m = min(yr.size, n_gen - done)
                    xf = yf = None
                    if m > 0:
                        if fixed is not None:
                            sel = gen_order[done:done + m]
                            xf, yf = fixed[0][sel], fixed[1][sel]
                        else:
                            yf = self._uniform_labels(m)
                            xf = provider(yf, self.rng)
                        done += m
                    self.opt_c.zero_grad()
                    loss = self._classifier_loss_phase2(xr, yr, xf, yf)
                    loss.backward()
                    self.opt_c.step()
                    losses.append(loss.item())
            tr, te = self._eval(epoch, cfg.k_c, data, test)
            log.append(EpochRecord("classification", epoch, float(np.mean(losses)), None, tr, te, tag))
        if self.aug is not None and self.aug.checksum() != before:
            raise AssertionError("augmenter parameters changed during phase II")
        return log

    def _classifier_loss_phase2(self, xr, yr, xf, yf) -> Tensor:
        head = self.clf.head
        lr_ = self.clf(xr, train_mode=True, rng=self.rng)
        if xf is None:
            return L.loss_data(lr_, yr, self.k) if head is Head.TWO_K else _plain_nll(lr_, yr)
        lf_ = self.clf(xf, train_mode=True, rng=self.rng)
        if head is Head.TWO_K:
            return L.loss_C_phase2(lr_, yr, lf_, yf, self.k)
        return T.add(_plain_nll(lr_, yr), _plain_nll(lf_, yf))

    def train_classifier_only(self, data: Dataset, epochs: int, test: Dataset | None = None) -> RunLog:
        """Plain k-way cross-entropy on real data alone."""
        _check_classes(data, self.k)
        log = RunLog()
        for epoch in range(1, epochs + 1):
            losses = []
            for b in self._batches(data, "classifier_only"):
                self.opt_c.zero_grad()
                loss = _plain_nll(self.clf(data.x[b], train_mode=True, rng=self.rng), data.y[b])
                loss.backward()
                self.opt_c.step()
                losses.append(loss.item())
            tr, te = self._eval(epoch, epochs, data, test)
            log.append(EpochRecord("classifier_only", epoch, float(np.mean(losses)), None, tr, te, "ce:plain"))
        return log


def _plain_nll(logits: Tensor, y: np.ndarray) -> Tensor:
    """Cross-entropy on the class column, over whatever logits the head has."""
    return T.scale(T.mean(T.gather(T.log_softmax(logits), np.asarray(y) - 1)), -1.0)


def _check_classes(data: Dataset, k: int) -> None:
    if data.k != k:
        raise ConfigError(f"dataset has k={data.k}, model has k={k}")
    counts = data.class_counts()
    if np.any(counts == 0):
        empty = [int(c) + 1 for c in np.flatnonzero(counts == 0)]
        raise ConfigError(f"classes {empty} have no training samples")


def train_phase1(augmenter, classifier, dataset, cfg: TrainConfig, test=None) -> RunLog:
    return Trainer(classifier, augmenter, cfg).phase1(dataset, test)


def train_phase2(augmenter, classifier, dataset, cfg: TrainConfig, test=None) -> RunLog:
    return Trainer(classifier, augmenter, cfg).phase2(dataset, test)
