"""Dense augmenter and classifier networks built on :mod:`dada.tensor`."""

from __future__ import annotations

import struct
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, DomainError, FormatError
from .tensor import Tensor

LEAKY_SLOPE = 0.2
PARAM_MAGIC = b"DADA"
PARAM_VERSION = 1


class Head(str, Enum):
    TWO_K = "two_k"
    K_PLUS_ONE = "k_plus_one"
    BINARY = "binary"
    # k logits, used by the classifier-only baselines
    PLAIN = "plain"

    def width(self, k: int) -> int:
        return {"two_k": 2 * k, "k_plus_one": k + 1, "binary": 2, "plain": k}[self.value]


class Dense:
    """Affine layer ``x @ W + b``."""

    def __init__(self, weight: Tensor, bias: Tensor):
        self.weight = weight
        self.bias = bias

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)


def init_params(widths: Sequence[int], seed: int | np.random.Generator) -> list[Dense]:
    """He-normal weights and zero biases for consecutive ``widths``.

    ``widths`` lists every layer size including the input, so ``[4, 8, 2]``
    makes two layers. Same seed, same parameters.
    """
    widths = list(widths)
    if len(widths) < 2:
        raise ConfigError(f"need at least an input and an output width, got {widths}")
    if any(int(w) <= 0 for w in widths):
        raise ConfigError(f"layer widths must be positive, got {widths}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        layers.append(Dense(Tensor(w, requires_grad=True), Tensor(np.zeros((1, fan_out)), requires_grad=True)))
    return layers


def one_hot(y, k: int) -> np.ndarray:
    """1-based labels to a (batch, k) one-hot array."""
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.size and (y.min() < 1 or y.max() > k):
        raise DomainError(f"labels must lie in 1..{k}, got range [{y.min()}, {y.max()}]")
    out = np.zeros((y.size, k))
    out[np.arange(y.size), y - 1] = 1.0
    return out


class _Net:
    layers: list[Dense]

    def parameters(self) -> list[Tensor]:
        ps = []
        for layer in self.layers:
            ps += [layer.weight, layer.bias]
        return ps

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        for i, layer in enumerate(self.layers):
            named += [(f"{self.kind}.{i}.weight", layer.weight), (f"{self.kind}.{i}.bias", layer.bias)]
        return named

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag
            p.grad = None

    @property
    def trainable(self) -> bool:
        return any(p.requires_grad for p in self.parameters())

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def save(self, path: str | Path) -> None:
        save_params(self.layers, path)


class AugmenterNet(_Net):
    """Class-conditional generator.

    The input is ``concat(z, one_hot(y))`` and the one-hot is appended again
    before every later layer. Hidden layers use ReLU, the output tanh.
    """

    kind = "augmenter"
    instances = 0

    def __init__(self, k: int, out_dim: int, d_z: int = 100, widths: Sequence[int] = (128, 128), seed=0, layers=None):
        if k < 1:
            raise ConfigError(f"class count k must be >= 1, got {k}")
        if d_z < 1 or out_dim < 1:
            raise ConfigError("latent and output dimensions must be positive")
        self.k = k
        self.d_z = d_z
        self.out_dim = out_dim
        self.widths = list(widths)
        if layers is None:
            rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
            sizes = [d_z] + self.widths + [out_dim]
            layers = []
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
                layers += init_params([fan_in + k, fan_out], rng)
        self.layers = layers
        AugmenterNet.instances += 1

    def __call__(self, z, y) -> Tensor:
        return augment(self, z, y)

    def sample_latent(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.d_z))


class ClassifierNet(_Net):
    """Dense classifier with LReLU hidden layers and a configurable head.

    ``feature_layer`` is the 0-based index of the hidden layer whose
    activations :func:`features` returns; by default the last hidden layer.
    """

    kind = "classifier"

    def __init__(
        self,
        k: int,
        in_dim: int,
        head: Head | str = Head.TWO_K,
        widths: Sequence[int] = (128, 64),
        noise_sigma: float = 0.05,
        feature_layer: int | None = None,
        seed=0,
        layers=None,
    ):
        if k < 1:
            raise ConfigError(f"class count k must be >= 1, got {k}")
        if noise_sigma < 0:
            raise ConfigError(f"input noise sigma must be non-negative, got {noise_sigma}")
        try:
            self.head = Head(head)
        except ValueError:
            raise ConfigError(f"unknown head mode {head!r}") from None
        self.k = k
        self.in_dim = in_dim
        self.widths = list(widths)
        self.noise_sigma = float(noise_sigma)
        if not self.widths:
            raise ConfigError("classifier needs at least one hidden layer")
        if feature_layer is None:
            feature_layer = len(self.widths) - 1
        if not 0 <= feature_layer < len(self.widths):
            raise ConfigError(f"feature tap {feature_layer} outside hidden layers 0..{len(self.widths) - 1}")
        self.feature_layer = feature_layer
        self.layers = layers if layers is not None else init_params([in_dim] + self.widths + [self.n_logits], seed)
        if self.layers[-1].fan_out != self.n_logits:
            raise ConfigError(f"head {self.head.value} needs {self.n_logits} logits, layers give {self.layers[-1].fan_out}")

    @property
    def n_logits(self) -> int:
        return self.head.width(self.k)

    def __call__(self, x, train_mode: bool = False, rng=None) -> Tensor:
        return classify(self, x, train_mode, rng)

    def _hidden(self, x: Tensor, stop: int | None = None) -> list[Tensor]:
        acts = []
        h = x
        for i, layer in enumerate(self.layers[:-1]):
            h = T.leaky_relu(layer(h), LEAKY_SLOPE)
            acts.append(h)
            if stop is not None and i == stop:
                break
        return acts

    def forward(self, x, train_mode: bool = False, rng=None) -> tuple[Tensor, Tensor]:
        """Logits and tapped features from a single pass."""
        x = _prep_input(self, x, train_mode, rng)
        acts = self._hidden(x)
        return self.layers[-1](acts[-1]), acts[self.feature_layer]

    def logits_np(self, x: np.ndarray) -> np.ndarray:
        """Eval-mode logits without building a graph."""
        h = np.asarray(x, dtype=np.float64)
        for layer in self.layers[:-1]:
            h = h @ layer.weight.data + layer.bias.data
            h = np.where(h >= 0, h, LEAKY_SLOPE * h)
        last = self.layers[-1]
        return h @ last.weight.data + last.bias.data


def augment(net: AugmenterNet, z, y) -> Tensor:
    """One synthetic sample per (z, y) pair, values in (-1, 1)."""
    z = T.as_tensor(z)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if z.ndim != 2 or z.shape[1] != net.d_z:
        raise DimensionError(f"latent batch must be (n, {net.d_z}), got {z.shape}")
    if z.shape[0] != y.size:
        raise DimensionError(f"{z.shape[0]} latent codes for {y.size} labels")
    cond = Tensor(one_hot(y, net.k))
    h = z
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        h = layer(T.concat(h, cond, axis=1))
        h = T.tanh(h) if i == last else T.relu(h)
    return h


def _prep_input(net: ClassifierNet, x, train_mode: bool, rng) -> Tensor:
    x = T.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise DimensionError(f"classifier expects (n, {net.in_dim}) input, got {x.shape}")
    if train_mode and net.noise_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng()
        x = T.add(x, Tensor(rng.normal(0.0, net.noise_sigma, size=x.shape)))
    return x


def classify(net: ClassifierNet, x, train_mode: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Logits of width set by the head mode.

    In train mode, N(0, sigma) noise is added to the input first.
    """
    return net.forward(x, train_mode, rng)[0]


def features(net: ClassifierNet, x, train_mode: bool = False, rng=None) -> Tensor:
    x = _prep_input(net, x, train_mode, rng)
    return net._hidden(x, stop=net.feature_layer)[net.feature_layer]


# -- parameter files -----------------------------------------------------------
# header: b"DADA", version u32, layer count u32; per layer rows u32, cols u32,
# then rows*cols little-endian f64. A layer is stored as its weight matrix with
# the bias appended as the final row.


def save_params(layers: Sequence[Dense], path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(PARAM_MAGIC)
        fh.write(struct.pack("<II", PARAM_VERSION, len(layers)))
        for layer in layers:
            m = np.vstack([layer.weight.data, layer.bias.data.reshape(1, -1)])
            fh.write(struct.pack("<II", *m.shape))
            fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def load_params(path: str | Path) -> list[Dense]:
    raw = Path(path).read_bytes()
    if raw[:4] != PARAM_MAGIC:
        raise FormatError(f"bad parameter-file magic {raw[:4]!r}")
    if len(raw) < 12:
        raise FormatError("parameter file truncated in header")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != PARAM_VERSION:
        raise FormatError(f"unsupported parameter-file version {version}")
    off = 12
    layers = []
    for _ in range(count):
        if off + 8 > len(raw):
            raise FormatError("parameter file truncated in layer header")
        r, c = struct.unpack_from("<II", raw, off)
        off += 8
        nbytes = r * c * 8
        if off + nbytes > len(raw) or r < 2:
            raise FormatError("parameter file truncated in layer data")
        m = np.frombuffer(raw, dtype="<f8", count=r * c, offset=off).reshape(r, c).astype(np.float64)
        off += nbytes
        layers.append(Dense(Tensor(m[:-1], requires_grad=True), Tensor(m[-1:].copy(), requires_grad=True)))
    return layers


def load_augmenter(path: str | Path) -> AugmenterNet:
    """Rebuild an augmenter from a parameter file, inferring k and d_z."""
    layers = load_params(path)
    if len(layers) < 2:
        raise FormatError("augmenter files hold at least two layers")
    k = layers[1].fan_in - layers[0].fan_out
    d_z = layers[0].fan_in - k
    if k < 1 or d_z < 1:
        raise FormatError("layer shapes do not describe a conditional augmenter")
    widths = [l.fan_out for l in layers[:-1]]
    return AugmenterNet(k, layers[-1].fan_out, d_z=d_z, widths=widths, layers=layers)
