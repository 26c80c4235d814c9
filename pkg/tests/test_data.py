import math
import struct

import numpy as np
import pytest

from dada.data import (
    AugmentOps,
    Dataset,
    SubsampleSpec,
    circle_means,
    flip_h,
    gen_gaussian_mixture,
    load_csv,
    load_idx,
    read_idx_raw,
    rotate,
    split,
    subsample,
    traditional_augment,
    translate,
    write_idx,
)
from dada.errors import ConfigError, FormatError


def test_dataset_validation():
    with pytest.raises(ConfigError):
        Dataset(np.array([[2.0]]), [1], 1)
    with pytest.raises(ConfigError):
        Dataset(np.zeros((1, 2)), [3], 2)
    with pytest.raises(ConfigError):
        Dataset(np.zeros((1, 3)), [1], 1, grid=(2, 2, 1))
    d = Dataset(np.zeros((2, 2)), [1, 2], 2)
    with pytest.raises(ValueError):
        d.x[0, 0] = 1.0
    assert [s.y for s in d.samples] == [1, 2]


def test_mixture_nearest_mean_oracle_separable():
    means = np.array([[2.0, 2.0], [-2.0, -2.0]])
    fresh = gen_gaussian_mixture(2, 5000, means, 0.3, seed=123)
    bound = np.abs(means).max() + 4 * 0.3
    mu = means / bound
    pred = np.argmin(((fresh.x[:, None, :] - mu[None]) ** 2).sum(-1), axis=1) + 1
    assert np.mean(pred == fresh.y) >= 0.999


def test_mixture_errors_and_determinism():
    with pytest.raises(ConfigError):
        gen_gaussian_mixture(2, 0, sigma=0.3)
    with pytest.raises(ConfigError):
        gen_gaussian_mixture(3, 5, means=[[0, 0], [1, 1]], sigma=0.3)
    a = gen_gaussian_mixture(3, 10, sigma=0.5, seed=4)
    b = gen_gaussian_mixture(3, 10, sigma=0.5, seed=4)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    assert a.x.min() >= -1 and a.x.max() <= 1


def test_circle_means_spacing():
    m = circle_means(3, radius=2.0, dim=5)
    assert m.shape == (3, 5)
    np.testing.assert_allclose(np.linalg.norm(m, axis=1), 2.0)
    d = np.linalg.norm(m[0] - m[1])
    assert d == pytest.approx(2 * 2.0 * math.sin(math.pi / 3))


def test_subsample_counts_and_identity():
    d = gen_gaussian_mixture(3, 100, sigma=0.5, seed=0)
    s = subsample(d, SubsampleSpec(10, seed=1))
    assert s.class_counts().tolist() == [10, 10, 10]
    full = subsample(d, SubsampleSpec(100, seed=1))
    assert sorted(map(tuple, full.x)) == sorted(map(tuple, d.x))
    with pytest.raises(ConfigError, match="class 1"):
        subsample(d, SubsampleSpec(101, seed=1))


def test_subsample_seeds_differ():
    # chance that two independent 10-of-100 draws coincide per class is 1/C(100,10) ~ 5.8e-14
    assert 1 / math.comb(100, 10) < 1e-10
    d = gen_gaussian_mixture(3, 100, sigma=0.5, seed=0)
    a, b = subsample(d, SubsampleSpec(10, 1)), subsample(d, SubsampleSpec(10, 2))
    assert not np.array_equal(a.x, b.x)
    assert np.array_equal(a.x, subsample(d, SubsampleSpec(10, 1)).x)


def test_subsample_preserves_class_means():
    d = gen_gaussian_mixture(2, 200, sigma=0.8, seed=0)
    for c in (1, 2):
        src = d.x[d.y == c]
        subs = [subsample(d, SubsampleSpec(10, s)) for s in range(100)]
        means = np.array([sub.x[sub.y == c].mean(axis=0) for sub in subs])
        se = src.std(axis=0) / math.sqrt(10) / math.sqrt(100)
        assert np.all(np.abs(means.mean(axis=0) - src.mean(axis=0)) < 3 * se)


def test_split_stratified_disjoint_deterministic():
    d = gen_gaussian_mixture(2, 100, sigma=0.5, seed=0)
    tr, te = split(d, 0.1, seed=3)
    assert tr.class_counts().tolist() == [90, 90] and te.class_counts().tolist() == [10, 10]
    rows = lambda ds: {r.tobytes() for r in ds.x}
    assert not rows(tr) & rows(te)
    assert rows(tr) | rows(te) == rows(d)
    tr2, te2 = split(d, 0.1, seed=3)
    assert np.array_equal(tr.x, tr2.x) and np.array_equal(te.x, te2.x)
    with pytest.raises(ConfigError):
        split(Dataset(np.zeros((3, 1)), [1, 1, 2], 2), 0.5)
    with pytest.raises(ConfigError):
        split(d, 1.0)


# -- traditional augmentation ------------------------------------------------------


def test_grid_ops_definitions():
    a, b, c, d = 0.1, 0.2, 0.3, 0.4
    img = np.array([[a, b], [c, d]])
    assert flip_h(img).tolist() == [[b, a], [d, c]]
    assert np.array_equal(rotate(img, 0.0), img)
    assert np.array_equal(translate(img, 0, 0), img)
    assert translate(img, 1, 0).tolist() == [[-1, -1], [a, b]]
    assert np.array_equal(rotate(np.arange(9.0).reshape(3, 3), 90.0), np.rot90(np.arange(9.0).reshape(3, 3), 1))


def test_augment_identity_and_zero_ops():
    grid = Dataset(np.random.default_rng(0).uniform(-1, 1, (4, 4)), [1, 2, 1, 2], 2, grid=(2, 2, 1))
    assert traditional_augment(grid, AugmentOps(flip_h=True), multiplier=1) is grid
    out = traditional_augment(grid, AugmentOps(rotate=1e-12, translate=0), multiplier=3, seed=0)
    assert len(out) == 12
    # rotation by a vanishing angle is the identity under nearest-neighbour sampling
    assert np.array_equal(out.x[4:8], grid.x) and np.array_equal(out.x[8:], grid.x)


def test_augment_vector_layout_rules():
    vec = gen_gaussian_mixture(2, 5, sigma=0.5, seed=0)
    with pytest.raises(ConfigError):
        traditional_augment(vec, AugmentOps(flip_h=True), multiplier=2)
    out = traditional_augment(vec, AugmentOps(jitter=0.05), multiplier=4, seed=1)
    assert len(out) == 40 and np.array_equal(out.x[:10], vec.x)


def test_augment_preserves_labels_and_range():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(1000, 16))
    y = rng.integers(1, 6, size=1000)
    d = Dataset(x, y, 5, grid=(4, 4, 1))
    out = traditional_augment(d, AugmentOps(rotate=15, translate=2, flip_h=True, jitter=0.3), multiplier=10, seed=2)
    assert len(out) == 10_000
    src = np.tile(np.arange(1000), 9)
    assert np.sum(out.y[1000:] != y[src]) == 0
    assert out.x.min() >= -1 and out.x.max() <= 1


# -- IDX ------------------------------------------------------------------------------


def _fixture(tmp_path):
    pix = np.array([[[0, 255], [17, 128]], [[1, 2], [3, 254]]], dtype=np.uint8)
    labels = np.array([0, 9], dtype=np.uint8)
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    ip.write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + pix.tobytes())
    lp.write_bytes(struct.pack(">II", 0x801, 2) + labels.tobytes())
    return ip, lp, pix, labels


def test_idx_round_trip(tmp_path):
    ip, lp, pix, labels = _fixture(tmp_path)
    d = load_idx(ip, lp)
    assert d.grid == (2, 2, 1) and d.y.tolist() == [1, 10]
    assert d.x[0, 0] == -1.0 and d.x[0, 1] == 1.0
    back = np.rint((d.x + 1) * 127.5).astype(np.uint8).reshape(2, 2, 2)
    assert back.tobytes() == pix.tobytes()
    raw_pix, raw_lab = read_idx_raw(ip, lp)
    ip2, lp2 = tmp_path / "i2", tmp_path / "l2"
    write_idx(ip2, lp2, raw_pix, raw_lab)
    assert ip2.read_bytes() == ip.read_bytes() and lp2.read_bytes() == lp.read_bytes()


def test_idx_errors(tmp_path):
    ip, lp, _, _ = _fixture(tmp_path)
    bad = tmp_path / "bad"
    bad.write_bytes(struct.pack(">IIII", 0x802, 2, 2, 2) + bytes(8))
    with pytest.raises(FormatError, match="0x00000802"):
        load_idx(bad, lp)
    trunc = tmp_path / "trunc"
    trunc.write_bytes(ip.read_bytes()[:-1])
    with pytest.raises(FormatError):
        load_idx(trunc, lp)
    trunc.write_bytes(ip.read_bytes()[:10])
    with pytest.raises(FormatError):
        load_idx(trunc, lp)
    short = tmp_path / "short"
    short.write_bytes(struct.pack(">II", 0x801, 1) + bytes(1))
    with pytest.raises(FormatError):
        load_idx(ip, short)


# -- CSV --------------------------------------------------------------------------------


def test_csv_ingestion_with_sidecar(tmp_path):
    train = tmp_path / "train.csv"
    train.write_text("y,x1,x2\n1,0,10\n2,4,20\n1,2,15\n")
    d = load_csv(train)
    assert d.y.tolist() == [1, 2, 1] and d.k == 2
    np.testing.assert_allclose(d.x, [[-1, -1], [1, 1], [0, 0]])
    meta = tmp_path / "train.csv.meta.json"
    assert meta.exists()
    test = tmp_path / "test.csv"
    test.write_text("y,x1,x2\n2,1,12.5\n")
    t = load_csv(test, meta_path=meta)
    np.testing.assert_allclose(t.x, [[-0.5, -0.5]])


def test_csv_format_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("label,x1\n1,2\n")
    with pytest.raises(FormatError):
        load_csv(p)
    p.write_text("y,x1\n1.5,2\n")
    with pytest.raises(FormatError):
        load_csv(p)
