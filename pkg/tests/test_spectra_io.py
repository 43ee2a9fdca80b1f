import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from cpsvm.spectra_io import (
    ConfigurationError,
    DatasetError,
    LabeledDataset,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    normalize_dataset,
    normalize_minmax,
    save_dataset,
    shuffle_split,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)


def _dataset(per_class, k=3, channels=5, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(1, k + 1), per_class)
    return LabeledDataset(rng.random((labels.size, channels)), labels, k)


def test_minmax_examples():
    np.testing.assert_array_equal(normalize_minmax([0, 5, 10]), [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(normalize_minmax([3, 3, 3]), [0.0, 0.0, 0.0])


def test_minmax_rows_independent():
    x = np.array([[0.0, 2.0, 4.0], [10.0, 10.0, 10.0], [-1.0, 1.0, 0.0]])
    np.testing.assert_array_equal(normalize_minmax(x), [[0, 0.5, 1], [0, 0, 0], [0, 1, 0.5]])


def test_minmax_empty_rejected():
    with pytest.raises(DatasetError):
        normalize_minmax([])


@given(hnp.arrays(np.float64, st.integers(2, 60), elements=finite))
def test_minmax_range_and_idempotent(x):
    y = normalize_minmax(x)
    assert np.all((y >= 0) & (y <= 1))
    if x.max() > x.min():
        assert y.min() == 0.0 and y.max() == 1.0
        np.testing.assert_allclose(normalize_minmax(y), y, atol=1e-12)
    else:
        assert np.all(y == 0)


def test_dataset_validation():
    with pytest.raises(DatasetError, match="no samples"):
        LabeledDataset(np.zeros((0, 4)), np.zeros(0, dtype=int), 2)
    with pytest.raises(DatasetError):
        LabeledDataset(np.zeros((2, 4)), [1, 3], 2)
    with pytest.raises(DatasetError, match="without samples"):
        LabeledDataset(np.zeros((2, 4)), [1, 1], 2)
    d = _dataset(2)
    with pytest.raises(ValueError):
        d.spectra[0, 0] = 5.0


def test_split_paper_sizes():
    d = _dataset(200, k=14, channels=2)
    for frac, n_train, per_class in ((0.9, 2520, 180), (0.8, 2240, 160)):
        train, test = shuffle_split(d, frac, seed=1)
        assert (len(train), len(test)) == (n_train, 2800 - n_train)
        assert np.all(np.bincount(train.labels)[1:] == per_class)
        assert np.all(np.bincount(test.labels)[1:] == 200 - per_class)


def test_split_deterministic():
    d = _dataset(10)
    a = shuffle_split(d, 0.7, seed=5)
    b = shuffle_split(d, 0.7, seed=5)
    assert a[0] == b[0] and a[1] == b[1]
    c = shuffle_split(d, 0.7, seed=6)
    assert not (a[0] == c[0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(2, 12), min_size=2, max_size=5), st.floats(0.05, 0.95), st.integers(0, 2**32 - 1))
def test_split_stratified_partition(sizes, frac, seed):
    labels = np.concatenate([np.full(n, c + 1) for c, n in enumerate(sizes)])
    # unique rows make membership checks exact
    spectra = np.arange(labels.size, dtype=float)[:, None] * np.ones((1, 3))
    d = LabeledDataset(spectra, labels, len(sizes))
    train, test = shuffle_split(d, frac, seed)
    ids = np.concatenate([train.spectra[:, 0], test.spectra[:, 0]])
    assert sorted(ids.tolist()) == list(range(labels.size))
    for c, n in enumerate(sizes, start=1):
        nt = int(np.sum(train.labels == c))
        assert nt + int(np.sum(test.labels == c)) == n
        assert 1 <= nt <= n - 1
        expected = min(max(int(np.floor(frac * n + 0.5)), 1), n - 1)
        assert nt == expected


def test_split_errors():
    d = _dataset(3)
    for frac in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ConfigurationError):
            shuffle_split(d, frac, 0)
    single = LabeledDataset(np.zeros((3, 2)), [1, 2, 2], 2)
    with pytest.raises(DatasetError, match="class 1"):
        shuffle_split(single, 0.5, 0)


def test_generator_defaults_and_determinism():
    cfg = SyntheticConfig(spectra_per_class=5)
    a, b = generate_synthetic(cfg), generate_synthetic(cfg)
    assert a == b
    assert len(a) == 70 and a.class_count == 14 and a.channel_count == 1024
    assert np.all(a.spectra >= 0) and np.all(a.spectra == np.round(a.spectra))
    assert not (generate_synthetic(SyntheticConfig(spectra_per_class=5, seed=43)) == a)


def test_generator_full_default_size():
    d = generate_synthetic()
    assert len(d) == 2800 and d.class_count == 14 and d.channel_count == 1024
    assert np.all(np.bincount(d.labels)[1:] == 200)


def test_generator_noiseless_degenerate():
    cfg = SyntheticConfig(class_count=3, spectra_per_class=4, channel_count=64, noise=False,
                          peak_center_jitter=0.0, intensity_jitter=0.0)
    d = generate_synthetic(cfg)
    for c in range(1, 4):
        rows = d.spectra[d.labels == c]
        np.testing.assert_array_equal(rows, np.broadcast_to(rows[0], rows.shape))
    assert not np.array_equal(d.spectra[0], d.spectra[4])


def test_generator_classes_close():
    # classes are small perturbations of one template
    d = normalize_dataset(generate_synthetic(SyntheticConfig(spectra_per_class=20, noise=False)))
    means = np.array([d.spectra[d.labels == c].mean(axis=0) for c in range(1, 15)])
    corr = np.corrcoef(means)
    assert corr[np.triu_indices(14, 1)].min() > 0.9


def test_generator_config_errors():
    for bad in (dict(class_count=0), dict(peak_width_range=(5.0, 1.0)), dict(peak_counts=0.0),
                dict(peak_center_jitter=-1.0)):
        with pytest.raises(ConfigurationError):
            generate_synthetic(SyntheticConfig(**bad))


def test_csv_round_trip(tmp_path):
    d = normalize_dataset(generate_synthetic(SyntheticConfig(class_count=3, spectra_per_class=3, channel_count=16)))
    path = tmp_path / "d.csv"
    save_dataset(d, path)
    assert path.read_text().splitlines()[0] == "label," + ",".join(f"c{i}" for i in range(16))
    assert load_dataset(path) == d


@settings(max_examples=20, deadline=None)
@given(hnp.arrays(np.float64, (4, 3), elements=st.floats(-1e300, 1e300, allow_nan=False)))
def test_csv_round_trip_exact(tmp_path_factory, values):
    d = LabeledDataset(values, [1, 2, 1, 2], 2)
    path = tmp_path_factory.mktemp("rt") / "x.csv"
    save_dataset(d, path)
    assert load_dataset(path) == d


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("label,c0,c1\n1,0.5,0.5\n2,0.1\n")
    with pytest.raises(DatasetError, match=":3:"):
        load_dataset(p)
    p.write_text("label,c0,c1\n1,0.5,abc\n")
    with pytest.raises(DatasetError, match=":2: malformed"):
        load_dataset(p)
    p.write_text("label,c0\n1,0.5\n5,0.5\n")
    with pytest.raises(DatasetError, match=":3: unknown label"):
        load_dataset(p, class_count=2)
    p.write_text("")
    with pytest.raises(DatasetError, match="no samples"):
        load_dataset(p)
    p.write_text("label,c0,c1\n")
    with pytest.raises(DatasetError, match="no samples"):
        load_dataset(p)
