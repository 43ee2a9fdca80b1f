"""Spectral datasets: normalization, stratified splitting, CSV I/O and a
synthetic generator of absorption-like spectra."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    """Raised for malformed datasets or dataset files."""


class ConfigurationError(ValueError):
    """Raised for invalid configuration values."""


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """A stack of equal-length spectra with integer class labels in ``1..K``.

    ``spectra`` has shape ``(n_samples, channel_count)``; ``labels`` has
    shape ``(n_samples,)``.
    """

    spectra: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        spectra = np.array(self.spectra, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if spectra.ndim != 2:
            raise DatasetError("spectra must be a 2D array (samples x channels)")
        if spectra.shape[0] == 0:
            raise DatasetError("no samples")
        if labels.shape != (spectra.shape[0],):
            raise DatasetError("labels must have one entry per spectrum")
        k = int(self.class_count)
        if k < 1:
            raise DatasetError("class_count must be positive")
        if labels.min() < 1 or labels.max() > k:
            raise DatasetError(f"labels must lie in [1, {k}]")
        missing = sorted(set(range(1, k + 1)) - set(labels.tolist()))
        if missing:
            raise DatasetError(f"classes without samples: {missing}")
        spectra.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "spectra", spectra)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_count", k)

    def __len__(self) -> int:
        return self.spectra.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.class_count == other.class_count
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.spectra, other.spectra)
        )

    @property
    def channel_count(self) -> int:
        return self.spectra.shape[1]

    def subset(self, index) -> "LabeledDataset":
        return LabeledDataset(self.spectra[index], self.labels[index], self.class_count)

    def with_spectra(self, spectra) -> "LabeledDataset":
        """Same labels, new per-sample vectors (e.g. extracted features)."""
        return LabeledDataset(spectra, self.labels, self.class_count)


def normalize_minmax(counts) -> np.ndarray:
    """Rescale a spectrum (or each row of a 2D stack) to ``[0, 1]``.

    A constant spectrum maps to all zeros.
    """
    x = np.asarray(counts, dtype=np.float64)
    if x.size == 0:
        raise DatasetError("cannot normalize an empty spectrum")
    lo = x.min(axis=-1, keepdims=True)
    span = x.max(axis=-1, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (x - lo) / safe, 0.0)


def normalize_dataset(d: LabeledDataset) -> LabeledDataset:
    return d.with_spectra(normalize_minmax(d.spectra))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def shuffle_split(d: LabeledDataset, train_fraction: float, seed: int):
    """Stratified random split into ``(train, test)``.

    Each class contributes ``round(train_fraction * n_class)`` samples to the
    training side, clamped so both sides keep at least one member. Members
    keep a shuffled order on both sides.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(1, d.class_count + 1):
        members = np.flatnonzero(d.labels == c)
        if members.size < 2:
            raise DatasetError(f"class {c} needs at least 2 samples to split")
        members = rng.permutation(members)
        n_train = min(max(_round_half_up(train_fraction * members.size), 1), members.size - 1)
        train_idx.append(members[:n_train])
        test_idx.append(members[n_train:])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))
    return d.subset(train_idx), d.subset(test_idx)


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the synthetic corpus.

    Every class shares the same set of peak centers; classes differ by
    small per-class perturbations of peak amplitude, width and position.
    Samples additionally get per-sample center jitter, an overall intensity
    factor and Poisson counting noise.
    """

    class_count: int = 14
    spectra_per_class: int = 200
    channel_count: int = 1024
    peaks_per_class: int = 6
    # per-class offsets around the shared template
    class_center_shift: float = 1.0
    class_amplitude_spread: tuple[float, float] = (0.9, 1.1)
    class_width_spread: tuple[float, float] = (0.95, 1.05)
    # shared template
    peak_width_range: tuple[float, float] = (6.0, 20.0)
    amplitude_range: tuple[float, float] = (0.3, 1.0)
    # per-sample variation
    peak_center_jitter: float = 0.5
    intensity_jitter: float = 0.05
    peak_counts: float = 400.0
    background_counts: float = 200.0
    noise: bool = True
    seed: int = 42

    def validate(self):
        for name in ("class_count", "spectra_per_class", "channel_count", "peaks_per_class"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("class_amplitude_spread", "class_width_spread", "peak_width_range", "amplitude_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigurationError(f"{name} must be a positive, non-empty range")
        if min(self.class_center_shift, self.peak_center_jitter, self.intensity_jitter) < 0:
            raise ConfigurationError("jitter and shift values must be non-negative")
        if self.peak_counts <= 0 or self.background_counts < 0:
            raise ConfigurationError("count scales must be positive")


def _background(channels: np.ndarray, n: int) -> np.ndarray:
    # smooth bremsstrahlung-like hump, peak near 30% of the range
    t = channels / n
    bg = t * np.exp(-t / 0.3)
    return bg / bg.max()


def generate_synthetic(cfg: SyntheticConfig = SyntheticConfig()) -> LabeledDataset:
    """Draw ``class_count * spectra_per_class`` raw count spectra.

    Spectra are returned as counts (not normalized), ordered class by class.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n, k, p = cfg.channel_count, cfg.class_count, cfg.peaks_per_class
    channels = np.arange(n, dtype=np.float64)
    background = _background(channels, n)

    # shared peak template, centers spread over the informative region
    margin = 0.05 * n
    centers = np.sort(rng.uniform(margin, n - margin, size=p))
    widths = rng.uniform(*cfg.peak_width_range, size=p)
    amps = rng.uniform(*cfg.amplitude_range, size=p)

    class_centers = centers + rng.uniform(-cfg.class_center_shift, cfg.class_center_shift, size=(k, p))
    class_widths = widths * rng.uniform(*cfg.class_width_spread, size=(k, p))
    class_amps = amps * rng.uniform(*cfg.class_amplitude_spread, size=(k, p))

    m = cfg.spectra_per_class
    spectra = np.empty((k * m, n))
    labels = np.repeat(np.arange(1, k + 1), m)
    for c in range(k):
        jitter = cfg.peak_center_jitter * rng.standard_normal((m, p))
        mu = class_centers[c] + jitter  # (m, p)
        z = (channels[None, None, :] - mu[:, :, None]) / class_widths[c][None, :, None]
        peaks = np.einsum("p,mpn->mn", class_amps[c], np.exp(-0.5 * z * z))
        scale = 1.0 + cfg.intensity_jitter * rng.standard_normal((m, 1))
        lam = np.clip(scale, 0.05, None) * (cfg.background_counts * background + cfg.peak_counts * peaks)
        spectra[c * m:(c + 1) * m] = rng.poisson(lam) if cfg.noise else lam
    return LabeledDataset(spectra, labels, k)


def save_dataset(d: LabeledDataset, path) -> None:
    """Write ``label,c0,...,c{N-1}`` CSV; values use round-trip float text."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"c{i}" for i in range(d.channel_count)])
        for label, row in zip(d.labels.tolist(), d.spectra.tolist()):
            w.writerow([label] + [repr(v) for v in row])


def load_dataset(path, class_count: int | None = None) -> LabeledDataset:
    """Read a dataset CSV written by :func:`save_dataset`.

    ``class_count`` defaults to the largest label present. Errors carry the
    1-based line number of the offending row.
    """
    path = Path(path)
    labels, rows = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError(f"{path}: no samples")
        if not header or header[0].strip() != "label" or len(header) < 2:
            raise DatasetError(f"{path}:1: header must be 'label,c0,...'")
        width = len(header) - 1
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width + 1:
                raise DatasetError(
                    f"{path}:{lineno}: expected {width} channel values, got {len(rec) - 1}"
                )
            try:
                label = int(rec[0])
                values = [float(v) for v in rec[1:]]
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed row ({exc})") from None
            if label < 1 or (class_count is not None and label > class_count):
                raise DatasetError(f"{path}:{lineno}: unknown label {label}")
            labels.append(label)
            rows.append(values)
    if not rows:
        raise DatasetError(f"{path}: no samples")
    k = class_count if class_count is not None else max(labels)
    return LabeledDataset(np.array(rows), np.array(labels), k)
