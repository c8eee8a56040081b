"""Per-RE candidate features, genie labels, MIFS ranking and the dataset file.

Feature columns (all computed from y/sigma and H/sigma):

    g1 |r22|^2                          g5 ||h1||^2 + ||h2||^2
    g2 |y^* h1|^2 / |y^* h2|^2          g6 |r11|^2
    g3 lambda_min(H^* H)                g7 |r12|^2
    g4 lambda_max(H^* H)
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .detectors import N_DETECTORS, hard_decisions, run_detector
from .modem import Constellation
from .numerics import det_2x2, qr_decompose_2x2

FEATURE_NAMES = ("g1", "g2", "g3", "g4", "g5", "g6", "g7")
N_FEATURES = len(FEATURE_NAMES)

G2_DENOM_FLOOR = 1e-30
G2_CLAMP = 1e12

FORMAT_VERSION = 1
CSV_COLUMNS = (
    ("block", "re", "snr_db")
    + FEATURE_NAMES
    + ("z",)
    + tuple(f"d{d}" for d in range(1, N_DETECTORS + 1))
)


class DatasetFormatError(ValueError):
    pass


def extract_features(y, H, sigma2) -> np.ndarray:
    """Seven features per RE; shape (N, 7), or (7,) for a single RE."""
    y = np.asarray(y, dtype=np.complex128)
    H = np.asarray(H, dtype=np.complex128)
    single = y.ndim == 1
    if single:
        y, H = y[None], H[None]
    s2 = np.broadcast_to(np.asarray(sigma2, dtype=float), y.shape[:1])
    if np.any(s2 <= 0):
        raise ValueError("sigma2 must be positive")
    sigma = np.sqrt(s2)
    yb = y / sigma[:, None]
    Hb = H / sigma[:, None, None]

    _, R = qr_decompose_2x2(Hb)
    r11 = np.abs(R[:, 0, 0]) ** 2
    r12 = np.abs(R[:, 0, 1]) ** 2
    r22 = np.abs(R[:, 1, 1]) ** 2

    c1 = np.abs(np.sum(yb.conj() * Hb[:, :, 0], axis=1)) ** 2
    c2 = np.abs(np.sum(yb.conj() * Hb[:, :, 1], axis=1)) ** 2
    small = c2 < G2_DENOM_FLOOR
    g2 = np.where(small, G2_CLAMP, c1 / np.where(small, 1.0, c2))

    power = np.sum(np.abs(Hb) ** 2, axis=(1, 2))
    a = np.sum(np.abs(Hb[:, :, 0]) ** 2, axis=1)
    d = np.sum(np.abs(Hb[:, :, 1]) ** 2, axis=1)
    b = np.abs(np.sum(Hb[:, :, 0].conj() * Hb[:, :, 1], axis=1))
    # eigenvalues of the Gram matrix; lambda_min via det/lambda_max keeps
    # relative precision for ill-conditioned channels
    lam_max = 0.5 * (a + d) + np.hypot(0.5 * (a - d), b)
    detg = np.abs(det_2x2(Hb)) ** 2
    lam_min = np.where(lam_max > 0, detg / np.where(lam_max > 0, lam_max, 1.0), 0.0)

    F = np.stack([r22, g2, lam_min, lam_max, power, r11, r12], axis=1)
    return F[0] if single else F


def detector_correctness(y, H, sigma2, true_bits, c: Constellation) -> np.ndarray:
    """(N, 5) bool: detector d reproduces all 2M transmitted bits of the RE."""
    true_bits = np.asarray(true_bits)
    if true_bits.shape[-2:] != (2, c.M):
        raise ValueError(f"true bits must be (..., 2, {c.M})")
    flags = []
    for d in range(1, N_DETECTORS + 1):
        hb = hard_decisions(run_detector(d, y, H, sigma2, c))
        flags.append(np.all(hb == true_bits, axis=(-2, -1)))
    return np.stack(flags, axis=-1)


def label_from_flags(flags) -> np.ndarray:
    """Smallest correct detector index (1..5), or 0 when DR-ML itself errs."""
    flags = np.asarray(flags, dtype=bool)
    z = np.argmax(flags, axis=-1) + 1
    return np.where(flags[..., -1], z, 0)


def generate_label(y, H, sigma2, true_bits, c: Constellation):
    """Genie label(s) and correctness flags.

    Returns ``(z, flags)``; ``z == 0`` marks an RE where DR-ML is wrong,
    which is excluded from training data. For a single RE, ``z`` is ``None``
    in that case.
    """
    flags = detector_correctness(y, H, sigma2, true_bits, c)
    z = label_from_flags(flags)
    if np.ndim(z) == 0:
        return (int(z) if z else None), flags
    return z, flags


class LabeledSample(NamedTuple):
    block: int
    re: int
    snr_db: float
    features: np.ndarray
    z: int
    flags: np.ndarray


@dataclass
class Dataset:
    """Column-oriented collection of labeled REs."""

    block: np.ndarray
    re: np.ndarray
    snr_db: np.ndarray
    features: np.ndarray
    z: np.ndarray
    flags: np.ndarray

    def __post_init__(self):
        self.block = np.asarray(self.block, dtype=np.int64).reshape(-1)
        self.re = np.asarray(self.re, dtype=np.int64).reshape(-1)
        self.snr_db = np.asarray(self.snr_db, dtype=float).reshape(-1)
        self.features = np.asarray(self.features, dtype=float).reshape(-1, N_FEATURES)
        self.z = np.asarray(self.z, dtype=np.int64).reshape(-1)
        self.flags = np.asarray(self.flags, dtype=bool).reshape(-1, N_DETECTORS)
        n = len(self.z)
        for name in ("block", "re", "snr_db", "features", "flags"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has {len(getattr(self, name))} rows, expected {n}")

    def __len__(self) -> int:
        return len(self.z)

    def __getitem__(self, i) -> LabeledSample:
        return LabeledSample(int(self.block[i]), int(self.re[i]), float(self.snr_db[i]),
                             self.features[i], int(self.z[i]), self.flags[i])

    @classmethod
    def empty(cls) -> "Dataset":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros((0, N_FEATURES)),
                   np.zeros(0), np.zeros((0, N_DETECTORS)))

    @classmethod
    def concatenate(cls, parts) -> "Dataset":
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                     ("block", "re", "snr_db", "features", "z", "flags")))

    def subset(self, idx) -> "Dataset":
        return Dataset(self.block[idx], self.re[idx], self.snr_db[idx],
                       self.features[idx], self.z[idx], self.flags[idx])

    def with_labels(self, z) -> "Dataset":
        return Dataset(self.block, self.re, self.snr_db, self.features, z, self.flags)

    def class_counts(self, n_classes: int = N_DETECTORS) -> np.ndarray:
        return np.bincount(self.z, minlength=n_classes + 1)[1:n_classes + 1]

    def equals(self, other: "Dataset") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in
                   ("block", "re", "snr_db", "features", "z", "flags"))


# ----------------------------------------------------------------------------
# Mutual information feature selection


def equal_frequency_bins(x, bins: int) -> np.ndarray:
    """Bin codes from empirical quantile edges; equal values share a bin."""
    x = np.asarray(x, dtype=float)
    edges = np.unique(np.quantile(x, np.linspace(0.0, 1.0, bins + 1)[1:-1]))
    return np.searchsorted(edges, x, side="right")


def mutual_information(a, b) -> float:
    """Plug-in mutual information (bits) between two discrete code arrays."""
    a = np.asarray(a)
    b = np.asarray(b)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    na, nb = ai.max() + 1, bi.max() + 1
    joint = np.bincount(ai * nb + bi, minlength=na * nb).reshape(na, nb).astype(float)
    p = joint / joint.sum()
    pa = p.sum(axis=1, keepdims=True)
    pb = p.sum(axis=0, keepdims=True)
    nz = p > 0
    mi = float(np.sum(p[nz] * np.log2(p[nz] / (pa @ pb)[nz])))
    return max(mi, 0.0)


@dataclass
class FeatureRanking:
    order: list            # feature column indices, most important first
    relevance: np.ndarray  # I(z; g_i) in bits, indexed by column
    names: tuple = FEATURE_NAMES

    @property
    def ranked_names(self) -> list:
        return [self.names[i] for i in self.order]

    def top(self, k: int) -> list:
        return sorted(self.order[:k])


def mifs_rank(features, z, beta: float = 0.5, bins: int = 32) -> FeatureRanking:
    """Greedy MIFS ranking: repeatedly pick the feature maximizing
    I(z; g) - beta * sum over already-picked s of I(g; g_s).

    Constant features carry no information and are appended last.
    """
    if isinstance(features, Dataset):
        features, z = features.features, features.z
    features = np.asarray(features, dtype=float)
    z = np.asarray(z)
    if features.shape[0] == 0:
        raise ValueError("cannot rank features of an empty dataset")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    F = features.shape[1]
    codes = [equal_frequency_bins(features[:, i], bins) for i in range(F)]
    const = [bool(np.all(features[:, i] == features[0, i])) for i in range(F)]
    relevance = np.array([0.0 if const[i] else mutual_information(z, codes[i]) for i in range(F)])

    remaining = [i for i in range(F) if not const[i]]
    order: list = []
    redundancy = np.zeros(F)
    while remaining:
        scores = [relevance[i] - beta * redundancy[i] for i in remaining]
        best = remaining[int(np.argmax(scores))]
        order.append(best)
        remaining.remove(best)
        for i in remaining:
            redundancy[i] += mutual_information(codes[i], codes[best])
    order += [i for i in range(F) if const[i]]
    return FeatureRanking(order=order, relevance=relevance)


# ----------------------------------------------------------------------------
# Training-set preprocessing


def resample_and_merge(ds: Dataset, n_max: int = 20_000, merge_from: int = 3,
                       merge_to: int = 4, seed=0) -> Dataset:
    """Relabel ``merge_from`` as ``merge_to``, then cap every class at n_max
    by uniform sampling without replacement (original order preserved)."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    z = np.where(ds.z == merge_from, merge_to, ds.z)
    rng = np.random.default_rng(seed)
    keep = []
    for d in np.unique(z):
        idx = np.flatnonzero(z == d)
        if len(idx) > n_max:
            idx = np.sort(rng.choice(idx, size=n_max, replace=False))
        keep.append(idx)
    keep = np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)
    return ds.with_labels(z).subset(keep)


@dataclass
class Scaler:
    """Selected-feature transform: optional log10 compression, then z-score."""

    selected: list
    mean: np.ndarray
    std: np.ndarray
    log: bool = True

    def _raw(self, features) -> np.ndarray:
        X = np.asarray(features, dtype=float)[..., self.selected]
        return np.log10(np.maximum(X, 1e-300)) if self.log else X

    def transform(self, features) -> np.ndarray:
        """Map full (..., 7) feature rows to standardized (..., k) inputs."""
        return (self._raw(features) - self.mean) / self.std


def standardize(ds, selected, log: bool = True):
    """Fit a Scaler on the selected columns; returns (scaler, standardized inputs)."""
    features = ds.features if isinstance(ds, Dataset) else np.asarray(ds, dtype=float)
    selected = [int(i) for i in selected]
    probe = Scaler(selected, np.zeros(len(selected)), np.ones(len(selected)), log)
    X = probe._raw(features)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    for j, i in enumerate(selected):
        if not std[j] > 0:
            raise ValueError(f"feature {FEATURE_NAMES[i]} has zero variance")
    scaler = Scaler(selected, mean, std, log)
    return scaler, scaler.transform(features)


# ----------------------------------------------------------------------------
# CSV file format


def _fmt(x: float) -> str:
    return repr(float(x))


def dataset_to_text(ds: Dataset) -> str:
    buf = io.StringIO()
    buf.write(f"#version={FORMAT_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for i in range(len(ds)):
        w.writerow([int(ds.block[i]), int(ds.re[i]), _fmt(ds.snr_db[i])]
                   + [_fmt(v) for v in ds.features[i]]
                   + [int(ds.z[i])] + [int(f) for f in ds.flags[i]])
    return buf.getvalue()


def write_dataset(path, ds: Dataset) -> None:
    Path(path).write_text(dataset_to_text(ds), encoding="utf-8")


def dataset_from_text(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError("line 1: empty file, expected '#version=1' header")
    if lines[0].strip() != f"#version={FORMAT_VERSION}":
        raise DatasetFormatError(f"line 1: unsupported version header {lines[0]!r}")
    if len(lines) < 2 or tuple(lines[1].split(",")) != CSV_COLUMNS:
        raise DatasetFormatError("line 2: column header does not match the version-1 layout")
    rows = []
    ncol = len(CSV_COLUMNS)
    for lineno, row in enumerate(csv.reader(lines[2:]), start=3):
        if len(row) != ncol:
            raise DatasetFormatError(f"line {lineno}: expected {ncol} fields, got {len(row)}")
        try:
            rec = ([int(row[0]), int(row[1]), float(row[2])]
                   + [float(v) for v in row[3:10]]
                   + [int(row[10])] + [int(v) for v in row[11:]])
        except ValueError as exc:
            raise DatasetFormatError(f"line {lineno}: {exc}") from None
        if not 1 <= rec[10] <= N_DETECTORS or any(f not in (0, 1) for f in rec[11:]):
            raise DatasetFormatError(f"line {lineno}: label or flag out of range")
        rows.append(rec)
    if not rows:
        return Dataset.empty()
    a = np.array(rows, dtype=object)
    return Dataset(
        block=a[:, 0].astype(np.int64), re=a[:, 1].astype(np.int64), snr_db=a[:, 2].astype(float),
        features=a[:, 3:10].astype(float), z=a[:, 10].astype(np.int64), flags=a[:, 11:].astype(bool),
    )


def read_dataset(path) -> Dataset:
    return dataset_from_text(Path(path).read_text(encoding="utf-8"))
