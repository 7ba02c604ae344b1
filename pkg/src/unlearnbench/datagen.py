"""Synthetic speaker-clustered intent data and speaker-level forget splits.

Each sample is ``x = prototype[y] + leakage * offset[s] + noise``: the intent
prototype carries the task signal, the per-speaker offset is a fixed
identity fingerprint a model can memorise, and the noise is i.i.d. Gaussian.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional

import numpy as np

from .errors import ConfigError, ConsistencyError, InfeasibleForgetRequest

DATASET_FORMAT = "unlearnbench.dataset"
DATASET_VERSION = 1


class Sample(NamedTuple):
    x: np.ndarray
    y: int
    s: int


class SampleSet:
    """Column-oriented collection of samples.

    Feature and label access goes through the ``X``/``y``/``s`` properties so
    an instrumented subclass can audit which sets an algorithm actually reads.
    """

    def __init__(self, X, y, s):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ConfigError("features must be a 2-D array")
        self._X = X
        self._y = np.asarray(y, dtype=np.int64)
        self._s = np.asarray(s, dtype=np.int64)
        if not (len(self._X) == len(self._y) == len(self._s)):
            raise ConfigError("features, labels and speakers must have equal length")
        for a in (self._X, self._y, self._s):
            a.flags.writeable = False

    @classmethod
    def empty(cls, d):
        return cls(np.zeros((0, d)), np.zeros(0, np.int64), np.zeros(0, np.int64))

    @classmethod
    def from_samples(cls, samples, d=None):
        samples = list(samples)
        if not samples:
            if d is None:
                raise ConfigError("need a feature dim to build an empty set")
            return cls.empty(d)
        return cls(np.stack([s.x for s in samples]), [s.y for s in samples], [s.s for s in samples])

    @property
    def X(self):
        return self._X

    @property
    def y(self):
        return self._y

    @property
    def s(self):
        return self._s

    @property
    def dim(self):
        return self._X.shape[1]

    def __len__(self):
        return len(self._y)

    def __iter__(self) -> Iterator[Sample]:
        for x, y, s in zip(self.X, self.y, self.s):
            yield Sample(x, int(y), int(s))

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(self.X[idx], self.y[idx], self.s[idx])

    def concat(self, other):
        return SampleSet(np.vstack([self.X, other.X]), np.concatenate([self.y, other.y]),
                         np.concatenate([self.s, other.s]))

    def speakers(self):
        return set(np.unique(self.s).tolist())

    def equals(self, other):
        return (np.array_equal(self.X, other.X) and np.array_equal(self.y, other.y)
                and np.array_equal(self.s, other.s))


@dataclass(frozen=True)
class GenConfig:
    d: int = 32
    n_classes: int = 12
    n_speakers: int = 40
    n_test_speakers: int = 8
    n_train: int = 5000
    n_test: int = 1000
    samples_per_speaker: tuple = (80, 160)
    leakage: float = 0.8
    noise: float = 1.0
    prototype_scale: float = 0.6
    seed: int = 0

    def validate(self):
        if self.d < 2:
            raise ConfigError("feature dim d must be at least 2")
        for name in ("n_classes", "n_speakers", "n_test_speakers", "n_train", "n_test"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_classes < 2:
            raise ConfigError("need at least 2 intent classes")
        lo, hi = self.samples_per_speaker
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad samples_per_speaker range {self.samples_per_speaker}")
        if not (self.n_speakers * lo <= self.n_train <= self.n_speakers * hi):
            raise ConfigError("n_train is unreachable with the per-speaker sample range")
        if self.n_train < self.n_classes or self.n_test < self.n_classes:
            raise ConfigError("each split needs at least one sample per class")
        if not (np.isfinite(self.leakage) and self.leakage >= 0):
            raise ConfigError("leakage must be finite and >= 0")
        if not (np.isfinite(self.noise) and self.noise > 0):
            raise ConfigError("noise must be finite and > 0")
        if not (np.isfinite(self.prototype_scale) and self.prototype_scale > 0):
            raise ConfigError("prototype_scale must be finite and > 0")

    def to_dict(self):
        out = asdict(self)
        out["samples_per_speaker"] = list(self.samples_per_speaker)
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "samples_per_speaker" in data:
            data["samples_per_speaker"] = tuple(data["samples_per_speaker"])
        return cls(**data)

    def replace(self, **changes):
        out = self.to_dict()
        out.update(changes)
        return GenConfig.from_dict(out)


@dataclass(frozen=True)
class DatasetBundle:
    train: SampleSet
    test: SampleSet
    config: GenConfig
    speakers: dict = field(default_factory=dict)  # train speaker id -> sample count

    @property
    def seed(self):
        return self.config.seed

    def equals(self, other):
        return self.config == other.config and self.train.equals(other.train) and self.test.equals(other.test)


@dataclass(frozen=True)
class ForgetRequest:
    speakers: frozenset
    fraction: float


def _speaker_counts(rng, n_speakers, total, lo, hi):
    # hit the exact total by nudging random speakers within [lo, hi]
    counts = rng.integers(lo, hi + 1, size=n_speakers)
    while counts.sum() != total:
        i = rng.integers(n_speakers)
        if counts.sum() < total and counts[i] < hi:
            counts[i] += 1
        elif counts.sum() > total and counts[i] > lo:
            counts[i] -= 1
    return counts


def _labels_covering(rng, n, n_classes):
    # uniform labels, then patch so every class occurs at least once
    y = rng.integers(n_classes, size=n)
    missing = np.setdiff1d(np.arange(n_classes), y)
    if missing.size:
        slots = rng.choice(n, size=missing.size, replace=False)
        y[slots] = missing
    return y


def generate(cfg: GenConfig) -> DatasetBundle:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    prototypes = rng.normal(0.0, cfg.prototype_scale, size=(cfg.n_classes, cfg.d))
    n_total_speakers = cfg.n_speakers + cfg.n_test_speakers
    offsets = rng.normal(0.0, 1.0, size=(n_total_speakers, cfg.d))

    lo, hi = cfg.samples_per_speaker
    train_counts = _speaker_counts(rng, cfg.n_speakers, cfg.n_train, lo, hi)
    test_counts = _split_evenly(cfg.n_test, cfg.n_test_speakers)

    def build(speaker_ids, counts):
        s = np.repeat(speaker_ids, counts)
        y = _labels_covering(rng, len(s), cfg.n_classes)
        eps = rng.normal(0.0, cfg.noise, size=(len(s), cfg.d))
        X = prototypes[y] + cfg.leakage * offsets[s] + eps
        return SampleSet(X, y, s)

    train = build(np.arange(cfg.n_speakers), train_counts)
    test = build(np.arange(cfg.n_speakers, n_total_speakers), test_counts)
    speakers = {int(k): int(c) for k, c in zip(range(cfg.n_speakers), train_counts)}
    return DatasetBundle(train, test, cfg, speakers)


def _split_evenly(total, parts):
    base, extra = divmod(total, parts)
    return np.array([base + (i < extra) for i in range(parts)])


def _reachable_sums(counts, limit):
    """Subset-sum table: parent[t] = (previous total, speaker index) for every reachable t."""
    parent = {0: None}
    for i, c in enumerate(counts):
        for t in sorted(parent, reverse=True):
            u = t + c
            if u <= limit and u not in parent:
                parent[u] = (t, i)
    return parent


def select_forget_speakers(bundle, min_samples=100, band=(0.025, 0.05), seed=0) -> ForgetRequest:
    """Randomly accumulate eligible speakers until the forget fraction lands in ``band``."""
    lo, hi = band
    if not 0 <= lo <= hi <= 1:
        raise ConfigError(f"bad fraction band {band}")
    n = len(bundle.train)
    counts = bundle.speakers or {int(k): int(v) for k, v in zip(*np.unique(bundle.train.s, return_counts=True))}
    eligible = sorted(k for k, c in counts.items() if c >= min_samples)
    if not eligible:
        raise InfeasibleForgetRequest(f"no speaker has at least {min_samples} samples", closest_fraction=None)

    rng = np.random.default_rng(seed)
    for _ in range(64):
        chosen, total = [], 0
        for spk in rng.permutation(eligible):
            c = counts[int(spk)]
            if (total + c) / n <= hi:
                chosen.append(int(spk))
                total += c
            if total / n >= lo:
                return ForgetRequest(frozenset(chosen), total / n)

    # random passes failed: settle feasibility exactly
    parent = _reachable_sums([counts[k] for k in eligible], n)
    feasible = [t for t in parent if t > 0 and lo <= t / n <= hi]
    if not feasible:
        reachable = [t / n for t in parent if t > 0]
        closest = min(reachable, key=lambda f: min(abs(f - lo), abs(f - hi)))
        raise InfeasibleForgetRequest(
            f"no subset of eligible speakers gives a forget fraction in [{lo}, {hi}]; "
            f"closest achievable is {closest:.4f}",
            closest_fraction=closest,
        )
    t = feasible[rng.integers(len(feasible))]
    chosen = []
    while parent[t] is not None:
        t, i = parent[t]
        chosen.append(eligible[i])
    total = sum(counts[k] for k in chosen)
    return ForgetRequest(frozenset(chosen), total / n)


def split(bundle, request):
    """Materialise (retain, forget) from the train split."""
    train = bundle.train
    unknown = set(request.speakers) - train.speakers()
    if unknown:
        raise ConsistencyError(f"forget request names speakers not in train: {sorted(unknown)}")
    in_forget = np.isin(train.s, np.fromiter(request.speakers, dtype=np.int64, count=len(request.speakers)))
    return train.subset(np.flatnonzero(~in_forget)), train.subset(np.flatnonzero(in_forget))


def export_bundle(bundle, csv_path, request: Optional[ForgetRequest] = None):
    """Write one delimited file (train rows, then test rows) plus a JSON sidecar."""
    csv_path = Path(csv_path)
    d = bundle.config.d
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x_{i}" for i in range(d)] + ["y", "s"])
        for part in (bundle.train, bundle.test):
            for x, y, s in zip(part.X, part.y, part.s):
                w.writerow([repr(float(v)) for v in x] + [int(y), int(s)])
    n_train = len(bundle.train)
    meta = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "gen_config": bundle.config.to_dict(),
        "seed": bundle.seed,
        "splits": {"train": [0, n_train], "test": [n_train, n_train + len(bundle.test)]},
        "speakers": {str(k): v for k, v in sorted(bundle.speakers.items())},
    }
    if request is not None:
        meta["forget_speakers"] = sorted(request.speakers)
        meta["forget_fraction"] = request.fraction
    sidecar = csv_path.with_suffix(".meta.json")
    sidecar.write_text(json.dumps(meta, indent=2))
    return csv_path, sidecar


def import_bundle(csv_path):
    """Inverse of :func:`export_bundle`; returns ``(bundle, request_or_None)``."""
    csv_path = Path(csv_path)
    meta = json.loads(csv_path.with_suffix(".meta.json").read_text())
    if meta.get("format") != DATASET_FORMAT:
        raise ConfigError(f"{csv_path} sidecar is not a dataset description")
    cfg = GenConfig.from_dict(meta["gen_config"])
    with csv_path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, rows = rows[0], rows[1:]
    if header != [f"x_{i}" for i in range(cfg.d)] + ["y", "s"]:
        raise ConfigError("dataset header does not match its metadata")
    X = np.array([[float(v) for v in r[:-2]] for r in rows]).reshape(len(rows), cfg.d)
    y = np.array([int(r[-2]) for r in rows], dtype=np.int64)
    s = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    a, b = meta["splits"]["train"]
    c, e = meta["splits"]["test"]
    bundle = DatasetBundle(SampleSet(X[a:b], y[a:b], s[a:b]), SampleSet(X[c:e], y[c:e], s[c:e]), cfg,
                           {int(k): int(v) for k, v in meta["speakers"].items()})
    request = None
    if "forget_speakers" in meta:
        request = ForgetRequest(frozenset(meta["forget_speakers"]), meta["forget_fraction"])
    return bundle, request
