"""Shaping ECG signals for classification.

Covers heartbeat windows around annotations, fixed-length cropping and
padding, zero-fill augmentation, split bookkeeping and the synthetic
two-class task used to exercise the training loop.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import EcgraphError
from .records import SignalRecord, atomic_write, read_signal


class DatasetError(EcgraphError, ValueError):
    pass


class EmptySignal(DatasetError):
    pass


class AnnotationError(DatasetError):
    pass


SPLITS = ("train", "test")
AAMI_CLASSES = ("N", "S", "V", "F", "Q")

# MIT-BIH beat symbols grouped into the five AAMI heartbeat classes.
AAMI_MAP = {
    "N": "N", "L": "N", "R": "N", "e": "N", "j": "N",
    "A": "S", "a": "S", "J": "S", "S": "S",
    "V": "V", "E": "V",
    "F": "F",
    "/": "Q", "f": "Q", "Q": "Q",
}

# Published MIT-BIH beat totals per AAMI class and the held-out test supports.
MITBIH_BEAT_COUNTS = {"N": 88521, "S": 2769, "V": 7186, "F": 798, "Q": 3894}
MITBIH_TEST_SUPPORTS = {"N": 8803, "S": 282, "V": 764, "F": 73, "Q": 394}


@dataclass
class LabeledRecord:
    signal: SignalRecord
    label: int
    split: str = "train"

    def __post_init__(self):
        if self.signal.length_samples == 0:
            raise EmptySignal("labeled record has no samples")
        if self.label < 0:
            raise DatasetError(f"label must be >= 0, got {self.label}")
        if self.split not in SPLITS:
            raise DatasetError(f"split must be one of {SPLITS}, got {self.split!r}")


@dataclass
class DatasetManifest:
    class_names: list[str]
    counts: dict[str, dict[str, int]]
    sample_rate_hz: float
    record_length: int
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.class_names)) != len(self.class_names):
            raise DatasetError(f"class names must be unique: {self.class_names}")
        for split, per_class in self.counts.items():
            if any(v < 0 for v in per_class.values()):
                raise DatasetError(f"negative count in split {split}")

    def total(self, split: str | None = None) -> int:
        splits = [split] if split else list(self.counts)
        return sum(sum(self.counts[s].values()) for s in splits)


def build_manifest(records: list[LabeledRecord], class_names: list[str], **extra) -> DatasetManifest:
    for r in records:
        if r.label >= len(class_names):
            raise DatasetError(f"label {r.label} has no class name")
    counts = {s: {c: 0 for c in class_names} for s in SPLITS}
    for r in records:
        counts[r.split][class_names[r.label]] += 1
    counts = {s: c for s, c in counts.items() if sum(c.values()) or s == "train"}
    first = records[0].signal if records else None
    return DatasetManifest(list(class_names), counts,
                           first.sample_rate_hz if first else 0.0,
                           first.length_samples if first else 0, dict(extra))


def write_manifest(m: DatasetManifest, path) -> None:
    atomic_write(path, json.dumps(asdict(m), indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> DatasetManifest:
    return DatasetManifest(**json.loads(Path(path).read_text()))


# -- shaping -------------------------------------------------------------------

def segment_heartbeats(long_signal: SignalRecord, annotation_positions, window: int = 200,
                       labels=None, split: str = "train") -> list[LabeledRecord]:
    """One `window`-sample segment per annotation.

    The segment for an annotation at sample p covers [p - window//2,
    p - window//2 + window); samples beyond the record edges are zero.
    """
    n = long_signal.length_samples
    if n == 0:
        raise EmptySignal("cannot segment an empty signal")
    if window < 1:
        raise DatasetError(f"window must be >= 1, got {window}")
    pos = np.asarray(annotation_positions, dtype=np.int64).reshape(-1)
    if pos.size and (np.any(np.diff(pos) < 0) or pos[0] < 0 or pos[-1] >= n):
        raise AnnotationError("annotations must be sorted and lie inside the record")
    labels = np.zeros(pos.size, dtype=np.int64) if labels is None else np.asarray(labels)
    if labels.size != pos.size:
        raise AnnotationError(f"{pos.size} annotations but {labels.size} labels")
    data = long_signal.as_array()
    half = window // 2
    padded = np.pad(data, ((half, window), (0, 0)))
    out = []
    for p, lab in zip(pos, labels):
        seg = padded[p:p + window]
        leads = {k: seg[:, i].copy() for i, k in enumerate(long_signal.lead_ids)}
        out.append(LabeledRecord(long_signal.with_leads(leads), int(lab), split))
    return out


CROP_MODES = ("head-crop", "zero-extend")


def crop_or_pad(rec: SignalRecord, target: int, mode: str = "head-crop") -> SignalRecord:
    """Bring a record to exactly `target` samples.

    "head-crop" is meant for records at least `target` long and keeps the
    first `target` samples; "zero-extend" is meant for shorter records and
    appends zeros. Either mode handles the other case the same way (crop
    the tail, pad with zeros), so the output length is always `target`.
    """
    if target < 1:
        raise DatasetError(f"target must be > 0, got {target}")
    if mode not in CROP_MODES:
        raise DatasetError(f"mode must be one of {CROP_MODES}, got {mode!r}")
    n = rec.length_samples
    leads = {}
    for k, v in rec.leads.items():
        leads[k] = v[:target].copy() if n >= target else np.concatenate([v, np.zeros(target - n)])
    return rec.with_leads(leads)


def augment_zero_fill(rec: SignalRecord, n_copies: int, rng_seed: int,
                      min_fraction: float = 0.5, max_fraction: float = 1.0) -> list[SignalRecord]:
    """Copies that keep one random contiguous interval and zero the rest.

    The kept length is uniform over the integers in
    [ceil(min_fraction * n), floor(max_fraction * n)]; the same interval is
    applied to every lead of a copy.
    """
    if n_copies < 1:
        raise DatasetError(f"n_copies must be >= 1, got {n_copies}")
    if not 0.0 < min_fraction <= max_fraction <= 1.0:
        raise DatasetError("need 0 < min_fraction <= max_fraction <= 1")
    n = rec.length_samples
    rng = np.random.default_rng(rng_seed)
    lo = max(1, int(np.ceil(min_fraction * n)))
    hi = max(lo, int(np.floor(max_fraction * n)))
    out = []
    for _ in range(n_copies):
        keep = int(rng.integers(lo, hi + 1))
        start = int(rng.integers(0, n - keep + 1))
        mask = np.zeros(n)
        mask[start:start + keep] = 1.0
        out.append(rec.with_leads({k: v * mask for k, v in rec.leads.items()}))
    return out


def kept_interval(original: SignalRecord, copy: SignalRecord) -> tuple[int, int]:
    """The [start, stop) span where `copy` may differ from zero."""
    any_nz = np.zeros(original.length_samples, dtype=bool)
    for k in original.lead_ids:
        any_nz |= copy.leads[k] != 0
    idx = np.flatnonzero(any_nz)
    return (int(idx[0]), int(idx[-1]) + 1) if idx.size else (0, 0)


# -- synthetic task ------------------------------------------------------------

def synthetic_task(n_per_class: int, length: int = 200, rng_seed: int = 0,
                   sample_rate_hz: float = 360.0) -> tuple[list[LabeledRecord], DatasetManifest]:
    """Two-class waveforms separable by spike energy.

    Class 0 is a low-frequency sine of amplitude at most 1 plus uniform
    noise in [-0.1, 0.1], so its magnitude never exceeds 1.1. Class 1 adds
    periodic one-sample spikes of height 5 to 6 on top of the same kind of
    signal, so each spike sample is at least 3.9 in magnitude.
    """
    if n_per_class < 1:
        raise DatasetError(f"n_per_class must be >= 1, got {n_per_class}")
    if length < 2:
        raise DatasetError(f"length must be >= 2, got {length}")
    rng = np.random.default_rng(rng_seed)
    t = np.arange(length)
    records = []
    for label in (0, 1):
        for _ in range(n_per_class):
            cycles = rng.uniform(0.5, 3.0)
            x = rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * cycles * t / length + rng.uniform(0, 2 * np.pi))
            x += rng.uniform(-0.1, 0.1, length)
            if label == 1:
                period = int(rng.integers(20, 51))
                offset = int(rng.integers(0, min(period, length)))
                spikes = np.arange(offset, length, period)
                x[spikes] += rng.uniform(5.0, 6.0, spikes.size)
            records.append(LabeledRecord(SignalRecord({"II": x}, sample_rate_hz), label))
    manifest = build_manifest(records, ["smooth", "spiky"], rng_seed=rng_seed)
    return records, manifest


def to_arrays(records: list[LabeledRecord], leads=None) -> tuple[np.ndarray, np.ndarray]:
    """Stack records into inputs (N, T, leads) and labels (N,)."""
    if not records:
        raise DatasetError("no records to stack")
    x = np.stack([r.signal.as_array(leads) for r in records])
    y = np.array([r.label for r in records], dtype=np.int64)
    return x, y


def split_indices(labels, test_fraction: float, rng_seed: int = 0, mode: str = "stratified",
                  groups=None) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/test index split.

    "stratified" draws the test share from each class separately; "record"
    keeps every group (for example a source recording) on one side.
    """
    labels = np.asarray(labels)
    if not 0.0 < test_fraction < 1.0:
        raise DatasetError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(rng_seed)
    test = []
    if mode == "stratified":
        for c in np.unique(labels):
            idx = rng.permutation(np.flatnonzero(labels == c))
            test.extend(idx[:int(round(test_fraction * idx.size))])
    elif mode == "record":
        if groups is None:
            raise DatasetError("record mode needs groups")
        groups = np.asarray(groups)
        names = rng.permutation(np.unique(groups))
        chosen = names[:max(1, int(round(test_fraction * names.size)))]
        test.extend(np.flatnonzero(np.isin(groups, chosen)))
    else:
        raise DatasetError(f"unknown split mode {mode!r}")
    is_test = np.zeros(labels.size, dtype=bool)
    is_test[np.asarray(test, dtype=np.int64)] = True
    return np.flatnonzero(~is_test), np.flatnonzero(is_test)


# -- MIT-BIH via intermediate CSV ----------------------------------------------

def read_annotations_csv(path) -> tuple[np.ndarray, list[str]]:
    """Annotation file with header `sample,symbol`."""
    samples, symbols = [], []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            samples.append(int(row["sample"]))
            symbols.append(row["symbol"])
    return np.array(samples, dtype=np.int64), symbols


def segment_aami(rec: SignalRecord, samples, symbols, window: int = 200) -> list[LabeledRecord]:
    """Segment the beats whose symbols map to an AAMI class; others are skipped."""
    keep = [(int(s), AAMI_CLASSES.index(AAMI_MAP[y])) for s, y in zip(samples, symbols)
            if y in AAMI_MAP and 0 <= s < rec.length_samples]
    if not keep:
        return []
    pos, lab = zip(*keep)
    return segment_heartbeats(rec, pos, window, lab)


def mitbih_counts(directory, window: int = 200) -> dict[str, int]:
    """AAMI beat counts over every `<name>.csv` + `<name>.ann.csv` pair in a directory."""
    totals = dict.fromkeys(AAMI_CLASSES, 0)
    for ann in sorted(Path(directory).glob("*.ann.csv")):
        rec = read_signal(ann.with_name(ann.name[:-len(".ann.csv")] + ".csv"))
        samples, symbols = read_annotations_csv(ann)
        for r in segment_aami(rec, samples, symbols, window):
            totals[AAMI_CLASSES[r.label]] += 1
    return totals
