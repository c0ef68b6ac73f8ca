import hashlib
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ecgraph.datasets import (AAMI_CLASSES, MITBIH_BEAT_COUNTS, AnnotationError, DatasetError,
                              DatasetManifest, EmptySignal, LabeledRecord, augment_zero_fill,
                              build_manifest, crop_or_pad, kept_interval, mitbih_counts,
                              read_manifest, segment_aami, segment_heartbeats, split_indices,
                              synthetic_task, to_arrays, write_manifest)
from ecgraph.records import SignalRecord, write_signal


def ramp(n, leads=("II",)):
    return SignalRecord({k: np.arange(1, n + 1, dtype=float) * (i + 1) for i, k in enumerate(leads)},
                        360.0)


def test_centered_segment():
    segs = segment_heartbeats(ramp(1000), [500], 200)
    assert len(segs) == 1
    assert np.array_equal(segs[0].signal.leads["II"], np.arange(401, 601, dtype=float))


def test_left_edge_is_zero_padded():
    seg = segment_heartbeats(ramp(1000), [10], 200)[0].signal.leads["II"]
    assert np.all(seg[:90] == 0)
    assert seg[90] == 1.0 and seg.size == 200


def test_right_edge_is_zero_padded():
    seg = segment_heartbeats(ramp(50), [45], 20)[0].signal.leads["II"]
    assert seg.tolist() == list(range(36, 51)) + [0.0] * 5


def test_segment_errors():
    with pytest.raises(AnnotationError):
        segment_heartbeats(ramp(100), [50, 10])
    with pytest.raises(AnnotationError):
        segment_heartbeats(ramp(100), [100])
    with pytest.raises(AnnotationError):
        segment_heartbeats(ramp(100), [10], labels=[0, 1])


def test_empty_signal_rejected():
    rec = SignalRecord({"II": np.zeros(0)}, 360.0)
    with pytest.raises(EmptySignal):
        segment_heartbeats(rec, [])
    with pytest.raises(EmptySignal):
        LabeledRecord(rec, 0)


@given(st.integers(1, 500), st.integers(1, 300), st.data())
def test_segment_count_equals_annotations(n, window, data):
    pos = sorted(data.draw(st.lists(st.integers(0, n - 1), max_size=30)))
    segs = segment_heartbeats(ramp(n, ("I", "V1")), pos, window)
    assert len(segs) == len(pos)
    assert all(s.signal.length_samples == window and s.signal.lead_ids == ["I", "V1"] for s in segs)


def test_crop_examples():
    assert np.array_equal(crop_or_pad(ramp(4000), 3000).leads["II"], np.arange(1, 3001.0))
    padded = crop_or_pad(ramp(2500), 3000, "zero-extend").leads["II"]
    assert np.array_equal(padded[:2500], np.arange(1, 2501.0)) and not padded[2500:].any()
    for mode in ("head-crop", "zero-extend"):
        assert np.array_equal(crop_or_pad(ramp(3000), 3000, mode).leads["II"], ramp(3000).leads["II"])


def test_crop_errors():
    with pytest.raises(DatasetError):
        crop_or_pad(ramp(10), 0)
    with pytest.raises(DatasetError):
        crop_or_pad(ramp(10), 5, "tail-crop")


@given(st.integers(1, 400), st.integers(1, 400), st.sampled_from(["head-crop", "zero-extend"]))
def test_crop_is_idempotent(n, target, mode):
    once = crop_or_pad(ramp(n), target, mode)
    assert once.length_samples == target
    assert np.array_equal(crop_or_pad(once, target, mode).leads["II"], once.leads["II"])


def test_full_interval_copy_is_original():
    rec = ramp(100)
    (copy,) = augment_zero_fill(rec, 1, 0, min_fraction=1.0)
    assert np.array_equal(copy.leads["II"], rec.leads["II"])


@given(st.integers(2, 400), st.integers(1, 5), st.integers(0, 2 ** 16))
def test_augmented_copies_keep_shape_and_zero_outside(n, copies, seed):
    rec = ramp(n, ("I", "II"))
    for c in augment_zero_fill(rec, copies, seed):
        assert c.length_samples == n and c.lead_ids == rec.lead_ids
        start, stop = kept_interval(rec, c)
        assert np.ceil(0.5 * n) <= stop - start <= n
        for k in rec.lead_ids:
            assert not c.leads[k][:start].any() and not c.leads[k][stop:].any()
            assert np.array_equal(c.leads[k][start:stop], rec.leads[k][start:stop])


def test_augmentation_is_byte_identical_per_seed():
    rec = SignalRecord({"II": np.sin(np.arange(1250) / 40.0)}, 250.0)

    def digest(seed):
        return hashlib.sha256(b"".join(c.leads["II"].tobytes() for c in augment_zero_fill(rec, 3, seed)))

    assert digest(7).hexdigest() == digest(7).hexdigest()
    assert digest(7).hexdigest() != digest(8).hexdigest()


def test_augment_errors():
    with pytest.raises(DatasetError):
        augment_zero_fill(ramp(10), 0, 0)
    with pytest.raises(DatasetError):
        augment_zero_fill(ramp(10), 1, 0, min_fraction=0.9, max_fraction=0.5)


def test_synthetic_task_counts_and_spikes():
    recs, manifest = synthetic_task(10, 200, rng_seed=3)
    assert len(recs) == 20
    assert manifest.counts == {"train": {"smooth": 10, "spiky": 10}}
    calm = max(np.abs(r.signal.leads["II"]).max() for r in recs if r.label == 0)
    for r in recs:
        if r.label == 1:
            assert np.abs(r.signal.leads["II"]).max() > 3 * calm


def test_synthetic_task_is_seeded():
    a, _ = synthetic_task(3, 50, rng_seed=1)
    b, _ = synthetic_task(3, 50, rng_seed=1)
    xa, ya = to_arrays(a)
    xb, yb = to_arrays(b)
    assert np.array_equal(xa, xb) and np.array_equal(ya, yb)
    assert xa.shape == (6, 50, 1)


def test_manifest_round_trip(tmp_path):
    _, manifest = synthetic_task(2, 20)
    write_manifest(manifest, tmp_path / "m.json")
    assert read_manifest(tmp_path / "m.json") == manifest
    assert manifest.total() == 4


def test_manifest_invariants():
    with pytest.raises(DatasetError):
        DatasetManifest(["a", "a"], {}, 360.0, 200)
    with pytest.raises(DatasetError):
        DatasetManifest(["a"], {"train": {"a": -1}}, 360.0, 200)
    with pytest.raises(DatasetError):
        build_manifest([LabeledRecord(ramp(5), 2)], ["a", "b"])


def test_stratified_split_keeps_class_shares():
    labels = np.repeat([0, 1, 2], [50, 30, 20])
    train, test = split_indices(labels, 0.2, rng_seed=4)
    assert sorted(np.concatenate([train, test]).tolist()) == list(range(100))
    assert np.bincount(labels[test]).tolist() == [10, 6, 4]


def test_record_split_keeps_groups_together():
    groups = np.repeat(np.arange(10), 5)
    train, test = split_indices(np.zeros(50), 0.3, rng_seed=2, mode="record", groups=groups)
    assert not set(groups[train]) & set(groups[test])
    assert len(set(groups[test])) == 3
    with pytest.raises(DatasetError):
        split_indices(np.zeros(5), 0.3, mode="record")


def test_aami_segmentation_and_counts(tmp_path):
    rec = SignalRecord({"MLII": np.sin(np.arange(3000) / 30.0)}, 360.0)
    write_signal(rec, tmp_path / "100.csv")
    (tmp_path / "100.ann.csv").write_text("sample,symbol\n100,N\n400,A\n700,+\n900,V\n1500,/\n2000,L\n")
    samples = [100, 400, 700, 900, 1500, 2000]
    segs = segment_aami(rec, samples, ["N", "A", "+", "V", "/", "L"])
    assert [AAMI_CLASSES[s.label] for s in segs] == ["N", "S", "V", "Q", "N"]
    assert mitbih_counts(tmp_path) == {"N": 2, "S": 1, "V": 1, "F": 0, "Q": 1}


@pytest.mark.skipif(not os.environ.get("ECGRAPH_MITBIH_DIR"), reason="MIT-BIH CSVs not present")
def test_mitbih_segment_totals():
    counts = mitbih_counts(os.environ["ECGRAPH_MITBIH_DIR"])
    assert counts == MITBIH_BEAT_COUNTS
    assert sum(counts.values()) == 103168
