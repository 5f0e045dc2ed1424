import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from favc import dataset as ds
from favc.dataset import Segment, SynthConfig

TOY = SynthConfig(fs=128.0, T=256)


def test_montage_geometry():
    m = ds.standard_montage()
    np.testing.assert_allclose(np.linalg.norm(m.xyz, axis=1), 1.0)
    assert m.names == ds.CHANNELS
    cz = m.index("Cz")
    np.testing.assert_allclose(m.xy[cz], 0.0, atol=1e-12)
    # nose points along +y: frontal poles ahead of the parietal row
    assert m.xyz[m.index("Fp1"), 1] > 0 > m.xyz[m.index("Pz"), 1]
    # equidistant projection: radius equals the angle from the vertex
    np.testing.assert_allclose(np.linalg.norm(m.xy[m.index("T3")]), np.pi / 2)
    assert m.source_xyz.shape == (4, 3) and m.target_xy.shape == (13, 2)


def test_fingerprint_changes_with_geometry():
    a = ds.standard_montage()
    angles = dict(ds.STANDARD_ANGLES)
    angles["Cz"] = (5.0, 0.0)
    assert a.fingerprint() == ds.standard_montage().fingerprint()
    assert a.fingerprint() != ds.standard_montage(angles).fingerprint()


def test_segment_validation():
    with pytest.raises(ValueError):
        Segment("s", np.zeros((3, 10)))
    with pytest.raises(ValueError):
        Segment("s", np.zeros((4, 10)), np.zeros((13, 9)))
    with pytest.raises(ValueError):
        Segment("s", np.full((4, 10), np.nan))


def test_split_counts_for_119_subjects():
    assert ds.split_counts(119) == (95, 11, 13)
    assert ds.split_counts(3) == (1, 1, 1)
    with pytest.raises(ValueError):
        ds.split_counts(2)


@given(st.integers(3, 60), st.integers(0, 10_000))
def test_split_is_disjoint_complete_and_seeded(n, seed):
    roster = [f"P{i:03d}" for i in range(n)]
    a = ds.split_subjects(roster, seed)
    b = ds.split_subjects(list(reversed(roster)), seed)
    assert a == b
    parts = [set(a.train), set(a.val), set(a.test)]
    assert set().union(*parts) == set(roster)
    assert sum(len(p) for p in parts) == n
    assert min(len(p) for p in parts) >= 1


def test_stats_pooled_population_std():
    rng = np.random.default_rng(0)
    segs = [Segment("a", rng.standard_normal((4, 20)), rng.standard_normal((13, 20))) for _ in range(3)]
    st_ = ds.compute_stats(segs)
    allrows = np.concatenate([s.all_rows() for s in segs], axis=1)
    np.testing.assert_allclose(st_.mean, allrows.mean(1))
    np.testing.assert_allclose(st_.std, allrows.std(1))


def test_constant_channel_std_is_floored_with_warning():
    seg = Segment("a", np.ones((4, 10)), np.random.default_rng(1).standard_normal((13, 10)))
    with pytest.warns(RuntimeWarning):
        st_ = ds.compute_stats([seg])
    assert np.all(st_.source_std == ds.STD_FLOOR)


@given(st.integers(0, 1000))
def test_normalize_round_trip(seed):
    rng = np.random.default_rng(seed)
    seg = Segment("a", 5 * rng.standard_normal((4, 16)) + 2, 3 * rng.standard_normal((13, 16)))
    stats = ds.compute_stats([seg])
    back = ds.denormalize(ds.normalize(seg, stats), stats)
    np.testing.assert_allclose(back.sources, seg.sources, atol=1e-12)
    np.testing.assert_allclose(back.targets, seg.targets, atol=1e-12)


def test_stats_dict_round_trip():
    seg = Segment("a", np.arange(40.0).reshape(4, 10), np.arange(130.0).reshape(13, 10))
    st_ = ds.compute_stats([seg])
    back = ds.ChannelStats.from_dict(json.loads(json.dumps(st_.to_dict())))
    np.testing.assert_array_equal(back.mean, st_.mean)


def test_synthetic_subject_is_deterministic_and_in_range():
    a = ds.synth_subject(3, 2, TOY)
    b = ds.synth_subject(3, 2, TOY)
    assert all(np.array_equal(x.all_rows(), y.all_rows()) for x, y in zip(a, b))
    rms = np.sqrt(np.mean(np.concatenate([s.all_rows() for s in a], axis=1) ** 2, axis=1))
    lo, hi = TOY.rms_range
    assert np.all(rms > 0.5 * lo) and np.all(rms < 1.5 * hi)
    # values survive a float32 round trip exactly
    x = a[0].all_rows()
    np.testing.assert_array_equal(x.astype(np.float32).astype(np.float64), x)


def test_synthetic_targets_depend_on_sources():
    segs = ds.synth_dataset(4, 3, TOY, seed=0)
    X = np.concatenate([s.sources for s in segs], axis=1)
    Y = np.concatenate([s.targets for s in segs], axis=1)
    r = np.corrcoef(np.vstack([X, Y]))[:4, 4:]
    assert np.abs(r).max(axis=0).min() > 0.2  # every target partly observable


def test_synth_dataset_subject_ids():
    segs = ds.synth_dataset(3, 2, TOY, seed=1)
    assert [s.subject_id for s in segs] == ["S000", "S000", "S001", "S001", "S002", "S002"]


def test_store_round_trip(tmp_path):
    segs = ds.synth_dataset(2, 2, TOY, seed=0)
    segs.append(Segment("X", segs[0].sources, None, TOY.fs))
    ds.save_segments(tmp_path / "store", segs)
    back = ds.load_segments(tmp_path / "store")
    assert len(back) == len(segs)
    for a, b in zip(segs, back):
        assert a.subject_id == b.subject_id
        np.testing.assert_array_equal(a.all_rows(), b.all_rows())
    assert back[-1].targets is None


def _store(tmp_path):
    return ds.save_segments(tmp_path / "store", ds.synth_dataset(1, 1, TOY, seed=0))


def test_store_rejects_truncated_payload(tmp_path):
    path = _store(tmp_path)
    f = path / "seg_00000.f32"
    f.write_bytes(f.read_bytes()[:-4])
    with pytest.raises(ds.StoreError):
        ds.load_segments(path)


def test_store_rejects_version_and_length_field(tmp_path):
    path = _store(tmp_path)
    man = json.loads((path / "manifest.json").read_text())
    man["segments"][0]["n_values"] += 1
    (path / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(ds.StoreError):
        ds.load_segments(path)
    man["segments"][0]["n_values"] -= 1
    man["version"] = 99
    (path / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(ds.StoreError):
        ds.load_segments(path)


def test_store_rejects_missing_manifest(tmp_path):
    with pytest.raises(ds.StoreError):
        ds.load_segments(tmp_path)
