import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isgfan.signal_ingest import (NoiseSpec, SegmentedDataset, SignalRecord, TransferTask,
                                  build_transfer_task, generate_noise, inject_noise, noise_power_for,
                                  read_archive, read_manifest, segment_signal, signal_power,
                                  synthetic_domain, write_archive)


def rec(n, label=0, cond="1HP"):
    return SignalRecord(np.arange(n, dtype=float), label, cond, 48000.0)


@pytest.mark.parametrize("n,length,stride,expected", [
    (4096, 2048, 2048, 2),
    (2048, 2048, 2048, 1),
    (1000, 2048, 2048, 0),
    (10, 4, 3, 3),
])
def test_segment_count(n, length, stride, expected):
    assert len(segment_signal(rec(n), length, stride)) == expected


def test_segment_rejects_bad_args():
    with pytest.raises(ValueError):
        segment_signal(rec(10), 0, 1)


@given(n=st.integers(1, 500), length=st.integers(1, 64))
def test_nonoverlapping_segments_rebuild_prefix(n, length):
    segs = segment_signal(rec(n), length, length)
    if segs:
        joined = np.concatenate(segs)
        np.testing.assert_array_equal(joined, np.arange(n, dtype=float)[:len(joined)])
        assert len(joined) == (n // length) * length


def test_signal_power():
    assert signal_power(np.zeros(8)) == 0.0
    assert signal_power([1, -1, 1, -1]) == 1.0
    t = np.arange(1000)
    assert abs(signal_power(2 * np.sin(2 * np.pi * 5 * t / 1000)) - 2.0) < 1e-6
    with pytest.raises(ValueError, match="empty signal"):
        signal_power([])


def test_noise_power_targets():
    assert noise_power_for(1.0, 0.0) == 1.0
    assert noise_power_for(1.0, -8.0) == pytest.approx(6.309573444801933, rel=1e-12)


@pytest.mark.parametrize("kind", ["gaussian", "laplacian", "mixed"])
def test_single_sample_snr_exact(kind, rng):
    x = rng.normal(size=2048)
    spec = NoiseSpec(kind, -8.0, seed=3)
    noise = inject_noise(x, spec) - x
    snr = 10 * np.log10(signal_power(x) / signal_power(noise))
    assert abs(snr - -8.0) < 0.1


@pytest.mark.parametrize("kind", ["gaussian", "laplacian", "mixed"])
def test_uncalibrated_noise_power_within_2pct(kind, rng):
    x = rng.normal(size=2048)
    target = noise_power_for(signal_power(x), -4.0)
    powers = [signal_power(generate_noise(x, NoiseSpec(kind, -4.0, seed=s), calibrate=False)) for s in range(100)]
    assert abs(np.mean(powers) / target - 1) < 0.02


def test_mixed_noise_is_heavier_tailed_than_gaussian():
    x = np.ones(200_000)
    g = generate_noise(x, NoiseSpec("gaussian", 0.0, 1))
    m = generate_noise(x, NoiseSpec("mixed", 0.0, 1))
    lap = generate_noise(x, NoiseSpec("laplacian", 0.0, 1))
    kurt = lambda v: np.mean(v ** 4) / np.mean(v ** 2) ** 2
    assert kurt(g) < kurt(m) < kurt(lap)
    assert kurt(g) == pytest.approx(3.0, abs=0.1)
    assert kurt(lap) == pytest.approx(6.0, abs=0.4)


def test_noise_is_seed_reproducible(rng):
    x = rng.normal(size=512)
    a = inject_noise(x, NoiseSpec("mixed", -8, 7))
    b = inject_noise(x, NoiseSpec("mixed", -8, 7))
    c = inject_noise(x, NoiseSpec("mixed", -8, 8))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_silent_signal_rejected():
    with pytest.raises(ValueError, match="silent"):
        inject_noise(np.zeros(64), NoiseSpec())


def test_noise_spec_validates_type():
    with pytest.raises(ValueError):
        NoiseSpec("pink")


def _domain(cond, n_per=50, C=4, L=64, seed=0):
    r = np.random.default_rng(seed)
    labels = np.repeat(np.arange(C), n_per)
    return SegmentedDataset(r.normal(size=(C * n_per, L)), labels, cond, num_classes=C)


def test_build_transfer_task_counts_and_roles():
    ds = {"A": _domain("A"), "B": _domain("B", seed=1)}
    src, tu, tt = build_transfer_task(ds, TransferTask("A", "B", NoiseSpec("mixed", -8, 0)))
    assert (len(src), len(tu), len(tt)) == (200, 200, 200)
    assert tu.labels is None and tt.labels is not None
    assert src.role == "source_train" and tu.role == "target_train_unlabeled" and tt.role == "target_test"
    # same noisy segments in both target roles
    assert np.array_equal(tu.samples, tt.samples)
    assert not np.array_equal(src.samples, ds["A"].samples)


def test_cwru_sized_task():
    ds = {"1": _domain("1", n_per=210, C=10, L=32), "2": _domain("2", n_per=210, C=10, L=32, seed=2)}
    src, tu, tt = build_transfer_task(ds, TransferTask("1", "2", None))
    assert len(src) == 2100 and len(tu) == 2100 and len(tt) == 2100


def test_transfer_task_invariants():
    with pytest.raises(ValueError):
        TransferTask("A", "A")
    ds = {"A": _domain("A", C=4), "B": _domain("B", C=3)}
    with pytest.raises(ValueError, match="incompatible domains"):
        build_transfer_task(ds, TransferTask("A", "B"))
    ds = {"A": _domain("A", L=64), "B": _domain("B", L=32)}
    with pytest.raises(ValueError, match="incompatible domains"):
        build_transfer_task(ds, TransferTask("A", "B"))


def test_dataset_invariants():
    with pytest.raises(ValueError):
        SegmentedDataset(np.zeros((2, 30)), np.zeros(2), "A")
    with pytest.raises(ValueError):
        SegmentedDataset(np.zeros((2, 32)), np.zeros(2), "A", role="target_train_unlabeled")
    with pytest.raises(ValueError):
        SegmentedDataset(np.zeros((2, 32)), None, "A", role="target_test")
    ds = _domain("A")
    with pytest.raises(ValueError):
        ds.samples[0, 0] = 1.0


def test_archive_round_trip(tmp_path, rng):
    x = rng.normal(size=(12, 64)).astype(np.float32)
    y = rng.integers(0, 3, 12)
    p = tmp_path / "a.isgf"
    write_archive(p, x, y, 3)
    raw = p.read_bytes()
    assert raw[:4] == b"ISGF"
    assert len(raw) == 16 + 12 * 64 * 4 + 12 * 2
    ds = read_archive(p, "A")
    np.testing.assert_array_equal(ds.samples, x)
    np.testing.assert_array_equal(ds.labels, y)
    assert ds.num_classes == 3


def test_archive_errors(tmp_path):
    with pytest.raises(FileNotFoundError, match="missing.isgf"):
        read_archive(tmp_path / "missing.isgf")
    bad = tmp_path / "bad.isgf"
    bad.write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(ValueError, match="magic"):
        read_archive(bad)


def test_manifest_parsing(tmp_path):
    m = tmp_path / "manifest.txt"
    m.write_text("# comment\n1HP, one.npz, 10, 210\n\n2HP, /abs/two.npz, 10, 210\n")
    entries = read_manifest(m)
    assert [e.condition_id for e in entries] == ["1HP", "2HP"]
    assert entries[0].path == tmp_path / "one.npz"
    assert str(entries[1].path) == "/abs/two.npz"
    m.write_text("1HP, one.npz, 10\n")
    with pytest.raises(ValueError, match=":1:"):
        read_manifest(m)


def test_synthetic_domain_shape():
    ds = synthetic_domain("A", num_classes=4, samples_per_class=5, length=256)
    assert ds.samples.shape == (20, 256)
    assert sorted(ds.class_set()) == [0, 1, 2, 3]
    again = synthetic_domain("A", num_classes=4, samples_per_class=5, length=256)
    assert np.array_equal(ds.samples, again.samples)
