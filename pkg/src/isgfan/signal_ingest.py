"""Signal loading, segmentation, noise injection and transfer-task assembly.

Everything here works on plain numpy arrays. Datasets are immutable once
built; the only stateful object is the seeded generator used for noise.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NOISE_TYPES = ("gaussian", "laplacian", "mixed")
ROLES = ("source_train", "target_train_unlabeled", "target_test")

ARCHIVE_MAGIC = b"ISGF"
ARCHIVE_VERSION = 1
# magic, version, segment length, class count, sample count
_HEADER = struct.Struct("<4sHIHI")


@dataclass(frozen=True)
class SignalRecord:
    waveform: np.ndarray
    class_label: int
    condition_id: str
    sample_rate: float = 1.0

    def __post_init__(self):
        if len(self.waveform) < 1:
            raise ValueError("waveform must contain at least one point")
        if self.class_label < 0:
            raise ValueError("class_label must be non-negative")


@dataclass(frozen=True)
class SegmentedDataset:
    samples: np.ndarray  # (N, L)
    labels: np.ndarray | None
    condition_id: str
    role: str = "source_train"
    num_classes: int | None = None

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 2:
            raise ValueError("samples must be a 2-D array (N, L)")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if (self.labels is None) != (self.role == "target_train_unlabeled"):
            raise ValueError("labels must be present iff role is not target_train_unlabeled")
        if self.labels is not None and len(self.labels) != len(samples):
            raise ValueError("labels and samples differ in length")
        if samples.shape[1] % 32:
            raise ValueError("segment length must be divisible by 32")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if self.num_classes is not None and len(labels) and labels.max() >= self.num_classes:
                raise ValueError("label outside [0, num_classes)")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    def __len__(self):
        return len(self.samples)

    def class_set(self) -> frozenset[int]:
        if self.labels is None:
            return frozenset()
        return frozenset(int(c) for c in np.unique(self.labels))


@dataclass(frozen=True)
class NoiseSpec:
    noise_type: str = "mixed"
    snr_db: float = -8.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_type not in NOISE_TYPES:
            raise ValueError(f"noise_type must be one of {NOISE_TYPES}, got {self.noise_type!r}")

    @property
    def tag(self) -> str:
        return f"{self.noise_type}_{self.snr_db:g}dB"


@dataclass(frozen=True)
class TransferTask:
    source_condition: str
    target_condition: str
    noise: NoiseSpec | None = field(default_factory=NoiseSpec)

    def __post_init__(self):
        if self.source_condition == self.target_condition:
            raise ValueError("source and target condition must differ")

    @property
    def name(self) -> str:
        return f"{self.source_condition}-{self.target_condition}"


def segment_signal(record: SignalRecord, length: int, stride: int) -> list[np.ndarray]:
    """Cut contiguous, unpadded windows of ``length`` points every ``stride`` points."""
    if length < 1 or stride < 1:
        raise ValueError("length and stride must be >= 1")
    wave = np.asarray(record.waveform)
    n = len(wave)
    if n < length:
        return []
    count = (n - length) // stride + 1
    return [wave[i * stride:i * stride + length].copy() for i in range(count)]


def signal_power(sample) -> float:
    x = np.asarray(sample, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty signal")
    return float(np.mean(x * x))


def noise_power_for(p_signal: float, snr_db: float) -> float:
    return p_signal / 10.0 ** (snr_db / 10.0)


def _draw_noise(rng: np.random.Generator, noise_type: str, n: int, power: float) -> np.ndarray:
    if noise_type == "gaussian":
        return rng.normal(0.0, np.sqrt(power), n)
    if noise_type == "laplacian":
        return rng.laplace(0.0, np.sqrt(power / 2.0), n)
    # mixed: independent gaussian + laplacian, half the power each
    g = rng.normal(0.0, np.sqrt(power / 2.0), n)
    lap = rng.laplace(0.0, np.sqrt(power / 4.0), n)
    return g + lap


def generate_noise(sample, spec: NoiseSpec, calibrate: bool = True) -> np.ndarray:
    """Noise sequence for ``sample`` at the SNR in ``spec``.

    With ``calibrate`` the draw is rescaled so its empirical power equals the
    target exactly; otherwise the distribution variance matches it.
    """
    x = np.asarray(sample, dtype=np.float64)
    p_signal = signal_power(x)
    if p_signal <= 0.0:
        raise ValueError("undefined SNR for silent signal")
    p_noise = noise_power_for(p_signal, spec.snr_db)
    rng = np.random.default_rng(spec.seed)
    noise = _draw_noise(rng, spec.noise_type, x.size, p_noise)
    if calibrate:
        noise *= np.sqrt(p_noise / np.mean(noise * noise))
    return noise.reshape(x.shape)


def inject_noise(sample, spec: NoiseSpec, calibrate: bool = True) -> np.ndarray:
    x = np.asarray(sample, dtype=np.float64)
    return x + generate_noise(x, spec, calibrate=calibrate)


def _stream_seed(base: int, *keys) -> int:
    """Stable 63-bit seed derived from a base seed and string/int keys."""
    h = hashlib.sha256(repr((int(base),) + keys).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def noisy_copy(dataset: SegmentedDataset, spec: NoiseSpec, calibrate: bool = True) -> np.ndarray:
    """Noisy version of every segment; realization i is keyed on (seed, condition, i)."""
    out = np.empty(dataset.samples.shape, dtype=np.float64)
    for i, seg in enumerate(dataset.samples):
        per = NoiseSpec(spec.noise_type, spec.snr_db, _stream_seed(spec.seed, dataset.condition_id, i))
        out[i] = inject_noise(seg, per, calibrate=calibrate)
    return out


def build_transfer_task(datasets: dict[str, SegmentedDataset], task: TransferTask):
    """Return ``(source_train, target_train_unlabeled, target_test)``.

    The two target roles share one noise realization and differ only in
    whether labels are visible.
    """
    for cond in (task.source_condition, task.target_condition):
        if cond not in datasets:
            raise KeyError(f"condition {cond!r} not in datasets")
    src = datasets[task.source_condition]
    tgt = datasets[task.target_condition]
    if src.labels is None or tgt.labels is None:
        raise ValueError("both domains need labels before the task is built")
    if src.length != tgt.length or src.class_set() != tgt.class_set():
        raise ValueError("incompatible domains")
    num_classes = src.num_classes or tgt.num_classes

    if task.noise is None:
        xs, xt = np.array(src.samples), np.array(tgt.samples)
    else:
        xs, xt = noisy_copy(src, task.noise), noisy_copy(tgt, task.noise)
    source_train = SegmentedDataset(xs, src.labels, src.condition_id, "source_train", num_classes)
    target_unlabeled = SegmentedDataset(xt, None, tgt.condition_id, "target_train_unlabeled", num_classes)
    target_test = SegmentedDataset(xt, tgt.labels, tgt.condition_id, "target_test", num_classes)
    return source_train, target_unlabeled, target_test


def dataset_from_records(records, length: int, stride: int | None = None,
                         samples_per_class: int | None = None, num_classes: int | None = None) -> SegmentedDataset:
    """Segment a list of records of one condition into a labeled dataset."""
    stride = stride or length
    samples, labels, conds = [], [], set()
    for rec in records:
        segs = segment_signal(rec, length, stride)
        if samples_per_class is not None:
            if len(segs) < samples_per_class:
                raise ValueError(f"class {rec.class_label} of {rec.condition_id!r} yields only "
                                 f"{len(segs)} segments, need {samples_per_class}")
            segs = segs[:samples_per_class]
        samples.extend(segs)
        labels.extend([rec.class_label] * len(segs))
        conds.add(rec.condition_id)
    if len(conds) != 1:
        raise ValueError("records must share one condition_id")
    return SegmentedDataset(np.stack(samples), np.array(labels), conds.pop(), "source_train", num_classes)


# ---------------------------------------------------------------- archives

def write_archive(path, samples, labels, num_classes: int) -> None:
    samples = np.asarray(samples)
    labels = np.asarray(labels)
    if samples.ndim != 2 or len(labels) != len(samples):
        raise ValueError("samples must be (N, L) with one label per row")
    n, length = samples.shape
    if n and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError("label outside [0, num_classes)")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(ARCHIVE_MAGIC, ARCHIVE_VERSION, length, num_classes, n))
        fh.write(samples.astype("<f4").tobytes())
        fh.write(labels.astype("<u2").tobytes())


def read_archive(path, condition_id: str | None = None) -> SegmentedDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset archive not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, length, num_classes, n = _HEADER.unpack_from(raw)
    if magic != ARCHIVE_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != ARCHIVE_VERSION:
        raise ValueError(f"{path}: unsupported archive version {version}")
    off = _HEADER.size
    expected = off + 4 * n * length + 2 * n
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    samples = np.frombuffer(raw, "<f4", n * length, off).reshape(n, length).astype(np.float32)
    labels = np.frombuffer(raw, "<u2", n, off + 4 * n * length).astype(np.int64)
    return SegmentedDataset(samples, labels, condition_id or path.stem, "source_train", num_classes)


def file_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass(frozen=True)
class ManifestEntry:
    condition_id: str
    path: Path
    num_classes: int
    samples_per_class: int


def read_manifest(path) -> list[ManifestEntry]:
    """Parse ``condition_id, path, num_classes, samples_per_class`` lines.

    Relative paths resolve against the manifest's directory. Blank lines and
    ``#`` comments are skipped.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 comma-separated fields, got {len(parts)}")
        cond, file_, ncls, spc = parts
        try:
            ncls, spc = int(ncls), int(spc)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: num_classes and samples_per_class must be integers") from None
        p = Path(file_)
        if not p.is_absolute():
            p = path.parent / p
        entries.append(ManifestEntry(cond, p, ncls, spc))
    return entries


def write_manifest(path, entries) -> None:
    lines = [f"{e.condition_id}, {e.path}, {e.num_classes}, {e.samples_per_class}" for e in entries]
    Path(path).write_text("\n".join(lines) + "\n")


def load_raw_condition(entry: ManifestEntry) -> list[SignalRecord]:
    """Read a raw recording file: an ``.npz`` with one ``class_<k>`` waveform per class."""
    if not entry.path.exists():
        raise FileNotFoundError(f"raw signal file not found: {entry.path}")
    with np.load(entry.path) as data:
        fs = float(data["sample_rate"]) if "sample_rate" in data.files else 1.0
        records = []
        for k in range(entry.num_classes):
            key = f"class_{k}"
            if key not in data.files:
                raise KeyError(f"{entry.path}: missing waveform {key!r}")
            records.append(SignalRecord(np.asarray(data[key], dtype=np.float64), k, entry.condition_id, fs))
    return records


# ---------------------------------------------------------------- synthetic

def synthetic_domain(condition_id: str, num_classes: int = 4, samples_per_class: int = 50,
                     length: int = 256, freq_shift: float = 1.0, amp_shift: float = 1.0,
                     class_ratio: float = 1.35, base_freq: float = 0.05, seed: int = 0) -> SegmentedDataset:
    """Clean toy machine signals where the class sets a characteristic frequency.

    Class ``c`` is a tone at ``base_freq * class_ratio**c`` cycles per sample
    plus its second harmonic at half amplitude, with random phases and a
    +-10 % amplitude jitter. ``freq_shift`` scales every frequency (a speed
    change) and ``amp_shift`` the amplitude; together they play the role of
    an operating condition.
    """
    rng = np.random.default_rng(_stream_seed(seed, "synthetic", condition_id))
    t = np.arange(length, dtype=np.float64)
    samples, labels = [], []
    for c in range(num_classes):
        f = base_freq * class_ratio ** c * freq_shift
        for _ in range(samples_per_class):
            x = (np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
                 + 0.5 * np.sin(4 * np.pi * f * t + rng.uniform(0, 2 * np.pi)))
            x *= amp_shift * rng.uniform(0.9, 1.1)
            samples.append(x)
            labels.append(c)
    return SegmentedDataset(np.stack(samples), np.array(labels), condition_id, "source_train", num_classes)
