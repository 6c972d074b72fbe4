"""Cohort data model, manifest and signal-file IO, labels, splits, synthesis.

A cohort lives on disk as ``manifest.json`` plus one binary signal file per
participant. The manifest fixes the canonical channel order used everywhere
downstream (feature tables, token positions). Signal files are raw float32
little-endian matrices with a 16-byte header (magic ``BSIG``, u32 channel
count, u64 sample count).
"""

from __future__ import annotations

import json
import math
import struct
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .rng import stream

MANIFEST_FORMAT_VERSION = 1
SIGNAL_MAGIC = b"BSIG"
SIGNAL_HEADER = struct.Struct("<4sIQ")

DESCRIPTIVE_VARIABLES = ("age", "schooling", "disease_duration")

# Standard 64-electrode cap layout with the Pz reference removed (63 usable).
CHANNELS_63 = (
    "Fp1", "Fz", "F3", "F7", "FT9", "FC5", "FC1", "C3", "T7", "TP9",
    "CP5", "CP1", "P3", "P7", "O1", "Oz", "O2", "P4", "P8", "TP10",
    "CP6", "CP2", "Cz", "C4", "T8", "FT10", "FC6", "FC2", "F4", "F8",
    "Fp2", "AF7", "AF3", "AFz", "F1", "F5", "FT7", "FC3", "C1", "C5",
    "TP7", "CP3", "P1", "P5", "PO7", "PO3", "POz", "PO4", "PO8", "P6",
    "P2", "CPz", "CP4", "TP8", "C6", "C2", "FC4", "FT8", "F6", "AF8",
    "AF4", "F2", "Iz",
)


class Group(Enum):
    HEALTHY_CONTROL = "HC"
    PD_FOG_MINUS = "PDFOG-"
    PD_FOG_PLUS = "PDFOG+"


class ManifestError(ValueError):
    """Manifest file cannot be parsed as the documented format."""


class IntegrityError(ManifestError):
    """Manifest parses but violates a cohort invariant."""


class SignalFileError(ValueError):
    """Signal file is truncated, malformed, or inconsistent with its manifest."""


class DegenerateVariableError(ValueError):
    """A descriptive variable has zero variance on the training split."""


@dataclass(frozen=True)
class ParticipantRecord:
    id: str
    group: Group
    age: float
    schooling: float
    disease_duration: float | None

    def __post_init__(self):
        if self.age <= 0:
            raise ValueError(f"{self.id}: age must be positive")
        if self.schooling < 0:
            raise ValueError(f"{self.id}: schooling must be nonnegative")
        if self.disease_duration is not None and self.disease_duration < 0:
            raise ValueError(f"{self.id}: disease duration must be nonnegative")

    @property
    def label(self) -> int:
        return 1 if self.group is Group.PD_FOG_PLUS else 0


@dataclass(frozen=True)
class CohortManifest:
    participants: tuple[ParticipantRecord, ...]
    sampling_rate: float
    channel_names: tuple[str, ...]
    signal_file_map: dict[str, str]
    base_dir: Path
    format_version: int = MANIFEST_FORMAT_VERSION

    def __post_init__(self):
        ids = [p.id for p in self.participants]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise IntegrityError(f"duplicate participant id(s): {dup}")
        if not self.channel_names:
            raise IntegrityError("channel_names must be nonempty")
        if len(set(self.channel_names)) != len(self.channel_names):
            raise IntegrityError("channel_names contains duplicates")
        missing = [i for i in ids if i not in self.signal_file_map]
        if missing:
            raise IntegrityError(f"no signal file mapped for id(s): {missing}")

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(p.id for p in self.participants)

    def record(self, id: str) -> ParticipantRecord:
        for p in self.participants:
            if p.id == id:
                return p
        raise KeyError(f"unknown participant id {id!r}")

    def signal_path(self, id: str) -> Path:
        if id not in self.signal_file_map:
            raise KeyError(f"unknown participant id {id!r}")
        return self.base_dir / self.signal_file_map[id]


@dataclass(frozen=True)
class Recording:
    channels: tuple[str, ...]
    fs: float
    samples: np.ndarray  # float32 [n_channels, n_samples]

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[0] != len(self.channels):
            raise ValueError("samples must be [n_channels, n_samples]")
        if self.samples.shape[1] < 2 * self.fs:
            raise ValueError("recording shorter than one 2 s analysis window")
        if not np.isfinite(self.samples).all():
            raise ValueError("recording contains non-finite samples")


@dataclass(frozen=True)
class DescriptiveVector:
    values: np.ndarray       # (3,) z-scored, 0 where absent
    present_mask: np.ndarray  # (3,) of 0/1

    def __post_init__(self):
        if self.values.shape != self.present_mask.shape:
            raise ValueError("values and mask length mismatch")
        if np.any((self.present_mask == 0) & (self.values != 0.0)):
            raise ValueError("masked slots must carry the 0 sentinel")


@dataclass(frozen=True)
class DescriptiveStats:
    mean: np.ndarray  # (3,) over present values of the training split
    std: np.ndarray   # (3,)


@dataclass(frozen=True)
class SplitIndices:
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    seed: int
    ratio: float


@dataclass(frozen=True)
class LabelSummary:
    labels: dict[str, int]
    n_negative: int
    n_positive: int
    group_counts: dict[str, int]


# ---------------------------------------------------------------------------
# manifest + signal IO

_GROUP_BY_TAG = {g.value: g for g in Group}


def load_manifest(path) -> CohortManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: malformed JSON ({e})") from e
    for key in ("format_version", "sampling_rate_hz", "channel_names", "participants"):
        if key not in raw:
            raise ManifestError(f"{path}: missing field {key!r}")
    if raw["format_version"] != MANIFEST_FORMAT_VERSION:
        raise ManifestError(f"unsupported format_version {raw['format_version']!r}")

    participants = []
    file_map = {}
    for entry in raw["participants"]:
        try:
            group = _GROUP_BY_TAG[entry["group"]]
        except KeyError:
            raise ManifestError(f"unknown group tag {entry.get('group')!r}")
        dur = entry["disease_duration"]
        participants.append(ParticipantRecord(
            id=entry["id"],
            group=group,
            age=float(entry["age"]),
            schooling=float(entry["schooling"]),
            disease_duration=None if dur is None else float(dur),
        ))
        file_map[entry["id"]] = entry["signal_file"]

    manifest = CohortManifest(
        participants=tuple(participants),
        sampling_rate=float(raw["sampling_rate_hz"]),
        channel_names=tuple(raw["channel_names"]),
        signal_file_map=file_map,
        base_dir=path.parent,
    )
    for pid in manifest.ids:
        if not manifest.signal_path(pid).is_file():
            raise IntegrityError(f"signal file missing for id {pid!r}: "
                                 f"{manifest.signal_file_map[pid]}")
    return manifest


def save_manifest(manifest: CohortManifest, path) -> None:
    doc = {
        "format_version": manifest.format_version,
        "sampling_rate_hz": manifest.sampling_rate,
        "channel_names": list(manifest.channel_names),
        "participants": [
            {
                "id": p.id,
                "group": p.group.value,
                "age": p.age,
                "schooling": p.schooling,
                "disease_duration": p.disease_duration,
                "signal_file": manifest.signal_file_map[p.id],
            }
            for p in manifest.participants
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def write_signal_file(path, samples: np.ndarray) -> None:
    """Write a [n_channels, n_samples] matrix as little-endian float32."""
    samples = np.ascontiguousarray(samples, dtype="<f4")
    if samples.ndim != 2:
        raise ValueError("samples must be 2-d")
    with open(path, "wb") as f:
        f.write(SIGNAL_HEADER.pack(SIGNAL_MAGIC, samples.shape[0], samples.shape[1]))
        f.write(samples.tobytes(order="C"))


def read_signal_file(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < SIGNAL_HEADER.size:
        raise SignalFileError(f"{path}: file shorter than header")
    magic, n_channels, n_samples = SIGNAL_HEADER.unpack_from(blob)
    if magic != SIGNAL_MAGIC:
        raise SignalFileError(f"{path}: bad magic {magic!r}")
    expected = SIGNAL_HEADER.size + 4 * n_channels * n_samples
    if len(blob) < expected:
        raise SignalFileError(f"{path}: truncated (need {expected} bytes, have {len(blob)})")
    if len(blob) > expected:
        raise SignalFileError(f"{path}: trailing bytes after payload")
    data = np.frombuffer(blob, dtype="<f4", offset=SIGNAL_HEADER.size)
    return data.reshape(n_channels, n_samples)


def load_recording(manifest: CohortManifest, id: str) -> Recording:
    samples = read_signal_file(manifest.signal_path(id))
    if samples.shape[0] != len(manifest.channel_names):
        raise SignalFileError(
            f"{id}: file has {samples.shape[0]} channels, manifest declares "
            f"{len(manifest.channel_names)}")
    return Recording(channels=manifest.channel_names, fs=manifest.sampling_rate,
                     samples=samples)


# ---------------------------------------------------------------------------
# labels, descriptive encoding, splitting

def annotate_labels(manifest: CohortManifest) -> LabelSummary:
    """Binary freezing-of-gait labels: PDFOG+ is 1, everything else 0."""
    labels = {p.id: p.label for p in manifest.participants}
    group_counts = {g.value: 0 for g in Group}
    for p in manifest.participants:
        group_counts[p.group.value] += 1
    n_pos = sum(labels.values())
    return LabelSummary(labels=labels, n_negative=len(labels) - n_pos,
                        n_positive=n_pos, group_counts=group_counts)


def _descriptive_triplet(record: ParticipantRecord) -> tuple[np.ndarray, np.ndarray]:
    values = np.array([
        record.age,
        record.schooling,
        0.0 if record.disease_duration is None else record.disease_duration,
    ])
    mask = np.array([1.0, 1.0, 0.0 if record.disease_duration is None else 1.0])
    return values, mask


def fit_descriptive_stats(records: Sequence[ParticipantRecord]) -> DescriptiveStats:
    """Per-variable mean/std over present values only (training split only)."""
    cols = {name: [] for name in DESCRIPTIVE_VARIABLES}
    for r in records:
        cols["age"].append(r.age)
        cols["schooling"].append(r.schooling)
        if r.disease_duration is not None:
            cols["disease_duration"].append(r.disease_duration)
    mean = np.zeros(3)
    std = np.zeros(3)
    for i, name in enumerate(DESCRIPTIVE_VARIABLES):
        vals = np.asarray(cols[name], dtype=float)
        if vals.size == 0:
            raise DegenerateVariableError(f"no present values for {name!r} in training split")
        mean[i] = vals.mean()
        std[i] = vals.std()
        if std[i] == 0.0:
            raise DegenerateVariableError(f"zero variance for {name!r} in training split")
    return DescriptiveStats(mean=mean, std=std)


def encode_descriptives(record: ParticipantRecord, train_stats: DescriptiveStats) -> DescriptiveVector:
    """Z-score present variables with training statistics; absent slots become
    the (0, mask 0) sentinel."""
    values, mask = _descriptive_triplet(record)
    z = (values - train_stats.mean) / train_stats.std
    z[mask == 0] = 0.0
    return DescriptiveVector(values=z, present_mask=mask)


def split_train_test(manifest: CohortManifest, ratio: float, seed: int) -> SplitIndices:
    """Label-stratified train/test split, deterministic in (seed, ratio).

    Train size per stratum starts at floor(ratio * n_stratum); remaining
    slots up to round(ratio * N) go to strata by largest fractional
    remainder (ties: larger stratum, then label order). Selection within a
    stratum shuffles the sorted ids, so the result is independent of the
    manifest's participant order.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0,1), got {ratio}")
    strata: dict[int, list[str]] = {0: [], 1: []}
    for p in manifest.participants:
        strata[p.label].append(p.id)
    if not strata[0] or not strata[1]:
        raise ValueError("need at least one subject per class to stratify")

    n_total = len(manifest.participants)
    total_train = int(math.floor(ratio * n_total + 0.5))
    quota = {lab: int(math.floor(ratio * len(ids))) for lab, ids in strata.items()}
    shortfall = total_train - sum(quota.values())
    order = sorted(
        strata,
        key=lambda lab: (-(ratio * len(strata[lab]) - quota[lab]), -len(strata[lab]), lab),
    )
    for lab in order[:shortfall]:
        quota[lab] += 1

    train, test = [], []
    for lab, ids in strata.items():
        ids = sorted(ids)
        perm = stream(seed, f"split/stratum{lab}").permutation(len(ids))
        chosen = [ids[i] for i in perm[: quota[lab]]]
        train.extend(chosen)
        test.extend(i for i in ids if i not in set(chosen))
    return SplitIndices(train_ids=tuple(sorted(train)), test_ids=tuple(sorted(test)),
                        seed=seed, ratio=ratio)


# ---------------------------------------------------------------------------
# synthetic cohorts

BAND_NAMES = ("theta", "alpha", "beta", "gamma")
_BAND_EDGES = {"theta": (4.0, 8.0), "alpha": (8.0, 13.0), "beta": (13.0, 30.0),
               "gamma": (30.0, 100.0)}

# the eight channels the classifier-driven ranking singled out; used as the
# default location of the injected group contrast
DEFAULT_INFORMATIVE = ("TP9", "FT8", "Oz", "Fp1", "POz", "C1", "Iz", "T8")


@dataclass(frozen=True)
class GroupDemographics:
    age_mean: float
    age_std: float
    schooling_mean: float
    schooling_std: float
    duration_mean: float | None  # None = variable absent for the group
    duration_std: float


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a generated cohort.

    Signals are sums of band-limited oscillatory bursts plus white noise.
    ``effect_size`` scales every group contrast: the amplitude gain of the
    positive group on informative channels and the shift/widening of its
    disease-duration distribution. At 0 all groups are exchangeable apart
    from the healthy controls' missing duration.
    """
    group_sizes: Mapping[str, int] = field(
        default_factory=lambda: {"HC": 41, "PDFOG-": 41, "PDFOG+": 42})
    channel_names: tuple[str, ...] = CHANNELS_63
    fs: float = 500.0
    duration_range: tuple[float, float] = (40.0, 60.0)
    base_band_amps: Mapping[str, float] = field(
        default_factory=lambda: {"theta": 4.0, "alpha": 6.0, "beta": 3.0, "gamma": 1.5})
    informative_channels: tuple[str, ...] = DEFAULT_INFORMATIVE
    informative_band_gain: Mapping[str, float] = field(
        default_factory=lambda: {"theta": 0.5, "beta": 0.5})
    subject_amp_jitter: float = 0.10   # log10 sd, shared across channels
    channel_amp_jitter: float = 0.10   # log10 sd, per (channel, band)
    noise_std: float = 5.0
    hc_demographics: GroupDemographics = GroupDemographics(71.3, 7.6, 16.6, 2.2, None, 0.0)
    fog_minus_demographics: GroupDemographics = GroupDemographics(68.2, 7.6, 15.1, 3.5, 4.2, 3.2)
    duration_shift: float = 6.0        # added to PDFOG+ duration mean at effect 1
    duration_spread: float = 1.2       # added to PDFOG+ duration sd at effect 1
    effect_size: float = 1.0

    def __post_init__(self):
        for tag, n in self.group_sizes.items():
            if tag not in _GROUP_BY_TAG:
                raise ValueError(f"unknown group tag {tag!r}")
            if n < 1:
                raise ValueError(f"group {tag!r} must have at least one subject")
        unknown = set(self.informative_channels) - set(self.channel_names)
        if unknown:
            raise ValueError(f"informative channels not in montage: {sorted(unknown)}")
        if self.duration_range[0] < 2.0:
            raise ValueError("recordings must be at least 2 s long")

    @classmethod
    def paper_shaped(cls, **overrides) -> "SyntheticSpec":
        """Full-length recordings (120-180 s) with the default cohort counts."""
        return cls(duration_range=(120.0, 180.0), **overrides)

    def demographics_for(self, group: Group) -> GroupDemographics:
        if group is Group.HEALTHY_CONTROL:
            return self.hc_demographics
        if group is Group.PD_FOG_MINUS:
            return self.fog_minus_demographics
        base = self.fog_minus_demographics
        return GroupDemographics(
            age_mean=69.0, age_std=8.3, schooling_mean=15.6, schooling_std=3.2,
            duration_mean=base.duration_mean + self.effect_size * self.duration_shift,
            duration_std=base.duration_std + self.effect_size * self.duration_spread,
        )

    def amplitude(self, group: Group, channel: str, band: str) -> float:
        amp = self.base_band_amps.get(band, 0.0)
        if (group is Group.PD_FOG_PLUS and channel in self.informative_channels
                and band in self.informative_band_gain):
            amp *= 1.0 + self.effect_size * self.informative_band_gain[band]
        return amp


def synthetic_spec_from_dict(doc: Mapping) -> SyntheticSpec:
    """Build a SyntheticSpec from parsed JSON, with defaults for absent keys."""
    kwargs = dict(doc)
    unknown = set(kwargs) - {f for f in SyntheticSpec.__dataclass_fields__}
    if unknown:
        raise ValueError(f"unknown synthetic-spec keys: {sorted(unknown)}")
    for key in ("channel_names", "informative_channels", "duration_range"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    for key in ("hc_demographics", "fog_minus_demographics"):
        if key in kwargs and isinstance(kwargs[key], Mapping):
            kwargs[key] = GroupDemographics(**kwargs[key])
    return SyntheticSpec(**kwargs)


def _hann(m: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(m) / m)


def _burst_train(rng, n: int, fs: float, f_lo: float, f_hi: float,
                 amplitude: float) -> np.ndarray:
    """Randomly placed Hann-windowed oscillation bursts inside one band."""
    out = np.zeros(n)
    if amplitude == 0.0:
        return out
    duration = n / fs
    margin = min(2.0, 0.25 * (f_hi - f_lo))
    n_bursts = max(2, int(round(duration / 3.0)))
    for _ in range(n_bursts):
        m = int(rng.uniform(0.8, 2.0) * fs)
        m = min(m, n)
        start = int(rng.integers(0, n - m + 1))
        f = rng.uniform(f_lo + margin, f_hi - margin)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        t = np.arange(m) / fs
        out[start:start + m] += amplitude * _hann(m) * np.sin(2.0 * np.pi * f * t + phase)
    return out


def _synth_subject_signal(spec: SyntheticSpec, group: Group, rng) -> np.ndarray:
    n = int(round(rng.uniform(*spec.duration_range) * spec.fs))
    subject_gain = 10.0 ** rng.normal(0.0, spec.subject_amp_jitter)
    samples = rng.normal(0.0, spec.noise_std, size=(len(spec.channel_names), n))
    for ci, channel in enumerate(spec.channel_names):
        for band in BAND_NAMES:
            amp = spec.amplitude(group, channel, band)
            amp *= subject_gain * 10.0 ** rng.normal(0.0, spec.channel_amp_jitter)
            f_lo, f_hi = _BAND_EDGES[band]
            samples[ci] += _burst_train(rng, n, spec.fs, f_lo, f_hi, amp)
    return samples.astype("<f4")


def _clipped_normal(rng, mean: float, sd: float, lo: float, hi: float) -> float:
    return float(np.clip(rng.normal(mean, sd), lo, hi))


def generate_synthetic_cohort(spec: SyntheticSpec, seed: int, out_dir) -> CohortManifest:
    """Write a full synthetic cohort (manifest + signal files) to ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_total = sum(spec.group_sizes.values())
    width = max(3, len(str(n_total)))

    participants = []
    file_map = {}
    idx = 1
    for tag in ("HC", "PDFOG-", "PDFOG+"):
        group = _GROUP_BY_TAG[tag]
        demo = spec.demographics_for(group)
        for _ in range(spec.group_sizes.get(tag, 0)):
            pid = f"S{idx:0{width}d}"
            idx += 1
            demo_rng = stream(seed, f"synth/{pid}/demographics")
            age = _clipped_normal(demo_rng, demo.age_mean, demo.age_std, 40.0, 95.0)
            schooling = _clipped_normal(demo_rng, demo.schooling_mean, demo.schooling_std,
                                        6.0, 25.0)
            duration = None
            if demo.duration_mean is not None:
                duration = _clipped_normal(demo_rng, demo.duration_mean,
                                           demo.duration_std, 0.5, 30.0)
            participants.append(ParticipantRecord(
                id=pid, group=group, age=age, schooling=schooling,
                disease_duration=duration))

            samples = _synth_subject_signal(spec, group, stream(seed, f"synth/{pid}/signal"))
            fname = f"{pid}.bsig"
            write_signal_file(out_dir / fname, samples)
            file_map[pid] = fname

    manifest = CohortManifest(
        participants=tuple(participants),
        sampling_rate=spec.fs,
        channel_names=tuple(spec.channel_names),
        signal_file_map=file_map,
        base_dir=out_dir,
    )
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
