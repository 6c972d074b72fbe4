"""Channel-importance ranking and channel-subset construction.

Importance is permutation importance against a trained signal-only model on
the full montage: shuffling one channel's band-power rows across evaluation
subjects and measuring the accuracy drop. The published channel rankings are
available as fixed presets.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import BisamWeights, ModelConfig, forward_batch
from .rng import stream

# full published ranking, descending importance
RANKED_CHANNELS_16 = (
    "TP9", "FT8", "Oz", "Fp1", "POz", "C1", "Iz", "T8",
    "FT10", "CP2", "FC6", "CP1", "F4", "C4", "P5", "CPz",
)
TOP_CHANNELS_8 = RANKED_CHANNELS_16[:8]
TOP_CHANNELS_4 = RANKED_CHANNELS_16[:4]

PAPER_PRESET_16 = "PaperPreset16"
PAPER_PRESET_8 = "PaperPreset8"
PAPER_PRESET_4 = "PaperPreset4"
COMPUTED = "Computed"
ALL = "All"
SUBSET_SOURCES = (PAPER_PRESET_16, PAPER_PRESET_8, PAPER_PRESET_4, COMPUTED, ALL)

_PRESET_LISTS = {
    PAPER_PRESET_16: RANKED_CHANNELS_16,
    PAPER_PRESET_8: TOP_CHANNELS_8,
    PAPER_PRESET_4: TOP_CHANNELS_4,
}


@dataclass(frozen=True)
class ImportanceReport:
    channels: tuple[str, ...]   # canonical (montage) order
    scores: np.ndarray          # aligned with channels, >= 0, sums to 1
    rank_order: tuple[str, ...]  # descending score
    repetitions: int
    seed: int

    def __post_init__(self):
        if np.any(self.scores < 0.0) or abs(self.scores.sum() - 1.0) > 1e-9:
            raise ValueError("scores must be nonnegative and sum to 1")
        ranked = sorted(self.channels, key=lambda c: -self.scores[self.channels.index(c)])
        if set(self.rank_order) != set(self.channels):
            raise ValueError("rank order must cover every channel")
        expect = [self.scores[self.channels.index(c)] for c in ranked]
        got = [self.scores[self.channels.index(c)] for c in self.rank_order]
        if not np.allclose(expect, got):
            raise ValueError("rank order is not sorted by descending score")

    def score_of(self, channel: str) -> float:
        return float(self.scores[self.channels.index(channel)])


@dataclass(frozen=True)
class ChannelSubset:
    channels: tuple[str, ...]
    source: str


def _signal_accuracy(weights: BisamWeights, cfg: ModelConfig,
                     tokens: np.ndarray, labels: np.ndarray) -> float:
    batch = [(tokens, "signal"), (tokens, "signal")]
    logits = forward_batch(batch, cfg, weights, mode="eval").data
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def rank_channels(weights: BisamWeights, cfg: ModelConfig, features: np.ndarray,
                  labels: np.ndarray, channels: tuple[str, ...],
                  repetitions: int = 10, seed: int = 0) -> ImportanceReport:
    """Permutation importance of every channel of a trained full-montage model.

    ``features`` are the normalized [n_subjects, n_channels, n_bands] rows of
    the evaluation split. Each repetition shuffles one channel's rows
    (jointly over its bands), keeping within-channel structure intact.
    Negative drops are clipped before normalizing scores to shares.
    """
    if not weights.trained:
        raise ValueError("reference model must be trained before ranking channels")
    if cfg.modality != "SignalOnly" or tuple(cfg.channel_subset) != tuple(channels):
        raise ValueError("reference model must be signal-only on the full channel set")
    if repetitions < 5:
        raise ValueError("need at least 5 repetitions")
    if features.shape[0] < 5:
        raise ValueError("evaluation set must have at least 5 subjects")

    labels = np.asarray(labels, dtype=int)
    baseline = _signal_accuracy(weights, cfg, features, labels)
    drops = np.zeros(len(channels))
    for r in range(repetitions):
        for ci, channel in enumerate(channels):
            rng = stream(seed, f"perm-importance/rep{r}/{channel}")
            permuted = features.copy()
            permuted[:, ci, :] = features[rng.permutation(features.shape[0]), ci, :]
            drops[ci] += baseline - _signal_accuracy(weights, cfg, permuted, labels)
    drops = np.clip(drops / repetitions, 0.0, None)
    total = drops.sum()
    if total == 0.0:
        scores = np.full(len(channels), 1.0 / len(channels))
    else:
        scores = drops / total
    order = tuple(channels[i] for i in np.argsort(-scores, kind="stable"))
    return ImportanceReport(channels=tuple(channels), scores=scores, rank_order=order,
                            repetitions=repetitions, seed=seed)


def select_subset(source: str, k: int | None = None,
                  report: ImportanceReport | None = None,
                  manifest_channels: tuple[str, ...] | None = None) -> ChannelSubset:
    """Channel subset for one model configuration.

    Presets reproduce the published rankings; ``Computed`` takes the top k of
    an ImportanceReport; ``All`` is the manifest's full canonical order.
    """
    if source in _PRESET_LISTS:
        chosen = _PRESET_LISTS[source]
        if manifest_channels is not None:
            missing = [c for c in chosen if c not in manifest_channels]
            if missing:
                raise ValueError(f"preset channels absent from manifest: {missing}")
        return ChannelSubset(channels=chosen, source=source)
    if source == COMPUTED:
        if report is None:
            raise ValueError("Computed subsets need an ImportanceReport")
        if k is None or not 1 <= k <= len(report.channels):
            raise ValueError(f"k must be in 1..{len(report.channels)}")
        return ChannelSubset(channels=report.rank_order[:k], source=source)
    if source == ALL:
        if manifest_channels is None:
            raise ValueError("All needs the manifest channel list")
        return ChannelSubset(channels=tuple(manifest_channels), source=source)
    raise ValueError(f"unknown subset source {source!r}; valid: {SUBSET_SOURCES}")


def write_importance_csv(report: ImportanceReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["channel", "score", "rank"])
        for rank, channel in enumerate(report.rank_order, start=1):
            writer.writerow([channel, f"{report.score_of(channel):.12g}", rank])


def read_importance_csv(path) -> ImportanceReport:
    """Reload an exported ranking (scores renormalized against rounding)."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValueError(f"{path}: empty importance file")
    order = sorted(rows, key=lambda r: int(r["rank"]))
    channels = tuple(r["channel"] for r in order)
    scores = np.array([float(r["score"]) for r in order])
    return ImportanceReport(channels=channels, scores=scores / scores.sum(),
                            rank_order=channels, repetitions=0, seed=0)
