"""Training loop, evaluation, and the 9-cell experiment matrix.

One stratified split and one train-fitted normalization feed every cell;
the matrix covers signal-only x {63,16,8,4 channels}, descriptive-only, and
multi-modal x {63,16,8,4}, all evaluated on the identical held-out subjects.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import stats
from .corpus import (CohortManifest, DescriptiveStats, SplitIndices, annotate_labels,
                     encode_descriptives, fit_descriptive_stats, split_train_test)
from .model import (DESCRIPTIVE_ONLY, MULTI_MODAL, SIGNAL_ONLY, BisamWeights,
                    ModelConfig, forward_batch, init_weights)
from .rng import stream, stream_seed
from .selection import ALL, PAPER_PRESET_4, PAPER_PRESET_8, PAPER_PRESET_16, select_subset
from .spectral import BandPowerTable, normalize_features
from .tensor import AdamState, NonFiniteError, adam_step, backward, cross_entropy_logits


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; training aborted."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # None = inverse-frequency weights fitted on the training labels
    class_weights: tuple[float, float] | None = None
    seed: int = 0
    early_stop_patience: int | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.lr < 0.0:
            raise ValueError("lr must be nonnegative")


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)

    @property
    def final_epoch(self) -> int:
        return len(self.losses)


@dataclass(frozen=True)
class SubjectBatch:
    """Stacked model inputs for a fixed subject order."""
    ids: tuple[str, ...]
    pathways: list[tuple[np.ndarray, str]]  # per-pathway ([n, seq, fdim], kind)
    labels: np.ndarray

    def take(self, idx: np.ndarray) -> list[tuple[np.ndarray, str]]:
        return [(tokens[idx], kind) for tokens, kind in self.pathways]


def build_batch(manifest: CohortManifest, table: BandPowerTable, ids,
                cfg: ModelConfig, dstats: DescriptiveStats | None) -> SubjectBatch:
    """Stack per-subject token sequences for batched forward passes."""
    ids = tuple(ids)
    labels = np.array([manifest.record(i).label for i in ids], dtype=int)
    pathways: list[tuple[np.ndarray, str]] = []
    if cfg.modality in (SIGNAL_ONLY, MULTI_MODAL):
        idx = table.channel_indices(cfg.channel_subset)
        signal = np.stack([table.feature_row(i)[idx] for i in ids])
        pathways.append((signal, "signal"))
    if cfg.modality in (DESCRIPTIVE_ONLY, MULTI_MODAL):
        if dstats is None:
            raise ValueError("descriptive modality needs fitted descriptive stats")
        rows = []
        for i in ids:
            dv = encode_descriptives(manifest.record(i), dstats)
            rows.append(np.stack([dv.values, dv.present_mask], axis=1))
        pathways.append((np.stack(rows), "descriptive"))
    if cfg.modality != MULTI_MODAL:
        pathways = [pathways[0], pathways[0]]
    return SubjectBatch(ids=ids, pathways=pathways, labels=labels)


def inverse_frequency_weights(labels: np.ndarray) -> np.ndarray:
    counts = np.bincount(labels, minlength=2)
    if np.any(counts == 0):
        raise ValueError("both classes must appear in the training set")
    return labels.size / (2.0 * counts)


def train(cfg: ModelConfig, weights: BisamWeights, data: SubjectBatch,
          tc: TrainConfig) -> tuple[BisamWeights, TrainLog]:
    """Minimize class-weighted cross entropy with Adam; deterministic in seeds."""
    if len(data.ids) == 0:
        raise ValueError("empty training set")
    class_w = (inverse_frequency_weights(data.labels) if tc.class_weights is None
               else np.asarray(tc.class_weights, dtype=float))
    shuffle_rng = stream(tc.seed, "train/shuffle")
    drop_rng = stream(tc.seed, "train/dropout")
    state = AdamState(lr=tc.lr, beta1=tc.beta1, beta2=tc.beta2, eps=tc.eps)
    log = TrainLog()
    n = len(data.ids)
    best_loss, since_best = np.inf, 0

    for epoch in range(tc.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        epoch_loss, n_correct = 0.0, 0
        for start in range(0, n, tc.batch_size):
            idx = order[start : start + tc.batch_size]
            weights.zero_grads()
            try:
                logits = forward_batch(data.take(idx), cfg, weights,
                                       mode="train", rng=drop_rng)
                loss = cross_entropy_logits(logits, data.labels[idx], class_w)
                backward(loss)
                adam_step(weights.params, weights.grads(), state)
            except NonFiniteError as e:
                raise TrainingDiverged(
                    f"non-finite loss/update at epoch {epoch + 1}: {e}") from e
            epoch_loss += float(loss.data) * idx.size
            n_correct += int(np.sum(np.argmax(logits.data, axis=1) == data.labels[idx]))
        log.losses.append(epoch_loss / n)
        log.accuracies.append(n_correct / n)
        log.epoch_seconds.append(time.perf_counter() - t0)
        if tc.early_stop_patience is not None:
            if log.losses[-1] < best_loss - 1e-4:
                best_loss, since_best = log.losses[-1], 0
            else:
                since_best += 1
                if since_best >= tc.early_stop_patience:
                    break
    weights.trained = True
    return weights, log


def predict(weights: BisamWeights, cfg: ModelConfig, data: SubjectBatch) -> np.ndarray:
    logits = forward_batch(data.pathways, cfg, weights, mode="eval").data
    return np.argmax(logits, axis=1)


def evaluate(weights: BisamWeights, cfg: ModelConfig, data: SubjectBatch) -> stats.MetricReport:
    """Eval-mode metrics (argmax predictions) on a held-out batch."""
    if len(data.ids) == 0:
        raise ValueError("empty evaluation set")
    preds = predict(weights, cfg, data)
    return stats.metrics(stats.confusion(data.labels, preds))


# ---------------------------------------------------------------------------
# experiment matrix

MATRIX_CELLS = (
    ("EEG Signals", "BiSAM-63", SIGNAL_ONLY, ALL),
    ("EEG Signals", "BiSAM-16", SIGNAL_ONLY, PAPER_PRESET_16),
    ("EEG Signals", "BiSAM-8", SIGNAL_ONLY, PAPER_PRESET_8),
    ("EEG Signals", "BiSAM-4", SIGNAL_ONLY, PAPER_PRESET_4),
    ("Descriptive Variables", "BiSAM-DV", DESCRIPTIVE_ONLY, None),
    ("Multi-Modal", "BiSAM-63", MULTI_MODAL, ALL),
    ("Multi-Modal", "BiSAM-16", MULTI_MODAL, PAPER_PRESET_16),
    ("Multi-Modal", "BiSAM-8", MULTI_MODAL, PAPER_PRESET_8),
    ("Multi-Modal", "BiSAM-4", MULTI_MODAL, PAPER_PRESET_4),
)


@dataclass(frozen=True)
class MatrixCell:
    modality: str
    name: str
    channels: tuple[str, ...]
    report: stats.MetricReport


@dataclass(frozen=True)
class MatrixResult:
    cells: tuple[MatrixCell, ...]
    split: SplitIndices

    def to_json_dict(self) -> dict:
        return {
            "train_ids": list(self.split.train_ids),
            "test_ids": list(self.split.test_ids),
            "seed": self.split.seed,
            "ratio": self.split.ratio,
            "cells": [
                {"modality": c.modality, "model": c.name,
                 "n_channels": len(c.channels), **c.report.to_json_dict()}
                for c in self.cells
            ],
        }


def run_cell(manifest: CohortManifest, table: BandPowerTable, split: SplitIndices,
             modality: str, subset_channels: tuple[str, ...], cell_name: str,
             base_model: ModelConfig, base_train: TrainConfig, seed: int,
             ) -> tuple[BisamWeights, ModelConfig, stats.MetricReport, TrainLog]:
    """Train and evaluate one configuration on an already-normalized table."""
    dstats = fit_descriptive_stats([manifest.record(i) for i in split.train_ids])
    cfg = replace(base_model, modality=modality, channel_subset=tuple(subset_channels),
                  seed=stream_seed(seed, f"cell/{cell_name}/init"))
    tc = replace(base_train, seed=stream_seed(seed, f"cell/{cell_name}/train"))
    train_data = build_batch(manifest, table, split.train_ids, cfg, dstats)
    test_data = build_batch(manifest, table, split.test_ids, cfg, dstats)
    weights = init_weights(cfg)
    weights, log = train(cfg, weights, train_data, tc)
    report = evaluate(weights, cfg, test_data)
    return weights, cfg, report, log


def run_matrix(manifest: CohortManifest, table: BandPowerTable,
               base_model: ModelConfig | None = None,
               base_train: TrainConfig = TrainConfig(),
               ratio: float = 0.8, seed: int = 0, jobs: int = 1) -> MatrixResult:
    """All nine cells on one shared split and train-fitted normalization.

    Cells are independent jobs (own derived seeds); ``jobs`` bounds how many
    run concurrently. The result order is canonical either way.
    """
    if base_model is None:
        base_model = ModelConfig(modality=DESCRIPTIVE_ONLY)  # hyperparameters only
    annotate_labels(manifest)  # validates labels exist for every record
    split = split_train_test(manifest, ratio, seed)
    normalized = normalize_features(table, split.train_ids)

    def one_cell(spec):
        modality, name, model_modality, source = spec
        channels = (() if source is None else
                    select_subset(source, manifest_channels=manifest.channel_names).channels)
        _, _, report, _ = run_cell(
            manifest, normalized, split, model_modality, channels,
            f"{modality}/{name}", base_model, base_train, seed)
        return MatrixCell(modality=modality, name=name,
                          channels=tuple(channels), report=report)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(one_cell, MATRIX_CELLS))
    else:
        cells = [one_cell(spec) for spec in MATRIX_CELLS]
    return MatrixResult(cells=tuple(cells), split=split)


def render_matrix_table(result: MatrixResult) -> str:
    """Plain-text table in the published column order
    (Accuracy, Recall, Precision, F1-Score), positive-class averaging."""
    header = f"{'Modality':<22}{'Model':<10}{'Accuracy':>9}{'Recall':>8}{'Precision':>11}{'F1-Score':>10}{'Kappa':>8}"
    lines = [header, "-" * len(header)]
    last_modality = None
    for c in result.cells:
        label = c.modality if c.modality != last_modality else ""
        last_modality = c.modality
        r = c.report
        lines.append(
            f"{label:<22}{c.name:<10}"
            f"{r.accuracy:>8.0%}{r.recall_pos:>8.0%}{r.precision_pos:>11.0%}"
            f"{r.f1_pos:>10.0%}{r.kappa:>8.2f}")
    return "\n".join(lines) + "\n"


def write_matrix_report(result: MatrixResult, json_path, table_path) -> None:
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(result.to_json_dict(), f, indent=2)
        f.write("\n")
    with open(table_path, "w", encoding="utf-8") as f:
        f.write(render_matrix_table(result))
