"""Command-line pipeline driver.

Subcommands: ``synth`` (generate a synthetic cohort), ``features`` (band-power
CSV), ``rank-channels`` (permutation importance of a trained full-montage
model), and ``run`` (train/evaluate one configuration, or the full 9-cell
matrix with ``--matrix``).

Every command is seeded explicitly (flag, config file, or ``BISAM_SEED``) and
writes byte-identical outputs on rerun. Exit codes: 0 ok, 1 validation or
contract error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .corpus import (SyntheticSpec, annotate_labels, generate_synthetic_cohort,
                     load_manifest, split_train_test, synthetic_spec_from_dict)
from .model import (DESCRIPTIVE_ONLY, MODALITIES, MULTI_MODAL, SIGNAL_ONLY,
                    ModelConfig, init_weights, save_checkpoint)
from .selection import (SUBSET_SOURCES, rank_channels, read_importance_csv,
                        select_subset, write_importance_csv)
from .spectral import (SpectralParams, extract_cohort_features, normalize_features,
                       write_feature_csv)
from .tensor import NonFiniteError
from .trainer import (TrainConfig, TrainingDiverged, build_batch, run_cell, run_matrix,
                      train, write_matrix_report)


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 by default; 2 is reserved for numerical failure
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _resolve_seed(flag_seed: int | None, config_seed: int | None = None) -> int:
    if flag_seed is not None:
        return flag_seed
    if config_seed is not None:
        return int(config_seed)
    env = os.environ.get("BISAM_SEED")
    if env is not None:
        return int(env)
    raise ValueError("no seed given: pass --seed, set it in the config file, "
                     "or export BISAM_SEED")


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    seed = _resolve_seed(args.seed)
    doc = {}
    if args.spec is not None:
        doc = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    if args.paper_shaped and "duration_range" not in doc:
        doc["duration_range"] = [120.0, 180.0]
    if args.effect_size is not None:
        doc["effect_size"] = args.effect_size
    spec = synthetic_spec_from_dict(doc)
    manifest = generate_synthetic_cohort(spec, seed, args.out)
    _write_json(Path(args.out) / "config.resolved.json",
                {"command": "synth", "seed": seed, "spec": _spec_doc(spec)})

    summary = annotate_labels(manifest)
    durations = []
    for pid in manifest.ids:
        n = np.fromfile(manifest.signal_path(pid), dtype="<u8", count=1, offset=8)
        durations.append(int(n[0]) / manifest.sampling_rate)
    print(f"wrote {len(manifest.ids)} subjects to {args.out}")
    for tag, count in summary.group_counts.items():
        print(f"  {tag}: {count}")
    print(f"  labels: {summary.n_negative} negative / {summary.n_positive} positive")
    print(f"  duration: {min(durations):.1f}-{max(durations):.1f} s "
          f"(mean {sum(durations) / len(durations):.1f} s), fs {manifest.sampling_rate:g} Hz")
    return 0


def _spec_doc(spec: SyntheticSpec) -> dict:
    doc = asdict(spec)
    doc["group_sizes"] = dict(spec.group_sizes)
    doc["base_band_amps"] = dict(spec.base_band_amps)
    doc["informative_band_gain"] = dict(spec.informative_band_gain)
    for key in ("channel_names", "informative_channels", "duration_range"):
        doc[key] = list(doc[key])
    return doc


# ---------------------------------------------------------------------------
# features

def cmd_features(args) -> int:
    manifest = load_manifest(args.manifest)
    params = SpectralParams(nw=args.nw, k=args.k, window_len=args.window,
                            overlap=args.overlap)
    table = extract_cohort_features(manifest, params)
    write_feature_csv(table, args.out)
    print(f"wrote {len(table.ids) * len(table.channels)} rows "
          f"({len(table.ids)} subjects x {len(table.channels)} channels) to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# rank-channels

def cmd_rank_channels(args) -> int:
    seed = _resolve_seed(args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(args.manifest)
    table = extract_cohort_features(manifest)
    split = split_train_test(manifest, args.ratio, seed)
    normalized = normalize_features(table, split.train_ids)

    cfg = ModelConfig(modality=SIGNAL_ONLY, channel_subset=manifest.channel_names,
                      seed=seed)
    tc = TrainConfig(epochs=args.epochs, seed=seed)
    train_data = build_batch(manifest, normalized, split.train_ids, cfg, None)
    weights, _ = train(cfg, init_weights(cfg), train_data, tc)

    idx = normalized.channel_indices(manifest.channel_names)
    eval_features = np.stack([normalized.feature_row(i)[idx] for i in split.test_ids])
    eval_labels = np.array([manifest.record(i).label for i in split.test_ids])
    report = rank_channels(weights, cfg, eval_features, eval_labels,
                           manifest.channel_names, repetitions=args.repetitions,
                           seed=seed)
    write_importance_csv(report, out_dir / "importance.csv")
    save_checkpoint(weights, cfg, out_dir / "checkpoint.json")
    _write_json(out_dir / "config.resolved.json",
                {"command": "rank-channels", "manifest": str(args.manifest),
                 "seed": seed, "ratio": args.ratio, "epochs": args.epochs,
                 "repetitions": args.repetitions})
    print(f"top channels: {', '.join(report.rank_order[:8])}")
    print(f"wrote {out_dir / 'importance.csv'}")
    return 0


# ---------------------------------------------------------------------------
# run

_DEFAULT_RUN = {
    "modality": MULTI_MODAL,
    "channels": "PaperPreset8",
    "channels_k": None,
    "importance_csv": None,
    "ratio": 0.8,
    "spectral": {},
    "model": {},
    "train": {},
    "seed": None,
}


def _load_run_config(args) -> dict:
    doc = dict(_DEFAULT_RUN)
    if args.config is not None:
        loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        unknown = set(loaded) - set(_DEFAULT_RUN) - {"manifest", "out_dir", "jobs"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        doc.update(loaded)
    for key in ("manifest", "out_dir", "modality", "channels", "jobs"):
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            doc[key] = flag
    doc["seed"] = _resolve_seed(args.seed, doc.get("seed"))
    if "manifest" not in doc or "out_dir" not in doc:
        raise ValueError("config needs 'manifest' and 'out_dir' (file or flags)")
    if doc["modality"] not in MODALITIES:
        raise ValueError(f"unknown modality {doc['modality']!r}; valid: {MODALITIES}")
    doc.setdefault("jobs", 1)
    return doc


def cmd_run(args) -> int:
    doc = _load_run_config(args)
    out_dir = Path(doc["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(doc["manifest"])
    spectral = SpectralParams(**doc["spectral"])
    base_model = ModelConfig(modality=DESCRIPTIVE_ONLY, **doc["model"])
    base_train = TrainConfig(**{k: tuple(v) if k == "class_weights" and v is not None else v
                                for k, v in doc["train"].items()})
    seed = doc["seed"]

    table = extract_cohort_features(manifest, spectral)
    resolved = {"command": "run", "matrix": bool(args.matrix), **doc}
    _write_json(out_dir / "config.resolved.json", resolved)

    if args.matrix:
        result = run_matrix(manifest, table, base_model, base_train,
                            ratio=doc["ratio"], seed=seed, jobs=doc["jobs"])
        write_matrix_report(result, out_dir / "metrics.json", out_dir / "table.txt")
        print((out_dir / "table.txt").read_text(encoding="utf-8"))
        return 0

    report_src = None
    if doc["channels"] == "Computed":
        if doc["importance_csv"] is None:
            raise ValueError("Computed channel subsets need 'importance_csv' in the config")
        report_src = read_importance_csv(doc["importance_csv"])
    subset = (select_subset(doc["channels"], k=doc["channels_k"], report=report_src,
                            manifest_channels=manifest.channel_names).channels
              if doc["modality"] != DESCRIPTIVE_ONLY else ())
    split = split_train_test(manifest, doc["ratio"], seed)
    normalized = normalize_features(table, split.train_ids)
    weights, cfg, report, _ = run_cell(
        manifest, normalized, split, doc["modality"], subset,
        f"{doc['modality']}/{doc['channels']}", base_model, base_train, seed)
    _write_json(out_dir / "metrics.json", report.to_json_dict())
    save_checkpoint(weights, cfg, out_dir / "checkpoint.json")
    print(f"{doc['modality']} ({len(subset) or 'no'} channels): "
          f"accuracy {report.accuracy:.2f}, kappa {report.kappa:.2f}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bisam", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic cohort")
    sp.add_argument("--spec", help="JSON file of cohort parameters (defaults used otherwise)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--effect-size", type=float, help="override the group-contrast knob")
    sp.add_argument("--paper-shaped", action="store_true",
                    help="use full-length 120-180 s recordings")
    sp.set_defaults(func=cmd_synth)

    fp = sub.add_parser("features", help="extract band-power features to CSV")
    fp.add_argument("--manifest", required=True)
    fp.add_argument("--out", required=True, help="output CSV path")
    fp.add_argument("--nw", type=float, default=4.0)
    fp.add_argument("--k", type=int, default=7)
    fp.add_argument("--window", type=float, default=2.0, help="window length, s")
    fp.add_argument("--overlap", type=float, default=0.5)
    fp.set_defaults(func=cmd_features)

    rp = sub.add_parser("rank-channels", help="permutation importance of every channel")
    rp.add_argument("--manifest", required=True)
    rp.add_argument("--out-dir", required=True)
    rp.add_argument("--seed", type=int)
    rp.add_argument("--ratio", type=float, default=0.8)
    rp.add_argument("--epochs", type=int, default=200)
    rp.add_argument("--repetitions", "-R", type=int, default=10)
    rp.set_defaults(func=cmd_rank_channels)

    rn = sub.add_parser("run", help="train and evaluate one cell, or the full matrix")
    rn.add_argument("--config", help="JSON run config; flags override")
    rn.add_argument("--manifest")
    rn.add_argument("--out-dir")
    rn.add_argument("--seed", type=int)
    rn.add_argument("--modality", choices=MODALITIES)
    rn.add_argument("--channels", choices=SUBSET_SOURCES,
                    help="channel subset source")
    rn.add_argument("--matrix", action="store_true", help="run all 9 cells")
    rn.add_argument("--jobs", type=int, help="concurrent matrix cells")
    rn.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (TrainingDiverged, NonFiniteError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError, TypeError) as e:
        # TypeError covers unknown keys inside config sub-sections
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
