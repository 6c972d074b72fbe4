"""Multi-modal EEG gait-dysfunction classification pipeline.

Multitaper band-power features + descriptive variables, a dual-pathway
self-attention classifier with a tape-based autodiff core, channel-importance
reduction, and a metrics/kappa evaluation harness, all deterministic from
explicit seeds.
"""

from .corpus import (CHANNELS_63, CohortManifest, DescriptiveVector, Group,
                     ParticipantRecord, Recording, SplitIndices, SyntheticSpec,
                     annotate_labels, encode_descriptives, generate_synthetic_cohort,
                     load_manifest, load_recording, split_train_test)
from .model import (ModelConfig, TokenSequence, bisam_forward, init_weights,
                    load_checkpoint, save_checkpoint, tokenize)
from .selection import ChannelSubset, ImportanceReport, rank_channels, select_subset
from .spectral import (BANDS, BandDef, BandPowerTable, PsdEstimate, TaperSet,
                       band_power, compute_dpss, extract_cohort_features,
                       extract_features, multitaper_psd, normalize_features)
from .stats import (ConfusionMatrix, MetricReport, cohen_kappa, confusion, metrics,
                    spearman_rho)
from .tensor import AdamState, Tensor, adam_step, backward
from .trainer import (MatrixResult, TrainConfig, TrainLog, evaluate, run_matrix, train)

__version__ = "0.1.0"
