import numpy as np
import pytest

from bisam.corpus import SyntheticSpec, generate_synthetic_cohort
from bisam.selection import RANKED_CHANNELS_16
from bisam.spectral import extract_cohort_features

# covers every published preset plus two extras, so the full matrix runs
TINY_CHANNELS = RANKED_CHANNELS_16 + ("Fz", "Cz")


def tiny_spec(**overrides):
    """Small, fast cohort used across the unit tests."""
    base = dict(
        group_sizes={"HC": 6, "PDFOG-": 6, "PDFOG+": 6},
        channel_names=TINY_CHANNELS,
        fs=250.0,
        duration_range=(6.0, 8.0),
        informative_channels=("C1",),
        noise_std=2.0,
        effect_size=2.0,
    )
    base.update(overrides)
    return SyntheticSpec(**base)


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny-cohort")
    return generate_synthetic_cohort(tiny_spec(), seed=7, out_dir=out)


@pytest.fixture(scope="session")
def tiny_table(tiny_manifest):
    return extract_cohort_features(tiny_manifest)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
