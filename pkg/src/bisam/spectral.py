"""Multitaper band-power features.

The PSD estimator follows the classic three steps: taper the window with k
orthonormal discrete prolate spheroidal sequences, Fourier-transform each
tapered copy, and average the squared magnitudes. Tapers come from the
symmetric tridiagonal commuting matrix (numerically stable at any length);
their spectral concentrations are recovered as Rayleigh quotients against the
Toeplitz sinc kernel.

Scaling is one-sided density: with unit-norm tapers each eigenspectrum is
|rfft|^2 / fs with interior bins doubled, so the integral over frequency
matches the window variance (Parseval).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .corpus import CohortManifest, Recording, load_recording

LOG_EPS = 1e-12


class DegenerateFeatureError(ValueError):
    """A (channel, band) cell has zero variance on the training rows."""


@dataclass(frozen=True)
class BandDef:
    name: str
    f_lo: float  # Hz, inclusive
    f_hi: float  # Hz, exclusive

    def __post_init__(self):
        if not self.f_lo < self.f_hi:
            raise ValueError(f"band {self.name}: need f_lo < f_hi")


THETA = BandDef("theta", 4.0, 8.0)
ALPHA = BandDef("alpha", 8.0, 13.0)
BETA = BandDef("beta", 13.0, 30.0)
GAMMA = BandDef("gamma", 30.0, 100.0)
BANDS = (THETA, ALPHA, BETA, GAMMA)
N_BANDS = len(BANDS)


@dataclass(frozen=True)
class TaperSet:
    n: int
    nw: float
    k: int
    tapers: np.ndarray       # [k, n], rows orthonormal
    eigenvalues: np.ndarray  # [k], spectral concentrations, decreasing

    def __post_init__(self):
        gram = self.tapers @ self.tapers.T
        if np.max(np.abs(gram - np.eye(self.k))) > 1e-8:
            raise ValueError("tapers are not orthonormal to 1e-8")
        lam = self.eigenvalues
        if np.any(lam <= 0.0) or np.any(lam >= 1.0):
            raise ValueError("concentrations must lie strictly inside (0, 1)")
        if np.any(np.diff(lam) >= 0.0):
            raise ValueError("concentrations must be strictly decreasing")


@dataclass(frozen=True)
class PsdEstimate:
    freqs: np.ndarray  # Hz, 0..fs/2
    S: np.ndarray      # power density per bin
    fs: float
    n_windows: int = 1


@dataclass(frozen=True)
class SpectralParams:
    nw: float = 4.0
    k: int = 7
    window_len: float = 2.0   # seconds
    overlap: float = 0.5      # fraction of window_len


def _sinc_kernel_quadratic(v: np.ndarray, w: float) -> float:
    """Rayleigh quotient v' A v for the Toeplitz kernel A[i,j] = sin(2 pi W (i-j)) / (pi (i-j))."""
    n = v.size
    lags = np.arange(1, n)
    half = np.sin(2.0 * np.pi * w * lags) / (np.pi * lags)
    kernel = np.concatenate([half[::-1], [2.0 * w], half])
    av = np.convolve(kernel, v, mode="full")[n - 1 : 2 * n - 1]
    return float(v @ av)


def compute_dpss(n: int, nw: float, k: int) -> TaperSet:
    """First k discrete prolate spheroidal sequences of length n.

    Eigenvectors of the symmetric tridiagonal Slepian matrix, signed so the
    first significant element of each taper is positive (the leading taper is
    then nonnegative everywhere).
    """
    if n < 8:
        raise ValueError("need n >= 8")
    if not 1 <= k <= 2 * nw - 1:
        raise ValueError(f"k must satisfy 1 <= k <= 2*nw-1 = {2 * nw - 1:g}")
    w = nw / n
    i = np.arange(n)
    diag = ((n - 1) / 2.0 - i) ** 2 * np.cos(2.0 * np.pi * w)
    off = np.arange(1, n) * np.arange(n - 1, 0, -1) / 2.0
    _, vecs = eigh_tridiagonal(diag, off, select="i", select_range=(n - k, n - 1))
    tapers = vecs[:, ::-1].T  # most concentrated first

    for row in tapers:
        lead = np.argmax(np.abs(row) > 1e-7 * np.max(np.abs(row)))
        if row[lead] < 0:
            row *= -1.0

    lam = np.array([_sinc_kernel_quadratic(row, w) for row in tapers])
    return TaperSet(n=n, nw=float(nw), k=k, tapers=tapers, eigenvalues=lam)


def _one_sided_density(power_full: np.ndarray, n: int, fs: float) -> np.ndarray:
    """Convert rfft squared magnitudes to a one-sided density (doubling interior bins)."""
    s = power_full / fs
    if n % 2 == 0:
        s[..., 1:-1] *= 2.0
    else:
        s[..., 1:] *= 2.0
    return s


def multitaper_psd(window: np.ndarray, tapers: TaperSet, fs: float) -> PsdEstimate:
    """Multitaper PSD of one window: average of the k tapered eigenspectra."""
    window = np.asarray(window, dtype=float)
    if window.ndim != 1 or window.size != tapers.n:
        raise ValueError(f"window length {window.size} != taper length {tapers.n}")
    if not np.isfinite(window).all():
        raise ValueError("window contains non-finite values")
    spectra = np.fft.rfft(tapers.tapers * window[None, :], axis=-1)
    power = np.mean(spectra.real**2 + spectra.imag**2, axis=0)
    freqs = np.fft.rfftfreq(tapers.n, 1.0 / fs)
    return PsdEstimate(freqs=freqs, S=_one_sided_density(power, tapers.n, fs), fs=fs)


def band_power(psd: PsdEstimate, band: BandDef) -> float:
    """Trapezoidal integral of the PSD over [f_lo, f_hi).

    Band edges are linearly interpolated onto the grid, which makes power
    exactly additive across contiguous bands.
    """
    if band.f_hi > psd.fs / 2.0:
        raise ValueError(f"band {band.name} exceeds Nyquist ({psd.fs / 2:g} Hz)")
    f, s = psd.freqs, psd.S
    inside = (f > band.f_lo) & (f < band.f_hi)
    pts_f = np.concatenate([[band.f_lo], f[inside], [band.f_hi]])
    pts_s = np.interp(pts_f, f, s)
    return float(np.trapezoid(pts_s, pts_f))


def _window_starts(n_total: int, n_win: int, hop: int) -> np.ndarray:
    if n_total < n_win:
        raise ValueError("recording shorter than one analysis window")
    return np.arange(0, n_total - n_win + 1, hop)


def extract_features(recording: Recording, bands: tuple[BandDef, ...] = BANDS,
                     params: SpectralParams = SpectralParams()) -> np.ndarray:
    """Per-channel band powers: [n_channels, n_bands].

    Each channel is cut into overlapping windows, each window mean-detrended
    and multitaper-transformed; PSDs are averaged across windows before band
    integration.
    """
    n_win = int(round(params.window_len * recording.fs))
    hop = max(1, int(round(n_win * (1.0 - params.overlap))))
    starts = _window_starts(recording.samples.shape[1], n_win, hop)
    tapers = compute_dpss(n_win, params.nw, params.k)
    freqs = np.fft.rfftfreq(n_win, 1.0 / recording.fs)

    out = np.empty((len(recording.channels), len(bands)))
    for ci in range(len(recording.channels)):
        x = recording.samples[ci].astype(float)
        wins = np.stack([x[s : s + n_win] for s in starts])
        wins -= wins.mean(axis=1, keepdims=True)
        spectra = np.fft.rfft(wins[:, None, :] * tapers.tapers[None, :, :], axis=-1)
        power = np.mean(spectra.real**2 + spectra.imag**2, axis=(0, 1))
        psd = PsdEstimate(freqs=freqs,
                          S=_one_sided_density(power, n_win, recording.fs),
                          fs=recording.fs, n_windows=len(starts))
        for bi, band in enumerate(bands):
            out[ci, bi] = band_power(psd, band)
    return out


@dataclass(frozen=True)
class BandPowerTable:
    ids: tuple[str, ...]
    channels: tuple[str, ...]
    powers: np.ndarray                 # [n_subjects, n_channels, n_bands], raw
    features: np.ndarray | None = None  # normalized (train statistics)
    norm_mean: np.ndarray | None = None  # [n_channels, n_bands] of log10 power
    norm_std: np.ndarray | None = None

    def row(self, id: str) -> np.ndarray:
        return self.powers[self.ids.index(id)]

    def feature_row(self, id: str) -> np.ndarray:
        if self.features is None:
            raise ValueError("table is not normalized yet")
        return self.features[self.ids.index(id)]

    def channel_indices(self, subset: tuple[str, ...]) -> np.ndarray:
        missing = [c for c in subset if c not in self.channels]
        if missing:
            raise KeyError(f"channels not in feature table: {missing}")
        return np.array([self.channels.index(c) for c in subset])


def extract_cohort_features(manifest: CohortManifest,
                            params: SpectralParams = SpectralParams()) -> BandPowerTable:
    rows = [extract_features(load_recording(manifest, pid), BANDS, params)
            for pid in manifest.ids]
    return BandPowerTable(ids=manifest.ids, channels=manifest.channel_names,
                          powers=np.stack(rows))


def normalize_features(table: BandPowerTable, train_ids) -> BandPowerTable:
    """Z-score log10 band powers per (channel, band) with train-only statistics."""
    train_idx = [table.ids.index(i) for i in train_ids]
    train_rows = table.powers[train_idx]
    if np.any(train_rows <= 0.0):
        raise ValueError("training rows must have strictly positive band powers")
    logs = np.log10(table.powers + LOG_EPS)
    mean = logs[train_idx].mean(axis=0)
    std = logs[train_idx].std(axis=0)
    if np.any(std == 0.0):
        bad = np.argwhere(std == 0.0)
        raise DegenerateFeatureError(f"zero train std for (channel, band) cells {bad.tolist()}")
    return replace(table, features=(logs - mean) / std, norm_mean=mean, norm_std=std)


def write_feature_csv(table: BandPowerTable, path) -> None:
    """Raw (pre-normalization) band powers, one row per (subject, channel)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["subject_id", "channel"] + [b.name for b in BANDS])
        for si, sid in enumerate(table.ids):
            for ci, ch in enumerate(table.channels):
                writer.writerow([sid, ch] + [f"{v:.12g}" for v in table.powers[si, ci]])
