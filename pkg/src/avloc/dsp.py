"""Waveform front end: Hann-windowed power spectra and log-mel features.

The analysis chain is deliberately plain: frame the signal with a 40 ms
window sliding 20 ms at a time, take the one-sided FFT of each Hann-windowed
frame (zero-padded to the next power of two), collapse the power through a
triangular mel filterbank, and take a floored natural log.  Everything is
float64 and deterministic; all functions here are pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "Waveform",
    "DspConfig",
    "StftFrames",
    "Spectrogram",
    "hann_window",
    "next_pow2",
    "frame_count",
    "stft",
    "hz_to_mel",
    "mel_to_hz",
    "mel_filterbank",
    "log_mel_spectrogram",
]

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("waveform must be a non-empty 1-d sample sequence")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)

    @property
    def seconds(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class DspConfig:
    mel_bins: int = 64
    window_seconds: float = 0.04
    hop_seconds: float = 0.02
    f_min: float = 0.0
    f_max: Optional[float] = None  # None means Nyquist


def hann_window(n: int) -> np.ndarray:
    """Symmetric Hann window w[i] = 0.5 - 0.5 cos(2 pi i / (n-1)); [1] for n=1."""
    if n < 1:
        raise ValueError("window length must be at least 1")
    if n == 1:
        return np.ones(1)
    i = np.arange(n, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * i / (n - 1))


def next_pow2(n: int) -> int:
    if n < 1:
        raise ValueError("n must be positive")
    p = 1
    while p < n:
        p *= 2
    return p


def frame_count(n_samples: int, window_len: int, hop_len: int) -> int:
    if n_samples < window_len:
        raise ValueError(
            f"signal of {n_samples} samples is shorter than one {window_len}-sample window"
        )
    return 1 + (n_samples - window_len) // hop_len


@dataclass(frozen=True)
class StftFrames:
    """One-sided DFT of each windowed frame.

    ``spectrum`` and ``power`` have shape (fft_bins, frames) with
    fft_bins = nfft // 2 + 1.  Power is the plain squared magnitude with no
    normalization: summed over the full two-sided spectrum it equals nfft
    times the windowed frame's energy (Parseval).
    """

    spectrum: np.ndarray
    power: np.ndarray
    sample_rate: int
    window_len: int
    hop_len: int
    nfft: int

    @property
    def fft_bins(self) -> int:
        return self.nfft // 2 + 1

    @property
    def frames(self) -> int:
        return self.power.shape[1]

    def bin_frequency(self, k: int) -> float:
        return k * self.sample_rate / self.nfft


def stft(w: Waveform, window_seconds: float = 0.04, hop_seconds: float = 0.02) -> StftFrames:
    window_len = int(round(window_seconds * w.sample_rate))
    hop_len = int(round(hop_seconds * w.sample_rate))
    if window_len < 1 or hop_len < 1:
        raise ValueError("window and hop must each span at least one sample")
    n_frames = frame_count(w.samples.size, window_len, hop_len)
    nfft = next_pow2(window_len)
    window = hann_window(window_len)
    spectrum = np.empty((nfft // 2 + 1, n_frames), dtype=np.complex128)
    padded = np.zeros(nfft)
    for t in range(n_frames):
        start = t * hop_len
        padded[:window_len] = w.samples[start : start + window_len] * window
        spectrum[:, t] = np.fft.rfft(padded)
    power = spectrum.real**2 + spectrum.imag**2
    return StftFrames(
        spectrum=spectrum,
        power=power,
        sample_rate=w.sample_rate,
        window_len=window_len,
        hop_len=hop_len,
        nfft=nfft,
    )


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (np.power(10.0, np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    mel_bins: int, fft_bins: int, sample_rate: int, f_min: float = 0.0, f_max: Optional[float] = None
) -> np.ndarray:
    """Triangular mel filters over the one-sided FFT bins, shape (mel_bins, fft_bins).

    Filter edges are mel_bins + 2 points equally spaced on the mel scale
    between f_min and f_max; each triangle peaks at 1 over its own center
    (no area normalization).  Raises if any filter would be identically zero
    (too many filters for the FFT resolution).
    """
    if mel_bins < 1:
        raise ValueError("need at least one mel bin")
    if fft_bins < 2:
        raise ValueError("need at least two FFT bins")
    if f_max is None:
        f_max = sample_rate / 2.0
    if not (0.0 <= f_min < f_max <= sample_rate / 2.0):
        raise ValueError(f"degenerate frequency range [{f_min}, {f_max}] at rate {sample_rate}")
    nfft = 2 * (fft_bins - 1)
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), mel_bins + 2))
    bin_hz = np.arange(fft_bins) * sample_rate / nfft
    fb = np.zeros((mel_bins, fft_bins))
    for m in range(mel_bins):
        lo, center, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    row_sums = fb.sum(axis=1)
    if np.any(row_sums <= 0.0):
        bad = int(np.argmin(row_sums))
        raise ValueError(
            f"mel filter {bad} has empty support: {mel_bins} filters exceed the "
            f"resolution of {fft_bins} FFT bins over [{f_min}, {f_max}] Hz"
        )
    return fb


@dataclass(frozen=True)
class Spectrogram:
    """Log-mel feature matrix, shape (mel_bins, frames)."""

    values: np.ndarray
    mel_bins: int
    window_seconds: float
    hop_seconds: float

    @property
    def frames(self) -> int:
        return self.values.shape[1]


def log_mel_spectrogram(w: Waveform, cfg: DspConfig = DspConfig()) -> Spectrogram:
    frames = stft(w, cfg.window_seconds, cfg.hop_seconds)
    fb = mel_filterbank(cfg.mel_bins, frames.fft_bins, w.sample_rate, cfg.f_min, cfg.f_max)
    values = np.log(fb @ frames.power + LOG_FLOOR)
    return Spectrogram(
        values=values,
        mel_bins=cfg.mel_bins,
        window_seconds=cfg.window_seconds,
        hop_seconds=cfg.hop_seconds,
    )
