"""Shared signal-processing helpers for the classical adapter backends."""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def frame_signal(x: np.ndarray, frame: int, hop: int) -> np.ndarray:
    if len(x) < frame:
        return np.empty((0, frame))
    n = 1 + (len(x) - frame) // hop
    idx = np.arange(frame)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def rms_db(frames: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    rms = np.sqrt((frames**2).mean(axis=1))
    return 20 * np.log10(np.maximum(rms / 32768.0, floor))


def speech_mask(levels_db: np.ndarray, margin_db: float = 8.0) -> np.ndarray:
    """Energy VAD: frames this far above the noise floor count as speech."""
    if len(levels_db) == 0:
        return np.zeros(0, dtype=bool)
    noise_floor = np.percentile(levels_db, 10)
    mask = levels_db > noise_floor + margin_db
    return ndimage.median_filter(mask, size=9)


def mask_to_segments(mask: np.ndarray, hop_s: float, min_dur: float = 0.3, max_gap: float = 0.2):
    """(start_s, end_s) spans of the True runs, gap-merged and length-filtered."""
    segments = []
    start = None
    for i, on in enumerate(list(mask) + [False]):
        if on and start is None:
            start = i
        elif not on and start is not None:
            segments.append([start * hop_s, i * hop_s])
            start = None
    merged: list[list[float]] = []
    for s, e in segments:
        if merged and s - merged[-1][1] <= max_gap:
            merged[-1][1] = e
        else:
            merged.append([s, e])
    return [(s, e) for s, e in merged if e - s >= min_dur]


def mel_filterbank(n_filters: int, n_fft: int, rate: int, fmax: float = 4000.0) -> np.ndarray:
    def to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    mels = np.linspace(to_mel(50.0), to_mel(fmax), n_filters + 2)
    freqs = to_hz(mels)
    bins = np.floor((n_fft + 1) * freqs / rate).astype(int)
    bank = np.zeros((n_filters, n_fft // 2 + 1))
    for i in range(n_filters):
        lo, mid, hi = bins[i], bins[i + 1], bins[i + 2]
        if mid > lo:
            bank[i, lo:mid] = (np.arange(lo, mid) - lo) / (mid - lo)
        if hi > mid:
            bank[i, mid:hi] = (hi - np.arange(mid, hi)) / (hi - mid)
    return bank


def mel_features(samples: np.ndarray, rate: int, frame: int, hop: int, n_filters: int = 24):
    """Linear mel filterbank energies per frame."""
    frames = frame_signal(samples, frame, hop)
    if len(frames) == 0:
        return np.empty((0, n_filters))
    window = np.hanning(frame)
    spectrum = np.abs(np.fft.rfft(frames * window, axis=1)) ** 2
    bank = mel_filterbank(n_filters, frame, rate)
    return spectrum @ bank.T


def spectral_concentration(samples: np.ndarray, rate: int, top_fraction: float = 0.02) -> float:
    """Share of power in the strongest spectral bins: ~1 for clean tonal or
    harmonic content, much lower when broadband noise is mixed in."""
    n = min(len(samples), rate * 8)
    if n < 256:
        return 0.0
    spectrum = np.abs(np.fft.rfft(samples[:n] * np.hanning(n))) ** 2
    spectrum = spectrum[1:]  # drop DC
    total = spectrum.sum()
    if total <= 0:
        return 0.0
    k = max(1, int(len(spectrum) * top_fraction))
    top = np.sort(spectrum)[-k:].sum()
    return float(top / total)


def envelope_per_bin(samples: np.ndarray, rate: int, bin_s: float, n_bins: int) -> np.ndarray:
    """RMS energy of the audio inside each fixed-length time bin."""
    out = np.zeros(n_bins)
    for i in range(n_bins):
        a = int(i * bin_s * rate)
        b = min(int((i + 1) * bin_s * rate), len(samples))
        if b > a:
            out[i] = np.sqrt(np.mean(samples[a:b] ** 2))
    return out
