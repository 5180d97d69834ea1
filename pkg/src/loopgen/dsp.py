"""Spectral-processing primitives: STFT, mel filterbank, phase vocoder, Griffin-Lim.

Everything here is plain numpy over float64, deterministic, and shared by the
clip pipeline (analysis) and the audio export path (synthesis).
"""

import numpy as np

from .errors import InputError


def hann_window(n_fft: int) -> np.ndarray:
    """Periodic Hann window, the standard analysis window for STFT."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft)


def stft(samples: np.ndarray, n_fft: int = 512, hop: int = 160,
         center: bool = True) -> np.ndarray:
    """Short-time Fourier transform.

    Returns a complex array of shape (n_fft // 2 + 1, n_frames). With
    ``center=True`` the signal is reflect-padded by n_fft // 2 on both sides
    so frame t is centered on sample t * hop; a signal of k * hop samples
    then yields k + 1 frames.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise InputError(f"stft expects a 1-D signal, got shape {x.shape}")
    if center:
        pad = n_fft // 2
        x = np.pad(x, (pad, pad), mode="reflect")
    if len(x) < n_fft:
        x = np.pad(x, (0, n_fft - len(x)))
    n_frames = 1 + (len(x) - n_fft) // hop
    window = hann_window(n_fft)
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * window[None, :]
    return np.fft.rfft(frames, axis=1).T


def istft(spec: np.ndarray, n_fft: int = 512, hop: int = 160,
          center: bool = True, length: int | None = None) -> np.ndarray:
    """Inverse STFT via weighted overlap-add with window-square normalization."""
    spec = np.asarray(spec)
    n_frames = spec.shape[1]
    window = hann_window(n_fft)
    frames = np.fft.irfft(spec.T, n=n_fft, axis=1) * window[None, :]
    out_len = n_fft + hop * (n_frames - 1)
    y = np.zeros(out_len)
    norm = np.zeros(out_len)
    wsq = window ** 2
    for t in range(n_frames):
        start = t * hop
        y[start:start + n_fft] += frames[t]
        norm[start:start + n_fft] += wsq
    y = np.where(norm > 1e-10, y / np.maximum(norm, 1e-10), y)
    if center:
        y = y[n_fft // 2: out_len - n_fft // 2]
    if length is not None:
        if len(y) >= length:
            y = y[:length]
        else:
            y = np.pad(y, (0, length - len(y)))
    return y


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """The n_mels + 2 band-edge frequencies in Hz, equally spaced on the mel scale."""
    mels = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    return mel_to_hz(mels)


def mel_center_frequencies(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Center (peak) frequency of each triangular filter, in Hz."""
    return mel_band_edges(n_mels, fmin, fmax)[1:-1]


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Area-normalized triangular mel filterbank, shape (n_mels, n_fft//2 + 1).

    Each filter is scaled by 2 / bandwidth so filters integrate to the same
    area regardless of their width.
    """
    if fmax is None:
        fmax = sample_rate / 2.0
    edges = mel_band_edges(n_mels, fmin, fmax)
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)
    fb = np.zeros((n_mels, len(fft_freqs)))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (fft_freqs - lo) / max(mid - lo, 1e-12)
        falling = (hi - fft_freqs) / max(hi - mid, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
        fb[m] *= 2.0 / (hi - lo)
    return fb


def phase_vocoder(spec: np.ndarray, rate: float, hop: int, n_fft: int) -> np.ndarray:
    """Stretch an STFT in time by resampling frames at ``rate`` with phase accumulation.

    rate > 1 plays faster (fewer output frames), rate < 1 slower. Magnitudes
    are linearly interpolated between neighboring frames; phases advance by
    the measured deviation from the expected per-hop phase increment, which
    preserves instantaneous frequency (and hence pitch).
    """
    if rate <= 0:
        raise InputError(f"phase vocoder rate must be positive, got {rate}")
    n_bins, n_frames = spec.shape
    time_steps = np.arange(0.0, n_frames, rate)
    # expected phase advance per hop for each bin
    phi_advance = 2.0 * np.pi * hop * np.arange(n_bins) / n_fft
    padded = np.concatenate([spec, np.zeros((n_bins, 2), dtype=spec.dtype)], axis=1)
    out = np.zeros((n_bins, len(time_steps)), dtype=np.complex128)
    phase_acc = np.angle(padded[:, 0])
    for i, t in enumerate(time_steps):
        k = int(np.floor(t))
        alpha = t - k
        c0, c1 = padded[:, k], padded[:, k + 1]
        mag = (1.0 - alpha) * np.abs(c0) + alpha * np.abs(c1)
        out[:, i] = mag * np.exp(1j * phase_acc)
        dphase = np.angle(c1) - np.angle(c0) - phi_advance
        dphase -= 2.0 * np.pi * np.round(dphase / (2.0 * np.pi))
        phase_acc = phase_acc + phi_advance + dphase
    return out


def stretch_waveform(samples: np.ndarray, rate: float,
                     n_fft: int = 512, hop: int = 160) -> np.ndarray:
    """Phase-vocoder time stretch of a waveform by speed factor ``rate``."""
    spec = stft(samples, n_fft=n_fft, hop=hop)
    stretched = phase_vocoder(spec, rate, hop=hop, n_fft=n_fft)
    target = int(round(len(samples) / rate))
    return istft(stretched, n_fft=n_fft, hop=hop, length=target)


def mel_to_linear(mel_mag: np.ndarray, fb: np.ndarray) -> np.ndarray:
    """Least-squares inversion of a mel-magnitude matrix to linear-frequency
    magnitudes via the filterbank pseudo-inverse, clamped to be nonnegative."""
    return np.maximum(0.0, np.linalg.pinv(fb) @ mel_mag)


def griffin_lim(magnitude: np.ndarray, n_fft: int = 512, hop: int = 160,
                n_iter: int = 60, length: int | None = None) -> np.ndarray:
    """Reconstruct a waveform from a linear-magnitude STFT by iterative
    phase estimation. Zero-phase start keeps the result deterministic."""
    angles = np.zeros(magnitude.shape)
    spec = magnitude * np.exp(1j * angles)
    for _ in range(n_iter):
        y = istft(spec, n_fft=n_fft, hop=hop, length=length)
        reproj = stft(y, n_fft=n_fft, hop=hop)
        reproj = reproj[:, : magnitude.shape[1]]
        if reproj.shape[1] < magnitude.shape[1]:
            reproj = np.pad(reproj, ((0, 0), (0, magnitude.shape[1] - reproj.shape[1])))
        phase = np.angle(reproj)
        spec = magnitude * np.exp(1j * phase)
    return istft(spec, n_fft=n_fft, hop=hop, length=length)
