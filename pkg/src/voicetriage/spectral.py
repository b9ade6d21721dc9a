"""Log-mel spectrogram and MFCC extraction.

Fixed analysis parameters: 44.1 kHz audio, 1024-sample Hann-windowed FFT with
128-sample hop, 128 mel bands, output frozen to 256 frames and z-normalized.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, SignalTooShortError

SPECTROGRAM_MAGIC = b"VTSPECG1"


@dataclass(frozen=True)
class SpectroConfig:
    sample_rate: int = 44100
    fft_size: int = 1024
    hop: int = 128
    mel_bands: int = 128
    fixed_frames: int = 256
    mel_fmin: float = 0.0
    mel_fmax: float = 22050.0
    db_floor: float = -80.0

    def __post_init__(self):
        if self.hop > self.fft_size:
            raise DataError("hop must not exceed fft_size")
        if self.mel_bands < 2 or self.fixed_frames < 1:
            raise DataError("mel_bands >= 2 and fixed_frames >= 1 required")


@dataclass
class MelSpectrogram:
    values: np.ndarray  # (mel_bands, fixed_frames), z-normalized dB
    config: SpectroConfig


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def stft_power(samples, cfg: SpectroConfig = SpectroConfig()):
    """Hann-windowed one-sided power spectrogram, shape (fft_size/2+1, n_frames).

    Frame f covers samples [f*hop, f*hop + fft_size); no center padding.
    """
    x = np.asarray(samples, dtype=np.float64)
    n = cfg.fft_size
    if x.shape[0] < n:
        raise SignalTooShortError(
            f"need at least {n} samples for one analysis window, got {x.shape[0]}"
        )
    n_frames = 1 + (x.shape[0] - n) // cfg.hop
    window = np.hanning(n)
    idx = np.arange(n)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    frames = x[idx] * window[None, :]
    spec = np.fft.rfft(frames, axis=1)
    return (spec.real**2 + spec.imag**2).T


def mel_center_frequencies(cfg: SpectroConfig = SpectroConfig()):
    """Center frequency (Hz) of each triangular mel filter."""
    mels = np.linspace(hz_to_mel(cfg.mel_fmin), hz_to_mel(cfg.mel_fmax), cfg.mel_bands + 2)
    return mel_to_hz(mels)[1:-1]


def mel_filterbank(cfg: SpectroConfig = SpectroConfig()):
    """Triangular filterbank, shape (mel_bands, fft_size/2+1), weights >= 0.

    Filter centers are equally spaced on the mel scale. Triangles are sampled
    at FFT bin centers; at this spectral density the narrowest low-frequency
    triangles can fall between bins, so any filter that would come out empty
    is assigned unit weight at its nearest bin instead of an all-zero row.
    """
    n_bins = cfg.fft_size // 2 + 1
    if cfg.mel_bands > n_bins:
        raise DataError(
            f"{cfg.mel_bands} mel bands cannot be resolved by {n_bins} FFT bins"
        )
    bin_freqs = np.arange(n_bins) * cfg.sample_rate / cfg.fft_size
    edges = mel_to_hz(
        np.linspace(hz_to_mel(cfg.mel_fmin), hz_to_mel(cfg.mel_fmax), cfg.mel_bands + 2)
    )
    fb = np.zeros((cfg.mel_bands, n_bins))
    for m in range(cfg.mel_bands):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (bin_freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - bin_freqs) / max(hi - center, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
        if not np.any(fb[m] > 0.0):
            fb[m, int(np.argmin(np.abs(bin_freqs - center)))] = 1.0
    return fb


def log_mel_spectrogram(samples, cfg: SpectroConfig = SpectroConfig()) -> MelSpectrogram:
    """Normalized log-mel image (mel_bands x fixed_frames) for the CNN.

    dB relative floor is db_floor below the per-spectrogram max; the time axis
    is truncated or right-padded (at the floor value) to fixed_frames, then the
    whole image is z-normalized. Zero variance normalizes to all zeros.
    """
    power = stft_power(samples, cfg)
    mel_power = mel_filterbank(cfg) @ power
    db = 10.0 * np.log10(np.maximum(mel_power, 1e-10))
    floor = db.max() + cfg.db_floor
    db = np.maximum(db, floor)
    n_frames = db.shape[1]
    if n_frames >= cfg.fixed_frames:
        db = db[:, : cfg.fixed_frames]
    else:
        pad = np.full((cfg.mel_bands, cfg.fixed_frames - n_frames), floor)
        db = np.concatenate([db, pad], axis=1)
    mean = db.mean()
    std = db.std()
    if std < 1e-12:
        values = np.zeros_like(db)
    else:
        values = (db - mean) / std
    return MelSpectrogram(values=values, config=cfg)


def _dct_ortho_matrix(n_in: int, n_out: int) -> np.ndarray:
    k = np.arange(n_out)[:, None]
    t = np.arange(n_in)[None, :]
    basis = np.cos(np.pi * k * (2 * t + 1) / (2.0 * n_in))
    basis *= np.sqrt(2.0 / n_in)
    basis[0] *= np.sqrt(0.5)
    return basis


def mfcc(samples, cfg: SpectroConfig = SpectroConfig(), n_coeffs: int = 13):
    """Recording-level MFCC vector: orthonormal DCT-II of the per-frame log-mel
    energies, first n_coeffs coefficients, averaged over frames."""
    power = stft_power(samples, cfg)
    mel_power = mel_filterbank(cfg) @ power
    db = 10.0 * np.log10(np.maximum(mel_power, 1e-10))
    coeffs = _dct_ortho_matrix(cfg.mel_bands, n_coeffs) @ db
    return coeffs.mean(axis=1)


def write_spectrogram(spec: MelSpectrogram) -> bytes:
    """Binary dump: 16-byte header (magic, rows, cols) + row-major float32."""
    rows, cols = spec.values.shape
    header = SPECTROGRAM_MAGIC + struct.pack("<II", rows, cols)
    return header + spec.values.astype("<f4").tobytes()


def read_spectrogram(data: bytes, cfg: SpectroConfig = SpectroConfig()) -> MelSpectrogram:
    if len(data) < 16 or data[:8] != SPECTROGRAM_MAGIC:
        raise DataError("not a spectrogram dump")
    rows, cols = struct.unpack_from("<II", data, 8)
    expected = 16 + rows * cols * 4
    if len(data) != expected:
        raise DataError(f"spectrogram payload size mismatch ({len(data)} != {expected})")
    values = np.frombuffer(data, dtype="<f4", offset=16).reshape(rows, cols).astype(np.float64)
    return MelSpectrogram(values=values, config=cfg)
