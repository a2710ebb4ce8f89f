"""Raw audio to log-mel features.

Frontend: Hann-windowed power spectrogram over a 40 ms window / 20 ms hop
(defaults), projected onto a 64-band triangular mel filterbank, then
log-compressed with a 1e-10 floor. Fixed choices, documented here because
they matter for reproducibility: HTK mel scale 2595*log10(1+f/700),
symmetric Hann window, FFT size = smallest power of two >= window length,
no pre-emphasis, no per-clip normalization. Stereo input is averaged to
mono; clips are processed at their native sample rate.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import FeatureSequence

LOG_FLOOR = 1e-10


class DspError(ValueError):
    """Unreadable audio or invalid frontend parameters."""


@dataclass(frozen=True)
class WaveForm:
    """Mono PCM audio in [-1, 1]."""

    samples: np.ndarray  # float64, shape (N,)
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise DspError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if not np.isfinite(samples).all():
            raise DspError("non-finite sample values")
        object.__setattr__(self, "samples", samples)


@dataclass(frozen=True)
class MelFilterbank:
    """Triangular filters with centers equally spaced on the mel axis."""

    weights: np.ndarray  # (n_mels, n_bins), nonnegative
    n_mels: int
    f_min: float
    f_max: float
    center_freqs: np.ndarray  # (n_mels,) triangle peaks in Hz


def hz_to_mel(f):
    """HTK mel scale: 2595 * log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (np.power(10.0, np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def read_wav(path: str | Path) -> WaveForm:
    """Read a RIFF/WAVE file: PCM 16-bit, mono or stereo.

    Stereo is averaged to mono; sample s maps to s/32768.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise DspError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    offset = 12
    while offset + 8 <= len(data):
        chunk_id = data[offset : offset + 4]
        (chunk_size,) = struct.unpack_from("<I", data, offset + 4)
        body_start = offset + 8
        if body_start + chunk_size > len(data):
            raise DspError(f"{path}: truncated chunk {chunk_id!r}")
        if chunk_id == b"fmt ":
            if chunk_size < 16:
                raise DspError(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", data, body_start)
        elif chunk_id == b"data":
            payload = data[body_start : body_start + chunk_size]
        offset = body_start + chunk_size + (chunk_size & 1)  # chunks are word-aligned

    if fmt is None:
        raise DspError(f"{path}: missing fmt chunk")
    if payload is None:
        raise DspError(f"{path}: missing data chunk")
    audio_format, channels, sample_rate, _, _, bits = fmt
    if audio_format != 1:
        raise DspError(f"{path}: unsupported encoding (format {audio_format}, want PCM=1)")
    if bits != 16:
        raise DspError(f"{path}: unsupported bit depth {bits}, want 16")
    if channels not in (1, 2):
        raise DspError(f"{path}: {channels} channels, want mono or stereo")
    frame_bytes = 2 * channels
    if len(payload) % frame_bytes != 0:
        raise DspError(f"{path}: truncated chunk b'data'")

    raw = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    if channels == 2:
        raw = raw.reshape(-1, 2).mean(axis=1)
    return WaveForm(samples=raw, sample_rate=sample_rate)


def mel_filterbank(
    sample_rate: int, n_fft: int, n_mels: int, f_min: float = 0.0, f_max: float | None = None
) -> MelFilterbank:
    """Build triangular mel filters over the rfft bins of an n_fft transform."""
    if f_max is None:
        f_max = sample_rate / 2.0
    if not (0 <= f_min < f_max <= sample_rate / 2.0):
        raise DspError(
            f"need 0 <= f_min < f_max <= Nyquist, got f_min={f_min} f_max={f_max} sr={sample_rate}"
        )
    if n_mels < 1:
        raise DspError(f"n_mels must be >= 1, got {n_mels}")
    if n_fft < 2:
        raise DspError(f"n_fft must be >= 2, got {n_fft}")

    n_bins = n_fft // 2 + 1
    mel_points = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bin_freqs = np.arange(n_bins, dtype=np.float64) * sample_rate / n_fft

    weights = np.zeros((n_mels, n_bins), dtype=np.float64)
    for m in range(n_mels):
        left, center, right = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        rising = (bin_freqs - left) / (center - left)
        falling = (right - bin_freqs) / (right - center)
        weights[m] = np.maximum(0.0, np.minimum(rising, falling))
        if not (weights[m] > 0).any():
            raise DspError(
                f"mel filter {m} has empty support; n_fft={n_fft} is too small "
                f"for {n_mels} bands over [{f_min}, {f_max}] Hz"
            )
    return MelFilterbank(
        weights=weights, n_mels=n_mels, f_min=float(f_min), f_max=float(f_max),
        center_freqs=hz_points[1:-1].copy(),
    )


def frame_count(n_samples: int, win: int, hop: int) -> int:
    """Closed-form frame count: floor((N - win)/hop) + 1."""
    if n_samples < win:
        raise DspError(f"clip of {n_samples} samples is shorter than one window ({win})")
    return (n_samples - win) // hop + 1


def log_mel_features(
    wave: WaveForm,
    n_mels: int = 64,
    win_ms: float = 40.0,
    hop_ms: float = 20.0,
    f_min: float = 0.0,
    f_max: float | None = None,
    source: str = "",
) -> FeatureSequence:
    """Extract T x n_mels log-mel features from a waveform.

    Window and hop lengths are derived from the clip's native sample
    rate (rounded to the nearest sample). Output cells are
    log(mel_power + 1e-10); all-zero input therefore yields a uniform
    log(1e-10) matrix.
    """
    sr = wave.sample_rate
    win = int(round(sr * win_ms / 1000.0))
    hop = int(round(sr * hop_ms / 1000.0))
    if win < 2 or hop < 1:
        raise DspError(f"window/hop too short at sr={sr}: win={win} hop={hop}")
    n = len(wave.samples)
    t_frames = frame_count(n, win, hop)

    n_fft = 1
    while n_fft < win:
        n_fft *= 2
    fb = mel_filterbank(sr, n_fft, n_mels, f_min, f_max)

    window = np.hanning(win)
    frames = np.lib.stride_tricks.sliding_window_view(wave.samples, win)[::hop][:t_frames]
    spectrum = np.fft.rfft(frames * window, n=n_fft, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    mel = power @ fb.weights.T
    logmel = np.log(mel + LOG_FLOOR)
    return FeatureSequence(
        frames=logmel.astype(np.float32), feature_kind="log_mel_64", source_file=source
    )
