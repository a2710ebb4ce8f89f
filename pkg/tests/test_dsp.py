"""Audio frontend tests: WAV decoding, mel filterbank, log-mel features."""

import struct

import numpy as np
import pytest

from audiotext.dsp import (
    LOG_FLOOR,
    DspError,
    MelFilterbank,
    WaveForm,
    frame_count,
    hz_to_mel,
    log_mel_features,
    mel_filterbank,
    mel_to_hz,
    read_wav,
)

from helpers import sine_wav, write_wav


# ---------------------------------------------------------------- mel scale


def test_mel_scale_anchor_values():
    # 2595 * log10(2) at 700 Hz
    assert hz_to_mel(700.0) == pytest.approx(781.1728387480312, abs=1e-9)
    assert hz_to_mel(0.0) == 0.0
    assert mel_to_hz(0.0) == 0.0


def test_mel_scale_round_trip():
    freqs = np.array([0.0, 10.0, 440.0, 1000.0, 4000.0, 22050.0])
    assert np.allclose(mel_to_hz(hz_to_mel(freqs)), freqs, atol=1e-9)
    mels = np.linspace(0.0, 3000.0, 13)
    assert np.allclose(hz_to_mel(mel_to_hz(mels)), mels, atol=1e-9)


def test_mel_scale_monotonic():
    freqs = np.linspace(0.0, 8000.0, 200)
    mels = hz_to_mel(freqs)
    assert (np.diff(mels) > 0).all()


# ---------------------------------------------------------------- waveform


def test_waveform_rejects_bad_sample_rate():
    with pytest.raises(DspError):
        WaveForm(samples=np.zeros(10), sample_rate=0)
    with pytest.raises(DspError):
        WaveForm(samples=np.zeros(10), sample_rate=-8000)


def test_waveform_rejects_non_finite():
    with pytest.raises(DspError):
        WaveForm(samples=np.array([0.0, np.nan]), sample_rate=16000)
    with pytest.raises(DspError):
        WaveForm(samples=np.array([np.inf]), sample_rate=16000)


def test_waveform_casts_to_float64():
    w = WaveForm(samples=np.zeros(4, dtype=np.float32), sample_rate=8000)
    assert w.samples.dtype == np.float64


# ---------------------------------------------------------------- read_wav


def test_read_wav_scaling(tmp_path):
    p = tmp_path / "one.wav"
    write_wav(p, np.array([16384, -16384, 0, 32767], dtype=np.int16), 16000)
    wave = read_wav(p)
    assert wave.sample_rate == 16000
    assert wave.samples.dtype == np.float64
    assert wave.samples[0] == 0.5
    assert wave.samples[1] == -0.5
    assert wave.samples[2] == 0.0
    assert wave.samples[3] == pytest.approx(32767 / 32768)


def test_read_wav_stereo_averages_to_mono(tmp_path):
    p = tmp_path / "two.wav"
    frames = np.array([[16384, -16384], [16384, 16384]], dtype=np.int16)
    write_wav(p, frames, 44100, channels=2)
    wave = read_wav(p)
    assert wave.samples.shape == (2,)
    assert wave.samples[0] == 0.0
    assert wave.samples[1] == 0.5


def _wav_bytes(audio_format=1, channels=1, sample_rate=16000, bits=16, payload=b"\x00\x00"):
    block = channels * bits // 8
    fmt = struct.pack(
        "<HHIIHH", audio_format, channels, sample_rate, sample_rate * block, block, bits
    )
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


def test_read_wav_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.wav"
    p.write_bytes(b"OGGS" + b"\x00" * 40)
    with pytest.raises(DspError, match="not a RIFF/WAVE"):
        read_wav(p)


def test_read_wav_rejects_float_encoding(tmp_path):
    # IEEE float WAVs use format code 3
    p = tmp_path / "float.wav"
    p.write_bytes(_wav_bytes(audio_format=3, bits=32, payload=b"\x00" * 8))
    with pytest.raises(DspError, match="unsupported encoding"):
        read_wav(p)


def test_read_wav_rejects_wrong_bit_depth(tmp_path):
    p = tmp_path / "eight.wav"
    p.write_bytes(_wav_bytes(bits=8, payload=b"\x00"))
    with pytest.raises(DspError, match="bit depth"):
        read_wav(p)


def test_read_wav_rejects_too_many_channels(tmp_path):
    p = tmp_path / "quad.wav"
    p.write_bytes(_wav_bytes(channels=4, payload=b"\x00" * 8))
    with pytest.raises(DspError, match="channels"):
        read_wav(p)


def test_read_wav_rejects_truncated_chunk(tmp_path):
    p = tmp_path / "trunc.wav"
    good = _wav_bytes(payload=b"\x00\x00" * 4)
    p.write_bytes(good[:-3])
    with pytest.raises(DspError, match="truncated"):
        read_wav(p)


def test_read_wav_rejects_odd_data_payload(tmp_path):
    # 3 bytes cannot hold a whole number of 16-bit mono samples
    p = tmp_path / "odd.wav"
    fmt = struct.pack("<HHIIHH", 1, 1, 16000, 32000, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", 3) + b"\x00\x00\x00" + b"\x00"  # pad byte
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(DspError, match="truncated"):
        read_wav(p)


def test_read_wav_rejects_missing_chunks(tmp_path):
    p = tmp_path / "nofmt.wav"
    body = b"WAVE" + b"data" + struct.pack("<I", 2) + b"\x00\x00"
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(DspError, match="missing fmt"):
        read_wav(p)

    p2 = tmp_path / "nodata.wav"
    fmt = struct.pack("<HHIIHH", 1, 1, 16000, 32000, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    p2.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(DspError, match="missing data"):
        read_wav(p2)


def test_read_wav_skips_extra_chunks(tmp_path):
    # a LIST chunk between fmt and data must be ignored
    p = tmp_path / "list.wav"
    fmt = struct.pack("<HHIIHH", 1, 1, 8000, 16000, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"LIST" + struct.pack("<I", 4) + b"INFO"
    body += b"data" + struct.pack("<I", 2) + struct.pack("<h", 16384)
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    wave = read_wav(p)
    assert wave.sample_rate == 8000
    assert wave.samples.tolist() == [0.5]


# ---------------------------------------------------------------- filterbank


def test_filterbank_shapes_and_support():
    fb = mel_filterbank(16000, 1024, 64)
    assert isinstance(fb, MelFilterbank)
    assert fb.weights.shape == (64, 513)
    assert fb.n_mels == 64
    assert (fb.weights >= 0).all()
    # every band must respond to something
    assert ((fb.weights > 0).sum(axis=1) >= 1).all()
    assert fb.center_freqs.shape == (64,)
    assert (np.diff(fb.center_freqs) > 0).all()
    assert fb.f_min == 0.0
    assert fb.f_max == 8000.0


def test_filterbank_centers_equally_spaced_on_mel_axis():
    fb = mel_filterbank(22050, 1024, 32)
    mels = hz_to_mel(fb.center_freqs)
    steps = np.diff(mels)
    assert np.allclose(steps, steps[0], atol=1e-6)


def test_filterbank_rejects_bad_ranges():
    with pytest.raises(DspError):
        mel_filterbank(16000, 1024, 64, f_min=4000.0, f_max=2000.0)
    with pytest.raises(DspError):
        mel_filterbank(16000, 1024, 64, f_max=9000.0)  # beyond Nyquist
    with pytest.raises(DspError):
        mel_filterbank(16000, 1024, 0)
    with pytest.raises(DspError):
        mel_filterbank(16000, 1, 4)


def test_filterbank_rejects_empty_bands():
    # 64 triangles over 513 Hz of bandwidth with a 16-point FFT cannot
    # all straddle a bin
    with pytest.raises(DspError, match="empty support"):
        mel_filterbank(16000, 16, 64)


# ---------------------------------------------------------------- framing


def test_frame_count_examples():
    # 1 s at 16 kHz with the default 40/20 ms windows
    assert frame_count(16000, 640, 320) == 49
    assert frame_count(640, 640, 320) == 1
    assert frame_count(959, 640, 320) == 1
    assert frame_count(960, 640, 320) == 2


def test_frame_count_matches_stepping_loop():
    rng = np.random.default_rng(11)
    for _ in range(200):
        win = int(rng.integers(2, 400))
        hop = int(rng.integers(1, win + 1))
        n = int(rng.integers(win, 5000))
        count = 0
        start = 0
        while start + win <= n:
            count += 1
            start += hop
        assert frame_count(n, win, hop) == count


def test_frame_count_rejects_short_clip():
    with pytest.raises(DspError, match="shorter than one window"):
        frame_count(100, 200, 80)


# ---------------------------------------------------------------- log-mel


def test_log_mel_shape_and_dtype():
    rng = np.random.default_rng(0)
    wave = WaveForm(samples=rng.uniform(-0.5, 0.5, 16000), sample_rate=16000)
    feats = log_mel_features(wave, source="clip.wav")
    assert feats.frames.shape == (49, 64)
    assert feats.frames.dtype == np.float32
    assert feats.feature_kind == "log_mel_64"
    assert feats.source_file == "clip.wav"


def test_log_mel_window_derivation_at_44100():
    # win = round(44100 * 0.040) = 1764, hop = 882, 1 s -> 49 frames
    rng = np.random.default_rng(1)
    wave = WaveForm(samples=rng.uniform(-0.5, 0.5, 44100), sample_rate=44100)
    feats = log_mel_features(wave)
    assert feats.frames.shape == (49, 64)


def test_log_mel_silence_hits_floor():
    wave = WaveForm(samples=np.zeros(16000), sample_rate=16000)
    feats = log_mel_features(wave)
    floor = np.float32(np.log(LOG_FLOOR))
    assert (feats.frames == floor).all()


@pytest.mark.parametrize("sr", [16000, 44100])
def test_log_mel_sine_peaks_in_matching_band(sr):
    wave = WaveForm(
        samples=0.5 * np.sin(2 * np.pi * 1000.0 * np.arange(sr) / sr), sample_rate=sr
    )
    feats = log_mel_features(wave)

    win = int(round(sr * 0.040))
    n_fft = 1
    while n_fft < win:
        n_fft *= 2
    fb = mel_filterbank(sr, n_fft, 64)
    expected = int(np.argmin(np.abs(fb.center_freqs - 1000.0)))

    peaks = feats.frames.argmax(axis=1)
    assert (peaks == expected).all()


def test_log_mel_sine_round_trips_through_wav(tmp_path):
    p = tmp_path / "tone.wav"
    sine_wav(p, 1000.0, 16000)
    feats = log_mel_features(read_wav(p))
    fb = mel_filterbank(16000, 1024, 64)
    expected = int(np.argmin(np.abs(fb.center_freqs - 1000.0)))
    assert (feats.frames.argmax(axis=1) == expected).all()


def test_log_mel_monotone_under_gain():
    rng = np.random.default_rng(3)
    x = rng.uniform(-0.2, 0.2, 12000)
    lo = log_mel_features(WaveForm(samples=x, sample_rate=16000))
    hi = log_mel_features(WaveForm(samples=3.0 * x, sample_rate=16000))
    assert (hi.frames >= lo.frames).all()
    assert (hi.frames > lo.frames).any()


def test_log_mel_shift_by_one_hop_drops_first_frame():
    rng = np.random.default_rng(4)
    x = rng.uniform(-0.5, 0.5, 16000)
    full = log_mel_features(WaveForm(samples=x, sample_rate=16000))
    shifted = log_mel_features(WaveForm(samples=x[320:], sample_rate=16000))
    t = shifted.frames.shape[0]
    assert np.array_equal(shifted.frames[: t], full.frames[1 : t + 1])


def test_log_mel_custom_band_count():
    rng = np.random.default_rng(5)
    wave = WaveForm(samples=rng.uniform(-0.5, 0.5, 8000), sample_rate=8000)
    feats = log_mel_features(wave, n_mels=24)
    assert feats.frames.shape[1] == 24


def test_log_mel_rejects_short_clip():
    wave = WaveForm(samples=np.zeros(100), sample_rate=16000)
    with pytest.raises(DspError, match="shorter than one window"):
        log_mel_features(wave)


def test_log_mel_rejects_degenerate_rates():
    wave = WaveForm(samples=np.zeros(100), sample_rate=20)
    # win = round(20 * 0.04) = 1 < 2
    with pytest.raises(DspError, match="window/hop too short"):
        log_mel_features(wave)
