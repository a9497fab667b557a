"""Sample-domain primitives: WAV I/O, resampling, gain, mixing, reverb."""

import math
import struct
import wave
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stitchguard.audio import (
    AudioClip,
    RoomImpulseResponse,
    apply_gain,
    convolve_rir,
    fit_noise_length,
    mean_power,
    mix_at_snr,
    noise_scale_for_snr,
    read_path_manifest,
    read_wav,
    resample,
    write_wav,
)
from stitchguard.errors import (
    CorruptHeader,
    EmptyRir,
    IoFailure,
    UnsupportedFormat,
    ZeroPowerNoise,
    ZeroPowerSpeech,
)


def _raw_wav(path, ints, rate=16000, channels=1, width=2):
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(width)
        wf.setframerate(rate)
        wf.writeframes(np.asarray(ints, dtype=f"<i{width}").tobytes())


def _peak_hz(x, sr):
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    return np.argmax(spec) * sr / len(x)


class TestWavIO:
    def test_single_sample_half_scale(self, tmp_path):
        _raw_wav(tmp_path / "a.wav", [16384])
        clip = read_wav(tmp_path / "a.wav")
        assert clip.sample_rate == 16000
        np.testing.assert_array_equal(clip.samples, [0.5])

    def test_silence(self, tmp_path):
        _raw_wav(tmp_path / "z.wav", np.zeros(160, dtype=np.int16))
        clip = read_wav(tmp_path / "z.wav")
        assert len(clip) == 160 and not np.any(clip.samples)

    def test_stereo_rejected(self, tmp_path):
        _raw_wav(tmp_path / "s.wav", np.zeros(20, dtype=np.int16), channels=2)
        with pytest.raises(UnsupportedFormat):
            read_wav(tmp_path / "s.wav")

    def test_non_pcm16_rejected(self, tmp_path):
        _raw_wav(tmp_path / "w.wav", np.zeros(20, dtype=np.int32), width=4)
        with pytest.raises(UnsupportedFormat):
            read_wav(tmp_path / "w.wav")

    def test_garbage_header(self, tmp_path):
        (tmp_path / "g.wav").write_bytes(b"RIFF\x00\x00\x00\x00WAVEjunkjunk")
        with pytest.raises((CorruptHeader, UnsupportedFormat)):
            read_wav(tmp_path / "g.wav")

    def test_not_riff(self, tmp_path):
        (tmp_path / "t.wav").write_bytes(b"hello world, not audio at all")
        with pytest.raises(CorruptHeader):
            read_wav(tmp_path / "t.wav")

    def test_non_pcm_format_tag(self, tmp_path):
        # format tag 3 = IEEE float, which the stdlib reader refuses
        fmt = struct.pack("<HHIIHH", 3, 1, 16000, 64000, 4, 32)
        data = np.zeros(4, dtype="<f4").tobytes()
        body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
        (tmp_path / "f.wav").write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
        with pytest.raises(UnsupportedFormat):
            read_wav(tmp_path / "f.wav")

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoFailure):
            read_wav(tmp_path / "nope.wav")

    def test_round_trip_exact_half(self, tmp_path):
        write_wav(AudioClip([0.5], 16000), tmp_path / "h.wav")
        np.testing.assert_array_equal(read_wav(tmp_path / "h.wav").samples, [0.5])

    def test_round_trip_error_bound(self, tmp_path):
        x = np.random.default_rng(3).uniform(-1, 1, 4000)
        write_wav(AudioClip(x, 8000), tmp_path / "r.wav")
        back = read_wav(tmp_path / "r.wav")
        assert back.sample_rate == 8000
        assert np.max(np.abs(back.samples - x)) <= 1.0 / 32768

    def test_positive_full_scale_saturates(self, tmp_path):
        write_wav(AudioClip([1.0, -1.0], 16000), tmp_path / "f.wav")
        with wave.open(str(tmp_path / "f.wav")) as wf:
            ints = np.frombuffer(wf.readframes(2), dtype="<i2")
        np.testing.assert_array_equal(ints, [32767, -32768])
        np.testing.assert_array_equal(read_wav(tmp_path / "f.wav").samples, [32767 / 32768, -1.0])

    def test_write_to_missing_dir(self, tmp_path):
        with pytest.raises(IoFailure):
            write_wav(AudioClip([0.0], 16000), tmp_path / "no" / "x.wav")

    def test_clip_rejects_multichannel(self):
        with pytest.raises(UnsupportedFormat):
            AudioClip(np.zeros((2, 3)), 16000)


class TestResample:
    def test_same_rate_is_exact_identity(self):
        x = np.random.default_rng(0).standard_normal(777)
        out = resample(AudioClip(x, 16000), 16000)
        np.testing.assert_array_equal(out.samples, x)

    def test_tone_peak_survives_downsampling(self):
        sr = 16000
        x = np.sin(2 * np.pi * 1000 * np.arange(sr) / sr)
        out = resample(AudioClip(x, sr), 8000)
        assert out.sample_rate == 8000 and len(out) == 8000
        assert abs(_peak_hz(out.samples, 8000) - 1000) <= 1.0

    def test_tone_peak_survives_upsampling(self):
        x = np.sin(2 * np.pi * 440 * np.arange(8000) / 8000)
        out = resample(AudioClip(x, 8000), 16000)
        assert len(out) == 16000
        assert abs(_peak_hz(out.samples, 16000) - 440) <= 1.0

    def test_dc_round_trip(self):
        out = resample(resample(AudioClip(np.full(16000, 0.3), 16000), 8000), 16000)
        np.testing.assert_allclose(out.samples[200:-200], 0.3, atol=1e-3)

    def test_out_of_band_tone_removed(self):
        # 6 kHz cannot exist at 8 kHz sampling and must not alias back
        sr = 16000
        x = np.sin(2 * np.pi * 6000 * np.arange(sr) / sr)
        out = resample(AudioClip(x, sr), 8000)
        assert np.sqrt(mean_power(out.samples[100:-100])) < 0.01

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            resample(AudioClip([0.0], 16000), 0)


class TestGain:
    def test_zero_db_identity(self):
        x = np.random.default_rng(1).uniform(-0.5, 0.5, 100)
        np.testing.assert_array_equal(apply_gain(AudioClip(x, 16000), 0.0).samples, x)

    def test_six_db_doubles(self):
        out = apply_gain(AudioClip([0.25], 16000), 20 * math.log10(2))
        np.testing.assert_allclose(out.samples, [0.5], rtol=1e-15)

    def test_clipped(self):
        np.testing.assert_array_equal(apply_gain(AudioClip([0.5], 16000), 20.0).samples, [1.0])

    @settings(max_examples=50, deadline=None)
    @given(g=st.floats(-30, 30), seed=st.integers(0, 2 ** 16))
    def test_inverse_without_clipping(self, g, seed):
        bound = 10 ** (-abs(g) / 20)
        x = np.random.default_rng(seed).uniform(-bound, bound, 64)
        back = apply_gain(apply_gain(AudioClip(x, 16000), g), -g)
        np.testing.assert_allclose(back.samples, x, rtol=1e-12, atol=1e-15)


class TestMixing:
    def test_equal_power_scale_is_one(self):
        x = np.random.default_rng(2).uniform(-0.3, 0.3, 500)
        assert noise_scale_for_snr(x, x, 0.0) == pytest.approx(1.0, rel=1e-15)
        out = mix_at_snr(AudioClip(x, 16000), AudioClip(x.copy(), 16000), 0.0)
        np.testing.assert_allclose(out.samples, np.clip(2 * x, -1, 1), rtol=1e-15)

    def test_snr_accuracy_seeded_trials(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            speech = rng.uniform(-0.5, 0.5, int(rng.integers(100, 3000)))
            noise = rng.standard_normal(int(rng.integers(50, 5000))) * rng.uniform(0.01, 2)
            snr = rng.uniform(-5, 30)
            fitted = fit_noise_length(noise, len(speech), np.random.default_rng(1))
            alpha = noise_scale_for_snr(speech, fitted, snr)
            measured = 10 * np.log10(mean_power(speech) / (mean_power(fitted) * alpha ** 2))
            assert abs(measured - snr) < 1e-6

    def test_mix_uses_fitted_noise(self):
        rng = np.random.default_rng(9)
        speech = rng.uniform(-0.1, 0.1, 1000)
        noise = rng.uniform(-0.1, 0.1, 3000)
        out = mix_at_snr(AudioClip(speech, 16000), AudioClip(noise, 16000), 10.0, np.random.default_rng(4))
        added = out.samples - speech
        measured = 10 * np.log10(mean_power(speech) / mean_power(added))
        assert abs(measured - 10.0) < 1e-6

    def test_short_noise_tiled(self):
        np.testing.assert_array_equal(fit_noise_length(np.array([1.0, 2.0, 3.0]), 7), [1, 2, 3, 1, 2, 3, 1])

    def test_long_noise_cropped_contiguously(self):
        noise = np.arange(100.0)
        out = fit_noise_length(noise, 10, np.random.default_rng(0))
        assert len(out) == 10 and np.all(np.diff(out) == 1)

    def test_zero_noise(self):
        with pytest.raises(ZeroPowerNoise):
            mix_at_snr(AudioClip([0.1, 0.2], 16000), AudioClip([0.0, 0.0], 16000), 10.0)

    def test_zero_speech(self):
        with pytest.raises(ZeroPowerSpeech):
            mix_at_snr(AudioClip([0.0, 0.0], 16000), AudioClip([0.1, 0.2], 16000), 10.0)

    def test_rate_mismatch(self):
        with pytest.raises(ValueError):
            mix_at_snr(AudioClip([0.1], 16000), AudioClip([0.1], 8000), 10.0)

    def test_output_in_range(self):
        rng = np.random.default_rng(5)
        out = mix_at_snr(AudioClip(rng.uniform(-1, 1, 500), 16000), AudioClip(rng.uniform(-1, 1, 500), 16000), -10.0)
        assert np.max(np.abs(out.samples)) <= 1.0


class TestReverb:
    x = np.random.default_rng(11).uniform(-0.8, 0.8, 300)

    def test_unit_delta_identity(self):
        out = convolve_rir(AudioClip(self.x, 16000), RoomImpulseResponse([1.0], 16000))
        np.testing.assert_array_equal(out.samples, self.x)

    def test_scaled_delta_identity(self):
        out = convolve_rir(AudioClip(self.x, 16000), RoomImpulseResponse([0.5, 0.0, 0.0], 16000))
        np.testing.assert_array_equal(out.samples, self.x)

    def test_delayed_delta_shifts(self):
        k = 5
        rir = np.zeros(10)
        rir[k] = 1.0
        x = self.x.copy()
        x[:k] = 0.0  # keep the peak inside the shifted window
        out = convolve_rir(AudioClip(x, 16000), RoomImpulseResponse(rir, 16000))
        expected = np.concatenate([np.zeros(k), x[:-k]])
        peak_ratio = np.max(np.abs(x)) / np.max(np.abs(expected))
        assert len(out) == len(x)
        np.testing.assert_allclose(out.samples, expected * peak_ratio, rtol=0, atol=1e-15)

    def test_dense_rir_matches_direct_convolution(self):
        rir = np.random.default_rng(2).standard_normal(40) * np.exp(-np.arange(40) / 8)
        out = convolve_rir(AudioClip(self.x, 16000), RoomImpulseResponse(rir, 16000))
        direct = np.convolve(self.x, rir)[: len(self.x)]
        direct *= np.max(np.abs(self.x)) / np.max(np.abs(direct))
        np.testing.assert_allclose(out.samples, np.clip(direct, -1, 1), atol=1e-12)
        assert np.max(np.abs(out.samples)) == pytest.approx(np.max(np.abs(self.x)))

    def test_empty_rir(self):
        with pytest.raises(EmptyRir):
            RoomImpulseResponse(np.zeros(8), 16000)
        with pytest.raises(EmptyRir):
            RoomImpulseResponse([], 16000)


def test_path_manifest_resolves_relative(tmp_path):
    (tmp_path / "m.txt").write_text("a.wav\n# comment\n\n/abs/b.wav\n")
    paths = read_path_manifest(tmp_path / "m.txt")
    assert paths == [tmp_path / "a.wav", Path("/abs/b.wav")]
