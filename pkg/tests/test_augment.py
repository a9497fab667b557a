"""Augmentation plans, waveform disturbances, codecs and SpecAugment."""

import inspect
import math
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stitchguard import augment
from stitchguard.audio import AudioClip, read_wav, write_wav
from stitchguard.augment import (
    CompressionSpec,
    Disturbance,
    DistortionSpec,
    SpecAugmentConfig,
    apply_compression,
    apply_disturbance,
    apply_distortion,
    build_plan,
    draw_masks,
    execute_plan,
    max_mask_width,
    read_plan,
    spec_augment,
    spec_augment_array,
    surrogate_codec,
    telephony,
    write_plan,
)
from stitchguard.errors import (
    BudgetExceedsCandidates,
    DataError,
    EmptyManifest,
    EncoderFailed,
    EncoderNotFound,
)
from stitchguard.features import FeatureMatrix

SR = 16000

FAKE_CODEC = """\
import sys, wave
src, dst, rate = sys.argv[1], sys.argv[2], int(sys.argv[3])
with wave.open(src) as r:
    params, frames = r.getparams(), r.readframes(r.getnframes())
with wave.open(dst, "wb") as w:
    w.setparams(params)
    w.writeframes(frames[: len(frames) - 2 * (rate // 32)])  # drop a few samples like a real codec might
"""


def _tone(freq, n=SR, amp=0.5):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / SR)


def _band_level(x, freq):
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    k = int(round(freq * len(x) / SR))
    return spec[k - 2:k + 3].max()


@pytest.fixture
def noise_manifest(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(3):
        write_wav(AudioClip(rng.uniform(-0.3, 0.3, 4000), SR), tmp_path / f"n{i}.wav")
    path = tmp_path / "noise.txt"
    path.write_text("".join(f"n{i}.wav\n" for i in range(3)))
    return path


@pytest.fixture
def codec_script(tmp_path):
    path = tmp_path / "fake_codec.py"
    path.write_text(FAKE_CODEC)
    return path


class TestPlan:
    ids = [f"utt{i:02d}" for i in range(20)]

    def _specs(self, noise_manifest):
        return ([DistortionSpec("volume"), DistortionSpec("noise", noise_manifest=noise_manifest)],
                [CompressionSpec("telephony"), CompressionSpec("surrogate")])

    def test_default_sizes(self):
        sig = inspect.signature(build_plan).parameters
        assert sig["expansion_factor"].default == 5
        assert sig["distortion_budget"].default == 60000
        assert sig["compression_budget"].default == 40000

    def test_full_scale_budgets(self):
        ids = [f"u{i:05d}" for i in range(12000)]
        plan = build_plan(ids, [DistortionSpec("volume")], [CompressionSpec("surrogate")])
        fams = [e.disturbance.family for e in plan.entries]
        assert fams.count("distortion") == 60000 and fams.count("compression") == 40000
        assert len({e.out_id for e in plan.entries}) == 100000

    def test_whole_set_once_per_part(self, noise_manifest):
        d, c = self._specs(noise_manifest)
        plan = build_plan(self.ids, d, c, expansion_factor=1, distortion_budget=20, compression_budget=20, seed=3)
        for fam in ("distortion", "compression"):
            srcs = sorted(e.src_id for e in plan.entries if e.disturbance.family == fam)
            assert srcs == self.ids

    def test_same_seed_same_plan(self, noise_manifest):
        d, c = self._specs(noise_manifest)
        a = build_plan(self.ids, d, c, 5, 40, 30, seed=11)
        b = build_plan(self.ids, d, c, 5, 40, 30, seed=11)
        assert a.entries == b.entries
        other = build_plan(self.ids, d, c, 5, 40, 30, seed=12)
        assert other.entries != a.entries

    def test_manifest_order_irrelevant(self, noise_manifest):
        d, c = self._specs(noise_manifest)
        shuffled = list(np.random.default_rng(0).permutation(self.ids))
        a = build_plan(self.ids, d, c, 3, 25, 25, seed=5)
        b = build_plan(shuffled, d, c, 3, 25, 25, seed=5)
        assert sorted(a.entries, key=lambda e: e.out_id) == sorted(b.entries, key=lambda e: e.out_id)

    def test_budget_over_candidates(self):
        with pytest.raises(BudgetExceedsCandidates):
            build_plan(self.ids, [DistortionSpec("volume")], [], 2, 41, 0)

    def test_missing_specs_for_budget(self):
        with pytest.raises(EmptyManifest):
            build_plan(self.ids, [DistortionSpec("volume")], [], 2, 10, 10)

    def test_empty_and_duplicate_manifests(self):
        with pytest.raises(EmptyManifest):
            build_plan([], [DistortionSpec("volume")], [], 1, 0, 0)
        with pytest.raises(DataError):
            build_plan(["a", "a"], [DistortionSpec("volume")], [], 1, 1, 0)

    def test_drawn_parameters_in_range(self, noise_manifest):
        d = [DistortionSpec("volume", gain_db_range=(-3.0, 4.0)),
             DistortionSpec("noise", snr_db_range=(5.0, 6.0), noise_manifest=noise_manifest)]
        c = [CompressionSpec("mp3", "enc {in} {out}", bitrate_choices=(48, 96))]
        plan = build_plan(self.ids, d, c, 4, 60, 60, seed=2)
        for e in plan.entries:
            p = e.disturbance.params
            if e.disturbance.kind == "volume":
                assert -3.0 <= p["gain_db"] <= 4.0
            elif e.disturbance.kind == "noise":
                assert 5.0 <= p["snr_db"] <= 6.0
            else:
                assert p["bitrate"] in (48, 96)

    def test_plan_file_round_trip(self, tmp_path, noise_manifest):
        d, c = self._specs(noise_manifest)
        plan = build_plan(self.ids, d, c, 2, 15, 15, seed=9)
        write_plan(plan, tmp_path / "plan.tsv")
        back = read_plan(tmp_path / "plan.tsv")
        assert back.seed == 9 and back.entries == plan.entries

    def test_unknown_kinds(self):
        with pytest.raises(DataError):
            DistortionSpec("thunder")
        with pytest.raises(DataError):
            CompressionSpec("flac")
        with pytest.raises(DataError):
            CompressionSpec("mp3")  # real codec without a command
        with pytest.raises(EmptyManifest):
            DistortionSpec("reverb")


class TestDistortion:
    x = np.random.default_rng(4).uniform(-0.4, 0.4, 2000)

    def test_volume_zero_db(self):
        out = apply_distortion(AudioClip(self.x, SR), Disturbance("distortion", "volume", {"gain_db": 0.0}))
        np.testing.assert_array_equal(out.samples, self.x)

    def test_noise_copy_at_zero_db(self):
        clip = AudioClip(self.x, SR)
        dist = Disturbance("distortion", "noise", {"snr_db": 0.0, "path": "ignored", "noise_seed": 0})
        out = apply_distortion(clip, dist, loader=lambda _: AudioClip(self.x.copy(), SR))
        np.testing.assert_allclose(out.samples, np.clip(2 * self.x, -1, 1), rtol=1e-15)

    def test_reverb_delta(self):
        dist = Disturbance("distortion", "reverb", {"path": "ignored"})
        out = apply_distortion(AudioClip(self.x, SR), dist, loader=lambda _: AudioClip([0.0, 0.7, 0.0], SR))
        expected = np.concatenate([[0.0], self.x[:-1]])
        expected *= np.max(np.abs(self.x)) / np.max(np.abs(expected))
        np.testing.assert_allclose(out.samples, expected, atol=1e-15)

    def test_noise_loaded_from_disk_and_resampled(self, tmp_path):
        write_wav(AudioClip(_tone(300, 4000, 0.2)[::2], 8000), tmp_path / "n.wav")
        dist = Disturbance("distortion", "noise", {"snr_db": 10.0, "path": str(tmp_path / "n.wav"), "noise_seed": 1})
        out = apply_distortion(AudioClip(self.x, SR), dist)
        assert len(out) == len(self.x) and np.max(np.abs(out.samples)) <= 1.0


class TestCompression:
    def test_telephony_keeps_dc(self):
        out = telephony(AudioClip(np.full(SR, 0.3), SR))
        assert len(out) == SR
        np.testing.assert_allclose(out.samples[200:-200], 0.3, atol=1e-3)

    def test_surrogate_band_limits(self):
        low = surrogate_codec(AudioClip(_tone(1000), SR)).samples
        high = surrogate_codec(AudioClip(_tone(6000), SR)).samples
        ref = _band_level(_tone(1000), 1000)
        spec = np.abs(np.fft.rfft(low * np.hanning(SR)))
        assert abs(np.argmax(spec) - 1000) <= 1  # one-second clip, so bins are 1 Hz apart
        assert 20 * math.log10(_band_level(low, 1000) / ref) > -0.5
        assert 20 * math.log10(_band_level(high, 6000) / _band_level(_tone(6000), 6000)) <= -20

    def test_surrogate_quantised_to_ten_bits(self):
        out = surrogate_codec(AudioClip(_tone(500, 4000), SR)).samples
        np.testing.assert_array_equal(out * 512, np.round(out * 512))

    def test_external_codec_round_trip(self, codec_script, tmp_path):
        spec = CompressionSpec("mp3", f"{sys.executable} {codec_script} {{in}} {{out}} {{bitrate}}")
        clip = AudioClip(_tone(440, 3000, 0.3), SR)
        out = apply_compression(clip, spec, workdir=tmp_path, bitrate=64)
        assert len(out) == len(clip)
        # quantised to 16 bits, shortened by 2 samples, then zero-padded back
        np.testing.assert_allclose(out.samples[:-2], clip.samples[:-2], atol=1 / 32768)
        assert not np.any(out.samples[-2:])

    def test_separate_decoder(self, codec_script, tmp_path):
        enc = f"{sys.executable} {codec_script} {{in}} {{out}} 0"
        spec = CompressionSpec("ogg", enc, enc)
        clip = AudioClip(_tone(440, 1000, 0.3), SR)
        out = apply_compression(clip, spec, workdir=tmp_path)
        np.testing.assert_allclose(out.samples, clip.samples, atol=1 / 32768)

    def test_missing_encoder(self):
        spec = CompressionSpec("mp3", "definitely-not-an-encoder-xyz {in} {out}")
        with pytest.raises(EncoderNotFound):
            apply_compression(AudioClip(np.zeros(100), SR), spec)

    def test_codec_dir_prefix(self, monkeypatch, tmp_path):
        monkeypatch.setenv(augment.CODEC_DIR_ENV, str(tmp_path))
        spec = CompressionSpec("mp3", "python3 {in} {out}")
        with pytest.raises(EncoderNotFound):
            apply_compression(AudioClip(np.zeros(100), SR), spec)

    def test_failing_encoder(self):
        spec = CompressionSpec("aac", f"{sys.executable} -c 'import sys; sys.exit(4)'")
        with pytest.raises(EncoderFailed):
            apply_compression(AudioClip(np.zeros(100), SR), spec)

    def test_unconfigured_real_codec(self):
        with pytest.raises(EncoderNotFound):
            apply_disturbance(AudioClip(np.zeros(100), SR), Disturbance("compression", "opus", {"bitrate": 32}))


def test_execute_plan_renders_bounded_audio(tmp_path, noise_manifest):
    rng = np.random.default_rng(1)
    sources = {}
    for i in range(4):
        path = tmp_path / f"s{i}.wav"
        write_wav(AudioClip(rng.uniform(-0.9, 0.9, 3000), SR), path)
        sources[f"s{i}"] = path
    d = [DistortionSpec("volume"), DistortionSpec("noise", snr_db_range=(-5, 0), noise_manifest=noise_manifest)]
    c = [CompressionSpec("telephony"), CompressionSpec("surrogate")]
    plan = build_plan(list(sources), d, c, 3, 6, 6, seed=1)
    out = execute_plan(plan, sources, tmp_path / "out", workers=2)
    assert sorted(out) == sorted(e.out_id for e in plan.entries)
    for path in out.values():
        clip = read_wav(path)
        assert len(clip) == 3000 and np.max(np.abs(clip.samples)) <= 1.0
    with pytest.raises(DataError):
        execute_plan(plan, {"s0": sources["s0"]}, tmp_path / "out2")


class TestSpecAugment:
    def test_zero_percent_identity(self):
        v = np.random.default_rng(0).standard_normal((60, 20))
        cfg = SpecAugmentConfig(f_pct=0, t_pct=0, rows=3, cols=3, fill_value=9.0)
        for seed in range(20):
            assert np.array_equal(spec_augment_array(v, cfg, np.random.default_rng(seed)), v)

    def test_width_bounds_over_draws(self):
        cfg = SpecAugmentConfig(10, 10, 1, 1)
        rng = np.random.default_rng(123)
        for _ in range(1000):
            frames, dim = int(rng.integers(1, 200)), int(rng.integers(1, 100))
            masked = spec_augment_array(np.ones((frames, dim)), cfg, rng) == 0
            # a 10% mask never spans a whole axis, so full columns come only
            # from frequency masks and full rows only from time masks
            assert np.sum(masked.all(axis=0)) <= math.floor(0.1 * dim)
            assert np.sum(masked.all(axis=1)) <= math.floor(0.1 * frames)

    def test_mask_lists_within_bounds(self):
        cfg = SpecAugmentConfig(10, 10, 1, 1)
        rng = np.random.default_rng(9)
        for _ in range(1000):
            fm, tm = draw_masks(60, 20, cfg, rng)
            assert len(fm) <= 1 and len(tm) <= 1
            assert all(w <= 2 and 0 <= s <= 20 - w for s, w in fm)
            assert all(w <= 6 and 0 <= s <= 60 - w for s, w in tm)

    def test_seeded_placement(self):
        v = np.random.default_rng(0).standard_normal((80, 40))
        cfg = SpecAugmentConfig(30, 30, 2, 2)
        a = spec_augment(FeatureMatrix(v), cfg, np.random.default_rng(5)).values
        b = spec_augment(FeatureMatrix(v), cfg, np.random.default_rng(5)).values
        assert np.array_equal(a, b)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2 ** 20), f=st.floats(0, 50), t=st.floats(0, 50),
           rows=st.integers(0, 3), cols=st.integers(0, 3),
           frames=st.integers(1, 120), dim=st.integers(1, 60))
    def test_unmasked_cells_untouched(self, seed, f, t, rows, cols, frames, dim):
        v = np.random.default_rng(seed).standard_normal((frames, dim)) + 5.0
        cfg = SpecAugmentConfig(f, t, rows, cols, fill_value=-1.0)
        out = spec_augment_array(v, cfg, np.random.default_rng(seed))
        changed = out != v
        assert np.all(out[changed] == -1.0)
        bound = rows * max_mask_width(f, dim) / dim + cols * max_mask_width(t, frames) / frames
        assert changed.mean() <= bound + 1e-12

    def test_max_width_rounding(self):
        assert max_mask_width(10, 20) == 2
        assert max_mask_width(29, 100) == 29
        assert max_mask_width(10, 9) == 0
