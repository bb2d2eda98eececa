import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from img2wav import dataset as D
from img2wav.audio_io import WavFormatError, read_wav, write_wav
from img2wav.metrics import corr2d, stft_magnitude


@pytest.fixture
def rng():
    return np.random.default_rng(42)


class TestNormalizeImage:
    def test_constant_image_is_zero(self):
        out = D.normalize_image(np.full((4, 4, 1), 0.7))
        assert np.array_equal(out, np.zeros((1, 4, 4)))

    def test_single_pixel_is_zero(self):
        out = D.normalize_image(np.array([[[0.9]]]))
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 0.0

    def test_two_by_two_case(self):
        # mu=1, theta=1, clamp 1/sqrt(4)=0.5 -> divide by 1
        img = np.array([[0.0, 0.0], [2.0, 2.0]])[:, :, None]
        out = D.normalize_image(img)
        assert np.array_equal(out[0], np.array([[-1.0, -1.0], [1.0, 1.0]]))

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_zero_mean_when_spread_enough(self, seed):
        rng = np.random.default_rng(seed)
        img = rng.random((5, 6, 3))
        p = img.size
        out = D.normalize_image(img)
        assert np.isfinite(out).all()
        if img.std() > 1.0 / np.sqrt(p):
            assert abs(out.mean()) < 1e-9

    def test_channel_first_layout(self, rng):
        img = rng.random((3, 5, 2))
        assert D.normalize_image(img).shape == (2, 3, 5)


class TestWavIO:
    def test_silence_round_trip_exact(self, tmp_path):
        path = tmp_path / "s.wav"
        write_wav(path, np.zeros(100), 8000)
        samples, rate = read_wav(path)
        assert rate == 8000
        assert np.array_equal(samples, np.zeros(100))

    def test_full_scale_sine_round_trip(self, tmp_path):
        t = np.arange(400)
        x = np.sin(2 * np.pi * 440 * t / 8000)
        path = tmp_path / "sine.wav"
        write_wav(path, x, 8000)
        samples, _ = read_wav(path)
        assert np.abs(samples - x).max() <= 1.0 / 32768.0

    @given(st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_random_round_trip_bound(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1, 1, size=64)
        import tempfile, os

        fd, path = tempfile.mkstemp(suffix=".wav")
        os.close(fd)
        try:
            write_wav(path, x, 16000)
            samples, _ = read_wav(path)
        finally:
            os.unlink(path)
        assert np.abs(samples - x).max() <= 1.0 / 32768.0

    def test_golden_header_bytes(self, tmp_path):
        path = tmp_path / "h.wav"
        write_wav(path, np.zeros(10), 8000)
        raw = path.read_bytes()
        assert raw[0:4] == b"RIFF"
        assert raw[8:12] == b"WAVE"
        assert raw[12:16] == b"fmt "
        fmt_size, audio_format, channels = struct.unpack_from("<IHH", raw, 16)
        rate, byte_rate, block_align, bits = struct.unpack_from("<IIHH", raw, 24)
        assert (fmt_size, audio_format, channels) == (16, 1, 1)
        assert (rate, byte_rate, block_align, bits) == (8000, 16000, 2, 16)
        assert raw[36:40] == b"data"
        (data_len,) = struct.unpack_from("<I", raw, 40)
        assert data_len == 20 and len(raw) == 44 + 20

    def test_clamps_out_of_range(self, tmp_path):
        path = tmp_path / "c.wav"
        write_wav(path, np.array([2.0, -2.0]), 8000)
        samples, _ = read_wav(path)
        assert np.array_equal(samples, [1.0, -1.0])

    def test_malformed_header_rejected(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"JUNKJUNKJUNKJUNK")
        with pytest.raises(WavFormatError, match="RIFF"):
            read_wav(path)

    def test_truncated_data_rejected(self, tmp_path):
        path = tmp_path / "t.wav"
        write_wav(path, np.zeros(100), 8000)
        raw = path.read_bytes()
        path.write_bytes(raw[:-50])
        with pytest.raises(WavFormatError, match="truncated"):
            read_wav(path)

    def test_stereo_rejected(self, tmp_path):
        data = struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 36, b"WAVE", b"fmt ", 16, 1, 2, 8000, 32000, 4, 16, b"data", 0)
        path = tmp_path / "st.wav"
        path.write_bytes(data)
        with pytest.raises(WavFormatError, match="channel"):
            read_wav(path)


class TestNetpbm:
    @pytest.mark.parametrize("channels", [1, 3])
    def test_round_trip_exact_at_8bit(self, tmp_path, rng, channels):
        img = np.round(rng.random((6, 5, channels)) * 255) / 255.0
        path = tmp_path / ("i.pgm" if channels == 1 else "i.ppm")
        D.write_netpbm(path, img)
        back = D.read_netpbm(path)
        assert np.abs(back - img).max() < 1e-12

    def test_comment_in_header(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 2\n255\n" + bytes([0, 128, 255, 64]))
        img = D.read_netpbm(path)
        assert img.shape == (2, 2, 1)
        assert abs(img[0, 1, 0] - 128 / 255) < 1e-12

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(ValueError, match="PGM"):
            D.read_netpbm(path)


class TestSynthWords:
    def test_bit_identical_for_same_inputs(self):
        a = D.synthesize_word_audio(3, 8000, seed=11)
        b = D.synthesize_word_audio(3, 8000, seed=11)
        assert np.array_equal(a.samples, b.samples)

    def test_different_seeds_jitter_the_clip(self):
        a = D.synthesize_word_audio(3, 8000, seed=1)
        b = D.synthesize_word_audio(3, 8000, seed=2)
        assert len(a.samples) != len(b.samples) or not np.array_equal(a.samples, b.samples)

    def test_duration_within_bounds(self):
        for cid in range(10):
            for seed in (0, 5):
                clip = D.synthesize_word_audio(cid, 8000, seed=seed, duration_ms=(322.0, 823.0))
                ms = 1000.0 * len(clip.samples) / clip.sample_rate
                assert 322.0 <= ms <= 823.0

    def test_classes_are_separable(self):
        # spectrogram correlation across different classes stays low
        for a in range(4):
            for b in range(a + 1, 4):
                ca = D.synthesize_word_audio(a, 8000, seed=3)
                cb = D.synthesize_word_audio(b, 8000, seed=3)
                n = min(len(ca.samples), len(cb.samples))
                r = corr2d(
                    stft_magnitude(ca.samples[:n], 8000).mag,
                    stft_magnitude(cb.samples[:n], 8000).mag,
                )
                assert abs(r) < 0.7, (a, b, r)

    def test_peak_normalized(self):
        clip = D.synthesize_word_audio(0, 8000, seed=0)
        assert abs(np.abs(clip.samples).max() - 0.9) < 1e-9


class TestPadClip:
    def test_prefix_preserved_and_tail_zero(self, rng):
        clip = D.AudioClip(rng.uniform(-1, 1, 50), 8000, 50, 50)
        padded = D.pad_clip(clip, 80)
        assert np.array_equal(padded.samples[:50], clip.samples)
        assert not padded.samples[50:].any()
        assert padded.original_len == 50 and padded.padded_len == 80

    def test_too_long_rejected(self, rng):
        clip = D.AudioClip(rng.uniform(-1, 1, 50), 8000, 50, 50)
        with pytest.raises(ValueError, match="fit"):
            D.pad_clip(clip, 40)


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    spec = D.DatasetSpec(
        name="toy", classes=10, train_per_class=8, test_per_class=2,
        seed=7, sample_rate=8000, image_size=12, duration_ms=(322.0, 480.0),
    )
    manifest = D.build_dataset(spec, out)
    return spec, out, manifest


class TestBuildDataset:
    def test_counts(self, built):
        _, _, manifest = built
        assert len(manifest.records) == 100
        assert len(manifest.split("train")) == 80
        assert len(manifest.split("test")) == 20

    def test_l_s_is_observed_maximum(self, built):
        _, out, manifest = built
        longest = 0
        for r in manifest.records:
            samples, _ = read_wav(out / r.audio_path)
            assert len(samples) == manifest.l_s
            longest = max(longest, r.original_len)
        assert manifest.l_s == longest

    def test_padding_preserves_prefix_and_zero_tail(self, built):
        _, out, manifest = built
        r = manifest.records[0]
        samples, _ = read_wav(out / r.audio_path)
        clip = D.synthesize_word_audio(r.label, 8000, 7 * 1_000_003 + 0, (322.0, 480.0))
        assert np.abs(samples[: r.original_len] - clip.samples).max() <= 1.0 / 32768.0
        assert not samples[r.original_len :].any()

    def test_pairing_is_bijective(self, built):
        _, _, manifest = built
        ids = [r.id for r in manifest.records]
        assert len(set(ids)) == len(ids)
        images = {r.image_path for r in manifest.records}
        audios = {r.audio_path for r in manifest.records}
        assert len(images) == len(ids) and len(audios) == len(ids)

    def test_manifest_round_trip(self, built, tmp_path):
        _, out, manifest = built
        loaded = D.load_manifest(out / "manifest.txt")
        assert loaded == manifest

    def test_load_example(self, built):
        _, out, manifest = built
        image, clip = D.load_example(out, manifest.records[0], manifest.l_s, manifest.sample_rate)
        assert image.pixels.shape == (12, 12, 1)
        assert image.label == manifest.records[0].label
        assert clip.padded_len == manifest.l_s

    def test_regeneration_is_checksum_stable(self, built, tmp_path):
        spec, out, _ = built
        again = tmp_path / "again"
        D.build_dataset(spec, again)
        assert D.manifest_checksum(out) == D.manifest_checksum(again)

    def test_different_seed_changes_checksum(self, built, tmp_path):
        spec, out, _ = built
        other = tmp_path / "other"
        spec2 = D.DatasetSpec(
            name="toy", classes=10, train_per_class=8, test_per_class=2,
            seed=8, sample_rate=8000, image_size=12, duration_ms=(322.0, 480.0),
        )
        D.build_dataset(spec2, other)
        assert D.manifest_checksum(out) != D.manifest_checksum(other)


class TestDatasetSpecEdges:
    def test_single_class_degenerate_set(self, tmp_path):
        spec = D.DatasetSpec(name="one", classes=1, train_per_class=2, test_per_class=1,
                             seed=1, image_size=8, duration_ms=(322.0, 400.0))
        manifest = D.build_dataset(spec, tmp_path)
        assert len(manifest.records) == 3
        assert {r.label for r in manifest.records} == {0}

    def test_empty_spec_rejected(self, tmp_path):
        spec = D.DatasetSpec(name="none", classes=2, train_per_class=0, test_per_class=0, seed=1)
        with pytest.raises(ValueError, match="no examples"):
            D.build_dataset(spec, tmp_path)

    def test_bad_magic_manifest_rejected(self, tmp_path):
        path = tmp_path / "manifest.txt"
        path.write_text("something else\n")
        with pytest.raises(ValueError, match="magic"):
            D.load_manifest(path)

    def test_glyphs_differ_between_classes(self):
        jit = np.random.default_rng(0)
        a = D._glyph_image(0, 12, 1, np.random.default_rng(0))
        b = D._glyph_image(1, 12, 1, np.random.default_rng(0))
        assert np.abs(a - b).max() > 0.1
