import json
import math
import wave
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from avatar_cascade.errors import AudioFormatError, ClipFormatError, MediaIOError, ValidationError
from avatar_cascade.media import (AudioTrack, Clip, Frame, TimeGrid, frames_for_audio, load_audio, load_clip,
                                  resample_linear, round_half_away, save_audio, save_clip, save_frame)


def random_clip(n=3, w=4, h=4, seed=0, fps=48):
    rng = np.random.default_rng(seed)
    return Clip(tuple(Frame(rng.integers(0, 256, (h, w, 3), dtype=np.uint8)) for _ in range(n)), fps=fps)


def write_wav(path, data, rate, channels=1, width=2):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(width)
        w.setframerate(rate)
        w.writeframes(np.asarray(data).astype("<i2").tobytes() if width == 2 else bytes(data))


class TestFrame:
    def test_rejects_bad_shapes(self):
        with pytest.raises(ValidationError):
            Frame(np.zeros((0, 4, 3), dtype=np.uint8))
        with pytest.raises(ValidationError):
            Frame(np.zeros((4, 4), dtype=np.uint8))

    def test_immutable(self):
        f = Frame.filled(2, 2, (1, 2, 3))
        with pytest.raises(ValueError):
            f.pixels[0, 0, 0] = 9

    def test_clip_rejects_mixed_sizes(self):
        with pytest.raises(ValidationError):
            Clip((Frame.filled(2, 2, (0, 0, 0)), Frame.filled(3, 2, (0, 0, 0))))


class TestClipIO:
    def test_round_trip(self, tmp_path):
        clip = random_clip(3)
        save_clip(clip, tmp_path / "c")
        back = load_clip(tmp_path / "c")
        assert back.frames == clip.frames and back.fps == 48

    def test_missing_frame(self, tmp_path):
        save_clip(random_clip(3), tmp_path)
        (tmp_path / "frame_000002.ppm").unlink()
        with pytest.raises(ClipFormatError, match="missing frame 2"):
            load_clip(tmp_path)

    def test_dimension_mismatch_names_frame(self, tmp_path):
        save_clip(random_clip(3), tmp_path)
        save_frame(Frame.filled(8, 8, (1, 1, 1)), tmp_path / "frame_000001.ppm")
        with pytest.raises(ClipFormatError, match="frame 1"):
            load_clip(tmp_path)

    def test_extra_frame(self, tmp_path):
        save_clip(random_clip(3), tmp_path)
        save_frame(Frame.filled(4, 4, (1, 1, 1)), tmp_path / "frame_000003.ppm")
        with pytest.raises(ClipFormatError, match="extra frame 3"):
            load_clip(tmp_path)

    def test_empty_clip(self, tmp_path):
        with pytest.raises(ValidationError, match="empty clip"):
            save_clip(Clip(()), tmp_path)

    def test_duration_recorded(self, tmp_path):
        save_clip(random_clip(96, 2, 2), tmp_path)
        meta = json.loads((tmp_path / "clip.json").read_text())
        assert meta["duration"] == 2.0 and meta["num_frames"] == 96 and meta["fps"] == 48

    def test_missing_dir_is_io_error(self, tmp_path):
        with pytest.raises(MediaIOError):
            load_clip(tmp_path / "nope")

    def test_ppm_is_binary_p6(self, tmp_path):
        save_clip(random_clip(1), tmp_path)
        assert (tmp_path / "frame_000000.ppm").read_bytes().startswith(b"P6")

    @given(st.integers(1, 4), st.integers(1, 6), st.integers(1, 6), st.integers(0, 1000))
    def test_round_trip_property(self, n, w, h, seed):
        import tempfile
        clip = random_clip(n, w, h, seed, fps=Fraction(30000, 1001))
        with tempfile.TemporaryDirectory() as d:
            save_clip(clip, d)
            back = load_clip(d)
        assert back.frames == clip.frames
        assert abs(float(back.fps) - float(clip.fps)) < 1e-12


class TestAudioIO:
    def test_full_scale_constant(self, tmp_path):
        write_wav(tmp_path / "a.wav", np.full(1600, 32767), 16000)
        a = load_audio(tmp_path / "a.wav")
        assert a.sample_rate == 16000
        assert np.all(np.abs(a.samples - 1.0) <= 1 / 32768 + 1e-12)

    def test_downsample_length(self, tmp_path):
        n = 3201
        write_wav(tmp_path / "a.wav", np.zeros(n), 32000)
        a = load_audio(tmp_path / "a.wav")
        assert abs(len(a) - n // 2) <= 1

    def test_stereo_averaged(self, tmp_path):
        inter = np.stack([np.full(100, 1000), np.full(100, 3000)], axis=1).reshape(-1)
        write_wav(tmp_path / "s.wav", inter, 16000, channels=2)
        a = load_audio(tmp_path / "s.wav")
        assert np.allclose(a.samples, 2000 / 32768)

    def test_mulaw_rejected(self, tmp_path):
        # format tag 7 is mu-law
        p = tmp_path / "u.wav"
        data = bytes(100)
        hdr = (b"RIFF" + (36 + len(data)).to_bytes(4, "little") + b"WAVEfmt " + (16).to_bytes(4, "little")
               + (7).to_bytes(2, "little") + (1).to_bytes(2, "little") + (8000).to_bytes(4, "little")
               + (8000).to_bytes(4, "little") + (1).to_bytes(2, "little") + (8).to_bytes(2, "little")
               + b"data" + len(data).to_bytes(4, "little"))
        p.write_bytes(hdr + data)
        with pytest.raises(AudioFormatError, match="unsupported encoding"):
            load_audio(p)

    def test_8bit_rejected(self, tmp_path):
        write_wav(tmp_path / "b.wav", bytes(100), 8000, width=1)
        with pytest.raises(AudioFormatError, match="unsupported encoding"):
            load_audio(tmp_path / "b.wav")

    def test_corrupt_header(self, tmp_path):
        (tmp_path / "c.wav").write_bytes(b"RIFFjunkjunk")
        with pytest.raises(AudioFormatError, match="corrupt"):
            load_audio(tmp_path / "c.wav")

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        t = AudioTrack(rng.uniform(-1, 1, 800))
        save_audio(t, tmp_path / "x.wav")
        back = load_audio(tmp_path / "x.wav")
        assert np.max(np.abs(back.samples - t.samples)) <= 1 / 32768

    def test_rejects_out_of_range_samples(self):
        with pytest.raises(ValidationError):
            AudioTrack(np.array([1.5]))

    @given(st.integers(1, 5000), st.sampled_from([8000, 11025, 22050, 44100, 48000]))
    def test_resampling_preserves_duration(self, n, rate):
        out = resample_linear(np.zeros(n), rate, 16000)
        assert abs(len(out) / 16000 - n / rate) <= 1 / 16000 + 1e-12


class TestFramesForAudio:
    def test_examples(self):
        assert frames_for_audio(12.5, 48) == 600
        assert frames_for_audio(0, 48) == 0

    def test_half_rounds_away(self):
        # 97/96 s is exactly 48.5 frames
        assert frames_for_audio(Fraction(97, 96), 48) == 49
        # 1.0104 s is 48.4992 frames
        assert frames_for_audio(1.0104, 48) == 48

    def test_reference_rounding_table(self):
        from decimal import ROUND_HALF_UP, Decimal
        for k in range(-40, 41):
            x = Fraction(k, 4)
            ref = int((abs(Decimal(k) / 4)).quantize(Decimal(1), rounding=ROUND_HALF_UP)) * (1 if k >= 0 else -1)
            assert round_half_away(x) == ref

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValidationError):
            frames_for_audio(-1, 48)
        with pytest.raises(ValidationError):
            frames_for_audio(1, 0)


class TestTimeGrid:
    @given(st.integers(1, 120), st.integers(1, 120), st.integers(0, 500))
    def test_overlap_is_nonempty_contiguous(self, fps, rate, i):
        g = TimeGrid(fps, rate)
        lo, hi = g.tokens_for_frame(i)
        f0, f1 = g.frame_interval(i)
        overlapping = [j for j in range(max(0, lo - 3), hi + 4)
                       if g.token_interval(j)[0] < f1 and g.token_interval(j)[1] > f0]
        assert overlapping == list(range(lo, hi + 1))

    def test_center_token_inside_range(self):
        g = TimeGrid(48, 50)
        for i in range(200):
            lo, hi = g.tokens_for_frame(i)
            assert lo <= g.center_token(i) <= hi

    def test_rejects_nonpositive(self):
        with pytest.raises(ValidationError):
            TimeGrid(0, 50)
