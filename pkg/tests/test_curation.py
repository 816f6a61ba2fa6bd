import json
import shutil

import numpy as np
import pytest
from hypothesis import given, strategies as st

from avatar_cascade.audio import AudioFeatures
from avatar_cascade.conditioning import MouthBox, save_keypoints
from avatar_cascade.config import Config
from avatar_cascade.curation import (LIP_CLARITY_SCALE, Thresholds, aesthetic_components, best_lag,
                                     detect_scene_cuts, lagged_correlation, run_curation, score_aesthetic,
                                     score_lip_clarity, score_sync, write_manifest)
from avatar_cascade.errors import ValidationError
from avatar_cascade.media import Clip, Frame, save_audio, save_clip
from avatar_cascade.pipeline import generate_video, write_outputs
from avatar_cascade.synthetic import (checker_mouth_clip, portrait, scene, shift_frames, speech_audio,
                                      talking_clip)


def frame_features(values, fps=48, rate=50):
    """Token-grid features whose envelope, sampled at frame centers, equals ``values``."""
    n_tok = int(np.ceil(len(values) * rate / fps)) + 1
    env = np.zeros(n_tok)
    from avatar_cascade.media import TimeGrid
    g = TimeGrid(fps, rate)
    for i, v in enumerate(values):
        env[g.center_token(i)] = v
    return AudioFeatures(rate, env, env > 0.05, np.full((n_tok, 4), 0.25), env, n_tok / rate)


class TestSceneCuts:
    def test_red_blue(self):
        clip = Clip(tuple(scene((255, 0, 0), 40) + scene((0, 0, 255), 40)))
        assert detect_scene_cuts(clip) == [40]

    def test_constant(self):
        assert detect_scene_cuts(Clip(tuple(scene((9, 9, 9), 10)))) == []

    def test_gradual_dissolve(self):
        # black->white dissolve: n_k pixels are white in frame k
        size, steps = 32, 100
        order = np.random.default_rng(0).permutation(size * size)
        counts = [round(size * size * k / (steps - 1)) for k in range(steps)]
        frames = []
        for n in counts:
            flat = np.zeros(size * size, dtype=np.uint8)
            flat[order[:n]] = 255
            frames.append(Frame(np.repeat(flat.reshape(size, size, 1), 3, axis=2)))
        max_step = max(b - a for a, b in zip(counts, counts[1:])) / (size * size)
        assert max_step < 0.3
        assert detect_scene_cuts(Clip(tuple(frames))) == []

    def test_single_frame(self):
        with pytest.raises(ValidationError):
            detect_scene_cuts(Clip(tuple(scene((0, 0, 0), 1))))

    @given(st.integers(0, 60), st.integers(5, 40))
    def test_brightness_offset_invariance(self, offset, at):
        a, b = (40, 90, 30), (120, 20, 150)
        base = Clip(tuple(scene(a, at) + scene(b, 50 - at)))
        shifted = Clip(tuple(scene(tuple(c + offset for c in a), at) + scene(tuple(c + offset for c in b), 50 - at)))
        assert detect_scene_cuts(base) == detect_scene_cuts(shifted) == [at]


def laplacian_oracle(gray):
    h, w = gray.shape
    out = np.empty((h - 2, w - 2))
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            out[y - 1, x - 1] = gray[y - 1, x] + gray[y + 1, x] + gray[y, x - 1] + gray[y, x + 1] - 4 * gray[y, x]
    return out.var()


class TestLipClarity:
    def test_sharp_beats_blurred(self):
        sharp, sb = checker_mouth_clip(seed=1)
        blurred, bb = checker_mouth_clip(seed=1, blur_radius=2)
        assert score_lip_clarity(sharp, sb) > score_lip_clarity(blurred, bb)

    def test_uniform_crop(self):
        clip = Clip(tuple(scene((80, 90, 100), 4)))
        assert score_lip_clarity(clip, {i: MouthBox(2, 2, 10, 10, 1.0) for i in range(4)}) == 0

    def test_hand_computed(self):
        rng = np.random.default_rng(2)
        gray = rng.integers(0, 256, (7, 9))
        frame = Frame(np.repeat(gray[..., None], 3, axis=2).astype(np.uint8))
        box = MouthBox(0, 0, 8, 6, 1.0)
        got = score_lip_clarity(Clip((frame,)), {0: box})
        luma = gray * (0.299 + 0.587 + 0.114)
        assert got == pytest.approx(laplacian_oracle(luma) / LIP_CLARITY_SCALE, rel=1e-9)

    def test_too_few_boxes(self):
        clip = Clip(tuple(scene((1, 2, 3), 5)))
        with pytest.raises(ValidationError):
            score_lip_clarity(clip, {0: MouthBox(0, 0, 5, 5, 1.0), 1: MouthBox(0, 0, 5, 5, 1.0)})

    def test_low_confidence_counts_as_missing(self):
        clip = Clip(tuple(scene((1, 2, 3), 2)))
        with pytest.raises(ValidationError):
            score_lip_clarity(clip, {0: MouthBox(0, 0, 5, 5, 0.1), 1: MouthBox(0, 0, 5, 5, 0.1)})


def brute_lag(m, a, L):
    best = None
    for lag in range(-L, L + 1):
        idx = [i for i in range(len(m)) if 0 <= i + lag < len(a)]
        x, y = m[idx], a[[i + lag for i in idx]]
        c = 0.0 if x.std() == 0 or y.std() == 0 else float(np.corrcoef(x, y)[0, 1])
        key = (-round(c, 12), abs(lag), lag)
        if best is None or key < best[0]:
            best = (key, lag, c)
    return best[1], best[2]


class TestSync:
    def test_identity(self):
        m = np.random.default_rng(0).uniform(size=200)
        lag, c = best_lag(m, m, 12)
        assert lag == 0 and c == pytest.approx(1.0, abs=1e-9)

    def test_delay_three(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(size=300)
        m = shift_frames(a, -3)  # mouth leads: m[i] = a[i + 3]
        assert best_lag(m, a, 12)[0] == 3 == brute_lag(m, a, 12)[0]

    def test_independent_noise(self):
        rng = np.random.default_rng(2)
        assert abs(best_lag(rng.uniform(size=500), rng.uniform(size=500), 12)[1]) < 0.2

    def test_constant_is_zero(self):
        assert lagged_correlation(np.ones(50), np.arange(50.0), 0) == 0.0
        assert best_lag(np.ones(50), np.arange(50.0), 3) == (0, 0.0)

    @given(st.integers(0, 10 ** 6))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(size=80)
        m = 0.5 * shift_frames(a, int(rng.integers(-6, 7))) + 0.5 * rng.uniform(size=80)
        lag, c = best_lag(m, a, 8)
        ref_lag, ref_c = brute_lag(m, a, 8)
        assert lag == ref_lag and c == pytest.approx(ref_c, abs=1e-9)

    def test_end_to_end_on_rendered_mouth(self):
        env = np.clip(np.random.default_rng(3).uniform(size=144), 0, 1)
        clip, boxes = talking_clip(env, 40, 40)
        lag, c = score_sync(clip, boxes, frame_features(env))
        assert lag == 0 and c > 0.95

    @given(st.integers(-10, 10), st.integers(0, 1000))
    def test_lag_equivariance(self, k, seed):
        rng = np.random.default_rng(seed)
        env = np.convolve(rng.uniform(size=200), np.ones(3) / 3, mode="same")
        clip, boxes = talking_clip(env, 32, 32)
        lag, _ = score_sync(clip, boxes, frame_features(shift_frames(env, k)))
        assert abs(lag - k) <= 1

    def test_too_short(self):
        env = np.ones(60)
        clip, boxes = talking_clip(env, 32, 32)
        with pytest.raises(ValidationError):
            score_sync(clip, boxes, frame_features(env))


class TestAesthetic:
    def test_uniform_gray(self):
        assert score_aesthetic(Clip(tuple(scene((128, 128, 128), 30)))) == 0

    def test_colorful_texture_increases(self):
        base = Clip(tuple(scene((100, 110, 120), 24)))
        rng = np.random.default_rng(4)
        noisy = Clip(tuple(Frame(np.clip(f.pixels + rng.integers(0, 60, f.pixels.shape), 0, 255).astype(np.uint8))
                           for f in base.frames))
        assert score_aesthetic(noisy) > score_aesthetic(base)

    def test_hand_computed_components(self):
        # left half pure red, right half pure blue on a 4x4 frame
        px = np.zeros((4, 4, 3), dtype=np.uint8)
        px[:, :2, 0] = 255
        px[:, 2:, 2] = 255
        f = Frame(px)
        s, c, col = aesthetic_components(f)
        lr, lb = 0.299 * 255, 0.114 * 255
        gray = np.array([[lr, lr, lb, lb]] * 4)
        lap = np.array([[lr + lr + lr + lb - 4 * lr, lr + lb + lb + lb - 4 * lb]] * 2)
        assert s == pytest.approx(min(1, lap.var() / 1000))
        assert c == pytest.approx(gray.std() / 128)
        # rg: 255 | 0 ; yb: 127.5 | -255
        assert col == pytest.approx(min(1, (127.5 + 191.25) / 2 / 128))
        assert score_aesthetic(Clip((f,))) == pytest.approx(0.4 * s + 0.3 * c + 0.3 * col)

    def test_samples_every_twelfth(self):
        gray, red = Frame.filled(4, 4, (128, 128, 128)), Frame.filled(4, 4, (255, 0, 0))
        frames = [red if i % 12 else gray for i in range(24)]
        assert score_aesthetic(Clip(tuple(frames))) == 0

    def test_empty(self):
        with pytest.raises(ValidationError):
            score_aesthetic(Clip(()))


@pytest.fixture(scope="module")
def clip_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("curate")
    cfg = Config(workers=2)
    audio = speech_audio(4.0, 9)
    res = generate_video(portrait(40, 40, 9), audio, "", cfg)
    good = write_outputs(res, audio, root / "good", cfg)
    bad_sync = root / "bad_sync"
    shutil.copytree(good, bad_sync)
    save_audio(speech_audio(4.0, 10), bad_sync / "audio.wav")
    spliced = root / "spliced"
    shutil.copytree(good, spliced)
    for i in range(100, len(res.clip)):
        from avatar_cascade.media import save_frame
        save_frame(Frame.filled(40, 40, (250, 250, 10)), spliced / f"frame_{i:06d}.ppm")
    return root, good, bad_sync, spliced


class TestRunCuration:
    def test_verdicts(self, clip_dirs):
        root, good, bad_sync, spliced = clip_dirs
        recs = run_curation([good, bad_sync, spliced, root / "missing"])
        assert recs[0]["verdict"] == "keep" and recs[0]["failed"] == []
        assert recs[1]["verdict"] == "drop" and recs[1]["failed"] == ["sync"]
        assert recs[1]["sync"]["confidence"] < 0.5
        assert "scene_cut" in recs[2]["failed"] and recs[2]["scene_cuts"] == [100]
        assert recs[3]["failed"] == ["io_error"] and recs[3]["verdict"] == "drop"

    def test_keep_iff_all_pass(self, clip_dirs):
        root, good, *_ = clip_dirs
        rec = run_curation([good], Thresholds(min_aesthetic=0.99))[0]
        assert rec["verdict"] == "drop" and rec["failed"] == ["aesthetic"]
        rec = run_curation([good], Thresholds(None, None, None, None, None))[0]
        assert rec["verdict"] == "keep"

    def test_sibling_keypoints_preferred(self, clip_dirs, tmp_path):
        root, good, *_ = clip_dirs
        d = tmp_path / "c"
        shutil.copytree(good, d)
        save_keypoints({}, tmp_path / "c.kp.jsonl")
        rec = run_curation([d])[0]
        assert rec["lip_clarity"] is None and "lip_clarity" in rec["failed"]

    def test_parallel_byte_identical(self, clip_dirs, tmp_path):
        root, good, bad_sync, spliced = clip_dirs
        dirs = [good, bad_sync, spliced, good, root / "missing"] * 2
        write_manifest(run_curation(dirs, workers=1), tmp_path / "a.jsonl")
        write_manifest(run_curation(dirs, workers=8), tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
        lines = [json.loads(l) for l in (tmp_path / "a.jsonl").read_text().splitlines()]
        assert [l["clip"] for l in lines] == [str(d) for d in dirs]

    def test_thresholds_finite(self):
        with pytest.raises(ValidationError):
            Thresholds(min_sync_confidence=float("nan"))


def test_shift_audio_keeps_length_and_moves_content():
    from avatar_cascade.media import AudioTrack
    from avatar_cascade.synthetic import shift_audio
    x = np.linspace(-1, 1, 3200)
    a = AudioTrack(x)
    later, earlier = shift_audio(a, 3, 48), shift_audio(a, -3, 48)
    assert len(later) == len(earlier) == 3200
    assert np.array_equal(later.samples[1000:], x[:2200]) and not later.samples[:1000].any()
    assert np.array_equal(earlier.samples[:2200], x[1000:])
