"""Acceptance suite: one PASS/FAIL line per criterion.

Run under pytest (``pytest tests/test_acceptance.py -v``) or directly with
``python tests/test_acceptance.py``.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from avatar_cascade.audio import AudioCaption, extract_features
from avatar_cascade.backend import ProceduralBackend, SleepBackend
from avatar_cascade.bench import (DATA_DIR, MUTANTS, GsbRecord, load_composition, load_manifest, tally,
                                  validate_manifest)
from avatar_cascade.cascade import build_jobs, plan_segments, run_parallel, select_anchors, stitch
from avatar_cascade.conditioning import MouthBox, build_audio_mask, build_weight_mask, cfg_combine, weighted_loss
from avatar_cascade.config import Config
from avatar_cascade.curation import detect_scene_cuts, score_lip_clarity, score_sync
from avatar_cascade.director import (DEFAULT_ACTION, DEFAULT_CAMERA, DEFAULT_EMOTION, ImageCaption,
                                     compose_storyline, parse_prompt)
from avatar_cascade.errors import StitchError
from avatar_cascade.media import Clip, Frame, TimeGrid
from avatar_cascade.pipeline import generate_video, write_outputs
from avatar_cascade.synthetic import lip_clarity_pair, portrait, shift_audio, speech_audio, spliced_pair

FPS = 48
SIZE = 32


def run(seed, duration, clips=None, workers=1, prompt=""):
    audio = speech_audio(duration, seed)
    cfg = Config(num_clips=clips, workers=workers, seed=seed)
    return audio, cfg, generate_video(portrait(SIZE, SIZE, seed), audio, prompt, cfg)


# --------------------------------------------------------------------------
# 1. frame-exact alignment


def criterion_1():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    bad = []
    for seed in range(20):
        duration = float(rng.uniform(8, 120))
        audio, _, res = run(seed, duration, workers=4)
        # independent count: samples * fps / rate, half away from zero
        q = Fraction(len(audio) * FPS, audio.sample_rate)
        expected = math.floor(q + Fraction(1, 2))
        if len(res.clip) != expected:
            bad.append((seed, len(res.clip), expected))
    elapsed = time.perf_counter() - t0
    return not bad and elapsed < 120, f"20 audios frame-exact, mismatches={bad}, {elapsed:.1f} s (< 120 s)"


# --------------------------------------------------------------------------
# 2. parallel runtime


def _sleep_jobs():
    audio = speech_audio(8.0, 0)
    ref = portrait(SIZE, SIZE, 0)
    feats = extract_features(audio)
    sl = compose_storyline(parse_prompt(""), None, None, audio.duration)
    backend = ProceduralBackend()
    from avatar_cascade.backend import GenerationRequest
    bp = backend.generate_blueprint(GenerationRequest(reference=ref, audio=feats, storyline=sl))
    anchors = select_anchors(bp, plan_segments(audio.duration, 8), ref, backend.mouth_boxes(bp))
    return build_jobs(anchors, sl, feats, TimeGrid()), ref


def criterion_2():
    jobs, ref = _sleep_jobs()
    assert len(jobs) == 8
    backend = SleepBackend(0.1)
    runs = []
    for _ in range(5):
        t0 = time.perf_counter()
        run_parallel(jobs, backend, 8, reference=ref)
        par = time.perf_counter() - t0
        t0 = time.perf_counter()
        run_parallel(jobs, backend, 1, reference=ref)
        seq = time.perf_counter() - t0
        runs.append((par, seq))
    ok = all(p < 0.25 and s > 0.8 for p, s in runs)
    detail = ", ".join(f"{p * 1000:.0f}/{s * 1000:.0f} ms" for p, s in runs)
    return ok, f"8 clips x 100 ms, 8 workers / 1 worker: {detail}"


# --------------------------------------------------------------------------
# 3. anchor seamlessness


def criterion_3():
    failures = []
    tamper_ok = True
    for seed in range(10):
        duration = 6.0 + 2.0 * seed
        audio, cfg, res = run(seed, duration, clips=2 + seed % 4)
        arr = res.clip.as_array().astype(np.int16)
        deltas = np.abs(np.diff(arr, axis=0)).reshape(len(arr) - 1, -1).max(axis=1)
        for j in res.report(cfg)["junctions"]:
            # pairs (j-1, j) and (j, j+1) touch the shared anchor frame; compare against the
            # other pairs within 5 frames of the junction
            near = [deltas[k] for k in range(max(0, j - 6), min(len(deltas), j + 6)) if k not in (j - 1, j)]
            for d in (deltas[j - 1], deltas[j]):
                if d > max(near):
                    failures.append((seed, j, int(d), int(max(near))))
        grid = TimeGrid(cfg.fps, cfg.token_rate)
        clips = run_parallel(res.jobs, ProceduralBackend(), 1, reference=portrait(SIZE, SIZE, seed), grid=grid)
        px = clips[1][0].pixels.copy()
        px[0, 0, 0] ^= 1
        tampered = [clips[0], Clip((Frame(px),) + clips[1].frames[1:], fps=FPS)] + list(clips[2:])
        try:
            stitch(tampered, res.anchors, audio, grid)
            tamper_ok = False
        except StitchError:
            pass
    return not failures and tamper_ok, f"10 runs, junction violations={failures}, tamper rejected={tamper_ok}"


# --------------------------------------------------------------------------
# 4. lip-sync closed loop


def criterion_4():
    backend = ProceduralBackend()
    aligned, shifted = [], []
    for seed in range(10):
        audio, _, res = run(seed, 6.0)
        boxes = backend.mouth_boxes(res.clip)
        aligned.append(score_sync(res.clip, boxes, extract_features(audio)))
        for k in range(-6, 7):
            lag, _ = score_sync(res.clip, boxes, extract_features(shift_audio(audio, k, FPS)))
            shifted.append((k, lag))
    ok_aligned = all(abs(lag) <= 1 and conf >= 0.8 for lag, conf in aligned)
    ok_shift = all(abs(lag - k) <= 1 for k, lag in shifted)
    worst = min(c for _, c in aligned)
    off = [(k, lag) for k, lag in shifted if abs(lag - k) > 1]
    return ok_aligned and ok_shift, (f"aligned lags={[l for l, _ in aligned]} min conf={worst:.3f}; "
                                     f"{len(shifted)} shifted trials (k in -6..6), off by >1: {off}")


# --------------------------------------------------------------------------
# 5. mechanism correctness


def overlap_oracle(fps, rate, frame, num_tokens, pad):
    f0, f1 = Fraction(frame, fps), Fraction(frame + 1, fps)
    hits = [j for j in range((frame + 2) * rate // fps + 2) if Fraction(j, rate) < f1 and Fraction(j + 1, rate) > f0]
    lo, hi = min(hits) - pad, max(hits) + pad
    return min(max(lo, 0), num_tokens - 1), min(max(hi, 0), num_tokens - 1)


def criterion_5():
    mask_bad = 0
    cells = 0
    for fps in (24, 25, 48):
        for rate in (25, 50, 100):
            for pad in (0, 1, 3):
                frames = 2 * fps
                tokens = -(-frames * rate // fps)
                m = build_audio_mask(TimeGrid(fps, rate), frames, tokens, pad)
                dense = m.dense()
                for i in range(frames):
                    lo, hi = overlap_oracle(fps, rate, i, tokens, pad)
                    row = np.zeros(tokens, dtype=bool)
                    row[lo:hi + 1] = True
                    mask_bad += not np.array_equal(dense[i], row)
                cells += 1
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        h, w = (int(v) for v in rng.integers(2, 9, size=2))
        x0, y0 = int(rng.integers(0, w)), int(rng.integers(0, h))
        box = MouthBox(x0, y0, int(rng.integers(x0, w)), int(rng.integers(y0, h)), 1.0)
        mask = build_weight_mask(box, w, h, float(rng.uniform(1, 4)))
        p, t = rng.normal(size=(h, w)), rng.normal(size=(h, w))
        _, grad = weighted_loss(p, t, mask)
        num = np.zeros_like(p)
        eps = 1e-5
        for idx in np.ndindex(p.shape):
            d = np.zeros_like(p)
            d[idx] = eps
            num[idx] = (weighted_loss(p + d, t, mask)[0] - weighted_loss(p - d, t, mask)[0]) / (2 * eps)
        worst = max(worst, float(np.linalg.norm(num - grad) / np.linalg.norm(grad)))
    cfg_ok = True
    for _ in range(100):
        pos, neg = rng.integers(-64, 64, 6) / 8.0, rng.integers(-64, 64, 6) / 8.0
        s1, s2 = rng.integers(-8, 9, 2) / 4.0
        cfg_ok &= np.array_equal(cfg_combine(pos, neg, 1.0), pos)
        cfg_ok &= np.array_equal(cfg_combine(pos, neg, 0.0), neg)
        cfg_ok &= np.array_equal(cfg_combine(pos, neg, s1) + cfg_combine(pos, neg, s2),
                                 2 * cfg_combine(pos, neg, (s1 + s2) / 2))
    ok = mask_bad == 0 and cells == 27 and worst < 1e-6 and cfg_ok
    return ok, f"mask rows mismatched={mask_bad} over {cells} grid cells, max grad rel err={worst:.2e}, cfg exact={cfg_ok}"


# --------------------------------------------------------------------------
# 6. director priority

EMOTION_WORD = {"calm": "calm", "excitement": "excited", "confusion": "confused", "sadness": "sad",
                "surprise": "surprised", "anger": "angry"}
CAMERA_WORD = {"pan_left": "pan left", "pan_right": "pan right", "zoom_in": "zoom in", "zoom_out": "zoom out"}
ACTION_WORD = {"nodding": "nodding", "waving": "waving", "turning": "turning", "singing": "singing"}


def criterion_6():
    rng = np.random.default_rng(6)
    emotions = list(EMOTION_WORD)
    wrong = []
    for n in range(30):
        pattern = n % 8  # every presence combination of user / audio / image emotion
        user_e = str(rng.choice(emotions)) if pattern & 1 else None
        audio_e = str(rng.choice(emotions)) if pattern & 2 else None
        image_e = str(rng.choice(emotions)) if pattern & 4 else None
        cam = str(rng.choice(list(CAMERA_WORD))) if rng.random() < 0.5 else None
        act = str(rng.choice(list(ACTION_WORD))) if rng.random() < 0.5 else None
        words = [EMOTION_WORD[user_e]] if user_e else []
        words += [CAMERA_WORD[cam]] if cam else []
        words += [ACTION_WORD[act]] if act else []
        audio = AudioCaption("", audio_e, "high", 10.0) if audio_e else None
        image = ImageCaption(expression=image_e)
        sl = compose_storyline(parse_prompt(", ".join(words)), audio, image, 10.0)
        expected_e = user_e or audio_e or image_e or DEFAULT_EMOTION[0]
        got = (sl.emotion_track[0].emotion, sl.camera_plan[0].tag, sl.actions[0].tag)
        expected = (expected_e, cam or DEFAULT_CAMERA, act or DEFAULT_ACTION)
        if got != expected:
            wrong.append((n, got, expected))
    return not wrong, f"30 triples, mismatches={wrong}"


# --------------------------------------------------------------------------
# 7. curation discrimination


def criterion_7():
    lip = cut = sync = 0
    backend = ProceduralBackend()
    rng = np.random.default_rng(7)
    for seed in range(100):
        (sharp, sb), (blurred, bb) = lip_clarity_pair(seed)
        lip += score_lip_clarity(sharp, sb) > score_lip_clarity(blurred, bb)
        cont, spliced, at = spliced_pair(seed)
        cut += detect_scene_cuts(cont) == [] and detect_scene_cuts(spliced) == [at]
        audio = speech_audio(3.0, 1000 + seed)
        res = generate_video(portrait(24, 24, seed), audio, "", Config(seed=seed))
        boxes = backend.mouth_boxes(res.clip)
        k = int(rng.choice([-1, 1])) * int(rng.integers(4, 9))
        pos = score_sync(res.clip, boxes, extract_features(audio))
        neg = score_sync(res.clip, boxes, extract_features(shift_audio(audio, k, FPS)))
        # ranked by absolute offset from lip-locked
        sync += abs(pos[0]) < abs(neg[0])
    ok = lip == cut == sync == 100
    return ok, f"positive ranked first: lip clarity {lip}/100, scene cut {cut}/100 (exact index), sync {sync}/100"


# --------------------------------------------------------------------------
# 8. GSB protocol


def criterion_8():
    rng = np.random.default_rng(8)
    mismatch = 0
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        labels = [[str(x) for x in rng.choice(list("GSB"), 3)] for _ in range(n)]
        recs = [GsbRecord(f"s{i}", f"j{k}", lab) for i, ls in enumerate(labels) for k, lab in enumerate(ls)]
        res = tally(recs)
        g = sum(ls.count("G") >= 2 for ls in labels)
        b = sum(ls.count("B") >= 2 for ls in labels)
        s = n - g - b
        mismatch += (res.g, res.s, res.b) != (g, s, b)
    recs = [GsbRecord(f"s{i}", f"j{k}", lab)
            for i, lab in enumerate(["G"] * 178 + ["S"] * 108 + ["B"] * 89) for k in range(3)]
    formatted = tally(recs).formatted()
    comp = load_composition(DATA_DIR / "bench_composition.json")
    valid = validate_manifest(load_manifest(DATA_DIR / "bench_manifest.jsonl"), comp).valid
    mutants_fail = [not validate_manifest(load_manifest(DATA_DIR / f"bench_mutant_{r}.jsonl"), comp).valid
                    for r in MUTANTS]
    ok = mismatch == 0 and formatted == "1.45" and valid and all(mutants_fail) and len(mutants_fail) == 5
    return ok, (f"recount mismatches={mismatch}/1000, 178/108/89 -> {formatted}, manifest valid={valid}, "
                f"mutants failing={sum(mutants_fail)}/5")


# --------------------------------------------------------------------------
# 9. determinism


def _output_bytes(tmp, workers, tag):
    audio = speech_audio(10.0, 9)
    cfg = Config(workers=workers, num_clips=4, seed=9)
    res = generate_video(portrait(SIZE, SIZE, 9), audio, "excited, zoom in while nodding", cfg)
    out = write_outputs(res, audio, tmp / f"{tag}_{workers}", cfg)
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "timings.json"}


def criterion_9(tmp):
    ref = _output_bytes(tmp, 1, "a")
    runs = {"repeat": _output_bytes(tmp, 1, "b")}
    for w in (4, 8):
        runs[f"workers={w}"] = _output_bytes(tmp, w, "a")
    diff = {k: sorted(n for n in ref if v.get(n) != ref[n]) for k, v in runs.items()}
    ok = all(not d for d in diff.values()) and all(set(v) == set(ref) for v in runs.values())
    return ok, f"{len(ref)} files compared, differing={ {k: d for k, d in diff.items() if d} }"


# --------------------------------------------------------------------------

CRITERIA = {
    1: ("frame-exact audio alignment", criterion_1),
    2: ("parallel runtime", criterion_2),
    3: ("anchor seamlessness", criterion_3),
    4: ("lip-sync closed loop", criterion_4),
    5: ("mechanism correctness", criterion_5),
    6: ("director priority", criterion_6),
    7: ("curation discrimination", criterion_7),
    8: ("GSB protocol", criterion_8),
    9: ("determinism", criterion_9),
}


def line(n, ok, detail):
    return f"{'PASS' if ok else 'FAIL'} [{n}] {CRITERIA[n][0]}: {detail}"


@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n, capsys, tmp_path):
    fn = CRITERIA[n][1]
    ok, detail = fn(tmp_path) if n == 9 else fn()
    with capsys.disabled():
        print("\n" + line(n, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    failed = 0
    for n, (_, fn) in sorted(CRITERIA.items()):
        with tempfile.TemporaryDirectory() as d:
            ok, detail = fn(Path(d)) if n == 9 else fn()
        failed += not ok
        print(line(n, ok, detail), flush=True)
    sys.exit(1 if failed else 0)
