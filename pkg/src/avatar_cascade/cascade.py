"""Long-video cascade: segment, pick anchors in the blueprint, fan out sub-clips, stitch.

Frame accounting
----------------
Anchor ``k`` sits at output frame ``s_k = round(b_k / blueprint_fps * fps)``
where ``b_k`` is its blueprint index. Job ``k`` renders output frames
``[s_k, s_{k+1}]`` inclusive, so consecutive jobs share their anchor frame;
``stitch`` keeps it once (the copy at the start of the right-hand clip is
dropped). The final anchor is the blueprint's last frame, which lands a few
frames before the end of the audio; ``stitch`` fills the remainder with
audio-driven transition frames so the video has exactly
``frames_for_audio(duration, fps)`` frames.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .audio import AudioFeatures, extract_features
from .backend import GenerationBackend, GenerationRequest, ProceduralBackend
from .conditioning import MouthBox
from .director import LocalPlan, Storyline, decompose
from .errors import JobFailed, StitchError, ValidationError
from .media import Clip, Frame, TimeGrid, exact, frames_for_audio, round_half_away

DEFAULT_ANCHOR_WEIGHTS = (0.4, 0.2, 0.2, 0.2)
DEFAULT_ANCHOR_WINDOW_S = 0.5
DEFAULT_CLIP_SECONDS = 5.0
HIST_BINS = 32
EXPRESSIVENESS_RADIUS = 3


@dataclass(frozen=True)
class SegmentationPlan:
    duration_s: float
    num_clips: int
    boundaries: tuple


def default_num_clips(duration_s: float, clip_seconds: float = DEFAULT_CLIP_SECONDS) -> int:
    return max(1, math.ceil(duration_s / clip_seconds))


def plan_segments(duration_s: float, num_clips: int) -> SegmentationPlan:
    if num_clips < 1:
        raise ValidationError(f"num_clips must be >= 1, got {num_clips}")
    if not duration_s > 0:
        raise ValidationError(f"duration must be positive, got {duration_s}")
    d = float(duration_s)
    bounds = tuple([d * k / num_clips for k in range(num_clips)] + [d])
    return SegmentationPlan(d, num_clips, bounds)


# --------------------------------------------------------------------------
# Keyframe scoring


@dataclass(frozen=True)
class ScoreBreakdown:
    identity: float
    motion: float
    occlusion_free: float
    expressiveness: float

    def composite(self, weights=DEFAULT_ANCHOR_WEIGHTS) -> float:
        return float(np.dot(weights, (self.identity, self.motion, self.occlusion_free, self.expressiveness)))


def rgb_histogram(frame: Frame, bins: int = HIST_BINS) -> np.ndarray:
    """Per-channel histograms, each normalized to sum 1; shape ``(3, bins)``."""
    px = frame.pixels.reshape(-1, 3)
    idx = px.astype(np.int64) * bins // 256
    out = np.empty((3, bins))
    for c in range(3):
        out[c] = np.bincount(idx[:, c], minlength=bins) / px.shape[0]
    return out


def histogram_distance(h1: np.ndarray, h2: np.ndarray) -> float:
    """Half L1 distance averaged over channels; 0 for identical, 1 for disjoint histograms."""
    return float(0.5 * np.abs(h1 - h2).sum(axis=1).mean())


def mouth_darkness(frame: Frame, box: Optional[MouthBox]) -> float:
    """Mean ``1 - luma/255`` inside the (inclusive) mouth box; NaN when absent."""
    if box is None or not box.present:
        return float("nan")
    h, w = frame.height, frame.width
    x0, x1 = max(min(box.x0, box.x1), 0), min(max(box.x0, box.x1), w - 1)
    y0, y1 = max(min(box.y0, box.y1), 0), min(max(box.y0, box.y1), h - 1)
    if x0 > x1 or y0 > y1:
        return float("nan")
    crop = frame.pixels[y0:y1 + 1, x0:x1 + 1].astype(np.float64)
    luma = crop @ np.array([0.299, 0.587, 0.114])
    return float(1.0 - luma.mean() / 255.0)


def score_keyframe(blueprint: Clip, frame_index: int, reference: Frame, mouth_boxes) -> ScoreBreakdown:
    n = len(blueprint)
    if not 0 <= frame_index < n:
        raise ValidationError(f"frame index {frame_index} out of range [0, {n})")
    frame = blueprint[frame_index]
    identity = 1.0 - histogram_distance(rgb_histogram(frame), rgb_histogram(reference))

    cur = frame.pixels.astype(np.float64)
    diffs = [np.abs(cur - blueprint[k].pixels.astype(np.float64)).mean()
             for k in (frame_index - 1, frame_index + 1) if 0 <= k < n]
    motion = float(np.mean(diffs)) / 255.0 if diffs else 0.0

    box = mouth_boxes.get(frame_index) if mouth_boxes else None
    occlusion_free = float(box.confidence) if box is not None else 0.0

    lo, hi = max(0, frame_index - EXPRESSIVENESS_RADIUS), min(n, frame_index + EXPRESSIVENESS_RADIUS + 1)
    dark = [mouth_darkness(blueprint[k], mouth_boxes.get(k) if mouth_boxes else None) for k in range(lo, hi)]
    dark = [d for d in dark if not math.isnan(d)]
    # values lie in [0, 1], so their variance is at most 0.25
    expressiveness = min(1.0, float(np.var(dark)) / 0.25) if len(dark) > 1 else 0.0

    return ScoreBreakdown(
        identity=min(max(identity, 0.0), 1.0),
        motion=min(max(motion, 0.0), 1.0),
        occlusion_free=min(max(occlusion_free, 0.0), 1.0),
        expressiveness=expressiveness,
    )


@dataclass(frozen=True)
class AnchorFrame:
    blueprint_frame_index: int
    snapped_output_frame_index: int
    frame: Frame
    score: float
    score_breakdown: Optional[ScoreBreakdown]

    def to_dict(self) -> dict:
        b = self.score_breakdown
        return {
            "blueprint_frame_index": self.blueprint_frame_index,
            "snapped_output_frame_index": self.snapped_output_frame_index,
            "score": round(self.score, 9),
            "score_breakdown": None if b is None else {
                "identity": round(b.identity, 9), "motion": round(b.motion, 9),
                "occlusion_free": round(b.occlusion_free, 9), "expressiveness": round(b.expressiveness, 9),
            },
        }


def snap_index(blueprint_index: int, blueprint_fps, fps) -> int:
    return round_half_away(Fraction(blueprint_index) / exact(blueprint_fps) * exact(fps))


def select_anchors(blueprint: Clip, plan: SegmentationPlan, reference: Frame, mouth_boxes,
                   window_s: float = DEFAULT_ANCHOR_WINDOW_S, fps=48,
                   weights=DEFAULT_ANCHOR_WEIGHTS) -> list:
    """One anchor per segmentation point, including both ends.

    Interior anchors maximize the weighted composite within ``±window_s`` of
    the boundary (ties: nearest the boundary, then earlier). The search range
    is shrunk so blueprint and snapped output indices stay strictly increasing.
    """
    if window_s < 0:
        raise ValidationError("window_s must be >= 0")
    bfps = blueprint.fps
    n = len(blueprint)
    needed = frames_for_audio(plan.duration_s, bfps)
    if n < needed or n < plan.num_clips + 1:
        raise ValidationError(f"blueprint has {n} frames, plan needs {max(needed, plan.num_clips + 1)}")
    half = math.floor(exact(window_s) * exact(bfps))

    def make(idx: int) -> AnchorFrame:
        bd = score_keyframe(blueprint, idx, reference, mouth_boxes)
        return AnchorFrame(idx, snap_index(idx, bfps, fps), blueprint[idx], bd.composite(weights), bd)

    anchors = [make(0)]
    last_index = n - 1
    for k in range(1, plan.num_clips):
        center = min(round_half_away(exact(plan.boundaries[k]) * exact(bfps)), last_index)
        prev = anchors[-1]
        lo = max(center - half, prev.blueprint_frame_index + 1)
        hi = min(center + half, last_index - (plan.num_clips - k))
        while lo <= hi and snap_index(lo, bfps, fps) <= prev.snapped_output_frame_index:
            lo += 1
        if lo > hi:
            # window exhausted: fall back to the nearest admissible index
            lo = hi = min(max(center, prev.blueprint_frame_index + 1), last_index - (plan.num_clips - k))
            if lo <= prev.blueprint_frame_index or snap_index(lo, bfps, fps) <= prev.snapped_output_frame_index:
                raise ValidationError(f"cannot place anchor {k}: segments too short for the blueprint")
        best, best_key = None, None
        for idx in range(lo, hi + 1):
            bd = score_keyframe(blueprint, idx, reference, mouth_boxes)
            key = (-bd.composite(weights), abs(idx - center), idx)
            if best_key is None or key < best_key:
                best, best_key = (idx, bd), key
        idx, bd = best
        anchors.append(AnchorFrame(idx, snap_index(idx, bfps, fps), blueprint[idx], bd.composite(weights), bd))
    final = make(last_index)
    if final.snapped_output_frame_index <= anchors[-1].snapped_output_frame_index:
        raise ValidationError("final anchor does not advance; use fewer clips")
    anchors.append(final)
    return anchors


# --------------------------------------------------------------------------
# Jobs


@dataclass(frozen=True)
class SubClipJob:
    clip_index: int
    window: tuple  # inclusive output-frame range (first, last)
    first_anchor: AnchorFrame
    last_anchor: AnchorFrame
    local_plan: LocalPlan
    audio: AudioFeatures
    seed: int = 0

    @property
    def num_frames(self) -> int:
        return self.window[1] - self.window[0] + 1


def build_jobs(anchors: Sequence[AnchorFrame], storyline: Storyline, audio_features: AudioFeatures,
               grid: TimeGrid, seed: int = 0) -> list:
    if len(anchors) < 2:
        raise ValidationError("need at least 2 anchors")
    idx = [a.snapped_output_frame_index for a in anchors]
    for k in range(len(idx) - 1):
        if idx[k + 1] <= idx[k]:
            raise ValidationError(f"anchor indices not increasing at {k}: {idx[k]} -> {idx[k + 1]}")
    fps, rate = exact(grid.fps), exact(grid.token_rate)
    times = [float(Fraction(i) / fps) for i in idx]
    times[0], times[-1] = 0.0, storyline.duration_s
    windows = [(times[k], times[k + 1]) for k in range(len(times) - 1)]
    plans = decompose(storyline, windows)
    jobs = []
    for k, plan in enumerate(plans):
        first, last = idx[k], idx[k + 1]
        tok_lo = math.floor(Fraction(first) / fps * rate)
        tok_hi = math.ceil(Fraction(last + 1) / fps * rate)
        jobs.append(SubClipJob(
            clip_index=k, window=(first, last), first_anchor=anchors[k], last_anchor=anchors[k + 1],
            local_plan=plan, audio=audio_features.slice(tok_lo, tok_hi), seed=seed * 1000003 + k,
        ))
    return jobs


@dataclass
class JobTiming:
    clip_index: int
    seconds: float


def job_request(job: SubClipJob, reference: Frame, grid: TimeGrid, boost: float,
                blueprint_fps: int) -> GenerationRequest:
    return GenerationRequest(
        reference=reference, audio=job.audio, grid=grid, plan=job.local_plan,
        first_frame=job.first_anchor.frame, last_frame=job.last_anchor.frame,
        start_frame=job.window[0], num_frames=job.num_frames,
        blueprint_fps=blueprint_fps, boost=boost, seed=job.seed,
    )


def run_parallel(jobs: Sequence[SubClipJob], backend: GenerationBackend, worker_count: int = 1,
                 reference: Optional[Frame] = None, grid: TimeGrid = TimeGrid(), boost: float = 1.0,
                 blueprint_fps: int = 12, timings: Optional[list] = None) -> list:
    """Run every job's ``generate_subclip``; results come back in clip_index order."""
    if worker_count < 1:
        raise ValidationError(f"worker_count must be >= 1, got {worker_count}")
    if not jobs:
        return []
    ordered = sorted(jobs, key=lambda j: j.clip_index)
    results = [None] * len(ordered)
    durations = [0.0] * len(ordered)

    def run(slot: int):
        job = ordered[slot]
        ref = reference if reference is not None else job.first_anchor.frame
        t0 = time.perf_counter()
        try:
            results[slot] = backend.generate_subclip(job_request(job, ref, grid, boost, blueprint_fps))
        except Exception as exc:
            raise JobFailed(job.clip_index, exc) from exc
        durations[slot] = time.perf_counter() - t0

    with ThreadPoolExecutor(max_workers=worker_count) as pool:
        futures = [pool.submit(run, slot) for slot in range(len(ordered))]
        done, pending = wait(futures, return_when=FIRST_EXCEPTION)
        for f in pending:
            f.cancel()
        failed = [f.exception() for f in futures if f.done() and not f.cancelled() and f.exception()]
    if failed:
        raise min(failed, key=lambda e: e.clip_index)
    if timings is not None:
        timings.extend(JobTiming(j.clip_index, d) for j, d in zip(ordered, durations))
    return results


# --------------------------------------------------------------------------
# Stitching


def stitch(clips: Sequence[Clip], anchors: Sequence[AnchorFrame], audio, grid: TimeGrid,
           backend: Optional[GenerationBackend] = None, features: Optional[AudioFeatures] = None,
           boost: float = 1.0) -> Clip:
    """Join sub-clips and pad with transition frames up to the audio-mandated length.

    ``audio`` is an ``AudioTrack`` (or anything with ``duration_exact``); the
    mouth in tail frames follows ``features`` (extracted from ``audio`` if omitted).
    """
    fps = grid.fps
    if not clips:
        raise StitchError("nothing to stitch")
    for k in range(len(clips) - 1):
        if not clips[k].frames or not clips[k + 1].frames or clips[k][-1] != clips[k + 1][0]:
            raise StitchError(f"anchor mismatch at junction {k}")
    for k, clip in enumerate(clips[1:], 1):
        if k < len(anchors) and clip[0] != anchors[k].frame:
            raise StitchError(f"anchor mismatch at junction {k - 1}")
    frames = list(clips[0].frames)
    for clip in clips[1:]:
        frames.extend(clip.frames[1:])

    duration = audio.duration_exact if hasattr(audio, "duration_exact") else exact(audio)
    target = frames_for_audio(duration, fps)
    missing = target - len(frames)
    if missing < 0:
        raise StitchError(f"stitched video has {len(frames)} frames, audio allows {target}")
    if missing:
        if features is None:
            features = extract_features(audio, grid.token_rate)
        backend = backend or ProceduralBackend()
        tail = backend.interpolate_transition(frames[-1], frames[-1], missing, features,
                                              fps=fps, start_frame=len(frames), boost=boost)
        frames.extend(tail.frames)
    return Clip(tuple(frames), fps=fps)


def junction_deltas(clip: Clip, junction_indices: Sequence[int], radius: int = 5) -> list:
    """For each junction ``i`` (pair ``i, i+1``): (junction max-abs delta, max intra delta within ``radius`` frames)."""
    arr = clip.as_array().astype(np.int16)
    deltas = np.abs(np.diff(arr, axis=0)).reshape(len(arr) - 1, -1).max(axis=1)
    out = []
    for i in junction_indices:
        neighbours = [deltas[k] for k in range(max(0, i - radius), min(len(deltas), i + radius + 1)) if k != i]
        out.append((int(deltas[i]), int(max(neighbours)) if neighbours else 0))
    return out
