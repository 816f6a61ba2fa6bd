"""Training-data filters with closed-form scorers.

Manifest records (one JSON object per line, keys sorted)::

    {"clip": "<input dir>", "verdict": "keep"|"drop", "failed": [...],
     "scene_cuts": [int], "lip_clarity": float|null,
     "sync": {"lag_frames": int, "confidence": float}|null,
     "aesthetic": float|null, "error": str|null}

``failed`` lists check names (``scene_cut``, ``lip_clarity``, ``sync``,
``aesthetic``) or ``io_error``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.signal import convolve2d

from .audio import AudioFeatures, extract_features
from .cascade import histogram_distance, mouth_darkness, rgb_histogram
from .conditioning import MouthBox, load_keypoints
from .errors import ValidationError
from .media import Clip, load_audio, load_clip

SCENE_CUT_THRESHOLD = 0.3
SYNC_MAX_LAG = 12
MIN_SYNC_SECONDS = 2.0
LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
LIP_CLARITY_SCALE = 1000.0  # Laplacian variance units per score point
AESTHETIC_SHARPNESS_SCALE = 1000.0
AESTHETIC_STRIDE = 12
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Thresholds:
    """``None`` disables a check."""

    max_scene_cuts: Optional[int] = 0
    min_lip_clarity: Optional[float] = 0.05
    min_sync_confidence: Optional[float] = 0.5
    max_abs_lag_frames: Optional[int] = 2
    min_aesthetic: Optional[float] = 0.05

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if v is not None and not math.isfinite(v):
                raise ValidationError(f"threshold {k} must be finite")


def _gray(frame) -> np.ndarray:
    return frame.pixels.astype(np.float64) @ LUMA


def detect_scene_cuts(clip: Clip, threshold: float = SCENE_CUT_THRESHOLD) -> list:
    """Indices of the first frame of each new scene (32-bin RGB histogram distance)."""
    if len(clip) < 2:
        raise ValidationError("scene-cut detection needs at least 2 frames")
    cuts = []
    prev = rgb_histogram(clip[0])
    for i in range(1, len(clip)):
        cur = rgb_histogram(clip[i])
        if histogram_distance(prev, cur) > threshold:
            cuts.append(i)
        prev = cur
    return cuts


def laplacian_variance(gray: np.ndarray) -> float:
    if gray.shape[0] < 3 or gray.shape[1] < 3:
        return float("nan")
    return float(convolve2d(gray, LAPLACIAN, mode="valid").var())


def _crop(arr: np.ndarray, box: MouthBox) -> np.ndarray:
    h, w = arr.shape[:2]
    x0, x1 = max(min(box.x0, box.x1), 0), min(max(box.x0, box.x1), w - 1)
    y0, y1 = max(min(box.y0, box.y1), 0), min(max(box.y0, box.y1), h - 1)
    return arr[y0:y1 + 1, x0:x1 + 1]


def score_lip_clarity(clip: Clip, mouth_boxes: Mapping[int, MouthBox]) -> float:
    """Mean Laplacian variance of the grayscale mouth crop, divided by ``LIP_CLARITY_SCALE``."""
    usable = [i for i in range(len(clip)) if mouth_boxes.get(i) is not None and mouth_boxes[i].present]
    if len(clip) == 0 or len(usable) * 2 < len(clip):
        raise ValidationError(f"mouth boxes for {len(usable)} of {len(clip)} frames; need at least half")
    values = [laplacian_variance(_crop(_gray(clip[i]), mouth_boxes[i])) for i in usable]
    values = [v for v in values if not math.isnan(v)]
    if not values:
        raise ValidationError("all mouth crops are smaller than 3x3")
    return float(np.mean(values)) / LIP_CLARITY_SCALE


def mouth_signal(clip: Clip, mouth_boxes: Mapping[int, MouthBox]) -> np.ndarray:
    return np.array([mouth_darkness(f, mouth_boxes.get(i)) for i, f in enumerate(clip.frames)])


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    ok = ~(np.isnan(x) | np.isnan(y))
    x, y = x[ok], y[ok]
    if x.size < 2:
        return 0.0
    x = x - x.mean()
    y = y - y.mean()
    den = math.sqrt(float(x @ x) * float(y @ y))
    if den <= 1e-12 * max(1.0, x.size):
        return 0.0
    return float(x @ y) / den


def lagged_correlation(m: np.ndarray, a: np.ndarray, lag: int) -> float:
    """Pearson correlation of ``m[i]`` with ``a[i + lag]`` over the overlap."""
    n = min(len(m), len(a))
    if lag >= 0:
        return _pearson(m[:n - lag], a[lag:n]) if n - lag > 1 else 0.0
    return _pearson(m[-lag:n], a[:n + lag]) if n + lag > 1 else 0.0


def best_lag(m: np.ndarray, a: np.ndarray, max_lag: int = SYNC_MAX_LAG) -> tuple:
    """Argmax lag of the lagged correlation; ties go to the smallest |lag|, then negative."""
    best = None
    for lag in sorted(range(-max_lag, max_lag + 1), key=lambda k: (abs(k), k)):
        c = lagged_correlation(m, a, lag)
        if best is None or c > best[1]:
            best = (lag, c)
    return best


def score_sync(clip: Clip, mouth_boxes: Mapping[int, MouthBox], audio_features: AudioFeatures,
               max_lag: int = SYNC_MAX_LAG) -> tuple:
    """``(lag_frames, confidence)``; positive lag means the audio trails the mouth."""
    fps = float(clip.fps)
    n = min(len(clip), int(math.floor(audio_features.duration_s * fps + 1e-9)) or len(clip))
    if n / fps < MIN_SYNC_SECONDS - 1e-9:
        raise ValidationError(f"sync scoring needs {MIN_SYNC_SECONDS} s of overlap, got {n / fps:.3f} s")
    m = mouth_signal(clip, mouth_boxes)[:n]
    a = audio_features.envelope_on_frames(n, clip.fps)
    lag, conf = best_lag(m, a, max_lag)
    return int(lag), float(conf)


def colorfulness(frame) -> float:
    """Mean standard deviation of the rg / yb opponent channels."""
    px = frame.pixels.astype(np.float64)
    rg = px[..., 0] - px[..., 1]
    yb = 0.5 * (px[..., 0] + px[..., 1]) - px[..., 2]
    return float(0.5 * (rg.std() + yb.std()))


def aesthetic_components(frame) -> tuple:
    """``(sharpness, contrast, colorfulness)``, each clipped to [0, 1]."""
    gray = _gray(frame)
    lv = laplacian_variance(gray)
    sharp = 0.0 if math.isnan(lv) else min(1.0, lv / AESTHETIC_SHARPNESS_SCALE)
    contrast = min(1.0, float(gray.std()) / 128.0)
    colour = min(1.0, colorfulness(frame) / 128.0)
    return sharp, contrast, colour


def score_aesthetic(clip: Clip) -> float:
    if len(clip) == 0:
        raise ValidationError("empty clip")
    scores = []
    for i in range(0, len(clip), AESTHETIC_STRIDE):
        s, c, col = aesthetic_components(clip[i])
        scores.append(0.4 * s + 0.3 * c + 0.3 * col)
    return float(np.mean(scores))


# --------------------------------------------------------------------------
# Pipeline


def keypoints_path(clip_dir, suffix: str = ".kp.jsonl") -> Path:
    """Sibling ``<dir><suffix>`` if present, else ``<dir>/keypoints.jsonl``."""
    d = Path(clip_dir)
    sibling = d.parent / (d.name + suffix)
    return sibling if sibling.exists() else d / "keypoints.jsonl"


def _round(x: Optional[float]) -> Optional[float]:
    return None if x is None else round(float(x), 9)


def curate_clip(clip_dir, thresholds: Thresholds = Thresholds(), keypoints_suffix: str = ".kp.jsonl") -> dict:
    record = {"clip": str(clip_dir), "scene_cuts": [], "lip_clarity": None, "sync": None,
              "aesthetic": None, "verdict": "drop", "failed": [], "error": None}
    try:
        clip = load_clip(clip_dir)
        boxes = load_keypoints(keypoints_path(clip_dir, keypoints_suffix))
        features = None
        if clip.audio:
            audio_path = Path(clip.audio)
            if not audio_path.is_absolute():
                audio_path = Path(clip_dir) / audio_path
            features = extract_features(load_audio(audio_path))
    except (OSError, ValidationError) as exc:
        record["failed"] = ["io_error"]
        record["error"] = str(exc)
        return record

    failed = []
    cuts = detect_scene_cuts(clip) if len(clip) >= 2 else []
    record["scene_cuts"] = cuts
    if thresholds.max_scene_cuts is not None and len(cuts) > thresholds.max_scene_cuts:
        failed.append("scene_cut")

    try:
        record["lip_clarity"] = _round(score_lip_clarity(clip, boxes))
    except ValidationError:
        record["lip_clarity"] = None
    if thresholds.min_lip_clarity is not None and (
            record["lip_clarity"] is None or record["lip_clarity"] < thresholds.min_lip_clarity):
        failed.append("lip_clarity")

    sync = None
    if features is not None:
        try:
            sync = score_sync(clip, boxes, features)
        except ValidationError:
            sync = None
    if sync is not None:
        record["sync"] = {"lag_frames": sync[0], "confidence": _round(sync[1])}
    sync_checked = thresholds.min_sync_confidence is not None or thresholds.max_abs_lag_frames is not None
    if sync_checked:
        if sync is None:
            failed.append("sync")
        elif (thresholds.min_sync_confidence is not None and sync[1] < thresholds.min_sync_confidence) or (
                thresholds.max_abs_lag_frames is not None and abs(sync[0]) > thresholds.max_abs_lag_frames):
            failed.append("sync")

    record["aesthetic"] = _round(score_aesthetic(clip))
    if thresholds.min_aesthetic is not None and record["aesthetic"] < thresholds.min_aesthetic:
        failed.append("aesthetic")

    record["failed"] = failed
    record["verdict"] = "drop" if failed else "keep"
    return record


def run_curation(input_dirs: Sequence, thresholds: Thresholds = Thresholds(), workers: int = 1,
                 keypoints_suffix: str = ".kp.jsonl") -> list:
    """One record per input, in input order regardless of completion order."""
    if workers < 1:
        raise ValidationError("workers must be >= 1")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda d: curate_clip(d, thresholds, keypoints_suffix), input_dirs))


def write_manifest(records: Sequence[dict], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
