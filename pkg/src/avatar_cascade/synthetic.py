"""Seeded synthetic inputs: speech-like audio, portraits and curation fixture pairs.

The curation pairs follow the usual negative-sample recipes: perturb the
mouth region (blur), splice unrelated segments, and shift the audio
against the video.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
from scipy.ndimage import uniform_filter

from .backend import AvatarParams, derive_base_params, mouth_box_for, render
from .cascade import histogram_distance, rgb_histogram
from .conditioning import MouthBox
from .media import CANONICAL_SAMPLE_RATE, AudioTrack, Clip, Frame, exact, round_half_away


def speech_audio(duration_s: float, seed: int = 0, sample_rate: int = CANONICAL_SAMPLE_RATE,
                 syllable_hz: float = 4.0) -> AudioTrack:
    """Voiced syllables (harmonic carrier under a raised-cosine envelope) separated by pauses."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    env = np.zeros(n)
    t = 0.0
    while t < duration_s:
        length = rng.uniform(0.6, 1.4) / syllable_hz
        if rng.random() < 0.8:
            a = int(t * sample_rate)
            b = min(n, int((t + length) * sample_rate))
            if b > a:
                u = np.linspace(0.0, 1.0, b - a, endpoint=False)
                env[a:b] = rng.uniform(0.3, 1.0) * np.sin(np.pi * u) ** 2
        t += length + (rng.uniform(0.1, 0.4) if rng.random() < 0.15 else 0.0)
    pitch = rng.uniform(110, 220)
    time_axis = np.arange(n) / sample_rate
    carrier = sum(np.sin(2 * np.pi * pitch * k * time_axis + rng.uniform(0, 2 * np.pi)) / k for k in range(1, 6))
    carrier /= np.max(np.abs(carrier)) or 1.0
    return AudioTrack(0.8 * env * carrier, sample_rate)


def portrait(width: int = 64, height: int = 64, seed: int = 0) -> Frame:
    """A neutral procedural face with seeded skin and background colours."""
    rng = np.random.default_rng(seed)
    skin = tuple(int(c) for c in rng.integers(170, 240, size=3))
    bg = tuple(int(c) for c in rng.integers(20, 110, size=3))
    return render(AvatarParams(skin_color=skin, background_color=bg), width, height)


def talking_clip(envelope: np.ndarray, width: int = 64, height: int = 64, fps=48, seed: int = 0) -> tuple:
    """Frames whose mouth aperture follows ``envelope`` (one value per frame) and their mouth boxes."""
    base = derive_base_params(portrait(width, height, seed))
    frames = [render(replace(base, mouth_aperture=float(min(1.0, max(0.0, v)))), width, height)
              for v in envelope]
    clip = Clip(tuple(frames), fps=fps)
    boxes = {i: mouth_box_for(f) for i, f in enumerate(frames)}
    return clip, boxes


# --------------------------------------------------------------------------
# Curation fixture pairs: (positive, negative)


def checker_mouth_clip(num_frames: int = 12, size: int = 48, seed: int = 0, blur_radius: int = 0) -> tuple:
    """Face-like frames with a high-frequency texture in the mouth region; ``blur_radius`` box-blurs it."""
    rng = np.random.default_rng(seed)
    box = MouthBox(size // 3, size // 2, 2 * size // 3, size // 2 + size // 6, 1.0)
    frames = []
    for _ in range(num_frames):
        px = np.full((size, size, 3), rng.integers(120, 200, size=3), dtype=np.float64)
        h, w = box.y1 - box.y0 + 1, box.x1 - box.x0 + 1
        yy, xx = np.mgrid[0:h, 0:w]
        block = int(rng.integers(1, 3))
        checker = (((yy // block) + (xx // block)) % 2) * 200.0 + 20.0
        px[box.y0:box.y1 + 1, box.x0:box.x1 + 1] = checker[..., None]
        if blur_radius:
            crop = px[box.y0:box.y1 + 1, box.x0:box.x1 + 1]
            px[box.y0:box.y1 + 1, box.x0:box.x1 + 1] = uniform_filter(crop, size=(2 * blur_radius + 1,) * 2 + (1,),
                                                                      mode="nearest")
        frames.append(Frame(np.rint(px).astype(np.uint8)))
    return Clip(tuple(frames)), {i: box for i in range(num_frames)}


def lip_clarity_pair(seed: int, blur_radius: int = 2):
    sharp = checker_mouth_clip(seed=seed)
    blurred = checker_mouth_clip(seed=seed, blur_radius=blur_radius)
    return sharp, blurred


def continuous_clip(num_frames: int = 60, size: int = 32, seed: int = 0) -> Clip:
    """Slowly drifting noise texture over a fixed base colour."""
    rng = np.random.default_rng(seed)
    base = rng.integers(40, 215, size=3).astype(np.float64)
    tex = rng.normal(0.0, 12.0, size=(size, size, 3))
    frames = []
    for i in range(num_frames):
        shift = 6.0 * math.sin(2 * math.pi * i / num_frames)
        frames.append(Frame(np.clip(np.rint(base + tex + shift), 0, 255).astype(np.uint8)))
    return Clip(tuple(frames))


def splice(a: Clip, b: Clip, at: int) -> Clip:
    """``a[:at] + b[at:]``; the cut lands at index ``at``."""
    return Clip(a.frames[:at] + b.frames[at:], fps=a.fps)


def spliced_pair(seed: int, num_frames: int = 60):
    """(continuous clip, spliced clip, cut index)."""
    rng = np.random.default_rng(seed)
    a = continuous_clip(num_frames, seed=2 * seed + 1)
    while True:
        b = continuous_clip(num_frames, seed=int(rng.integers(1 << 30)))
        if histogram_distance(rgb_histogram(a[0]), rgb_histogram(b[0])) > 0.6:
            break
    at = int(rng.integers(10, num_frames - 10))
    return a, splice(a, b, at), at


def shift_frames(envelope: np.ndarray, k: int) -> np.ndarray:
    """``out[i] = envelope[i - k]`` with edge padding; positive ``k`` delays."""
    n = len(envelope)
    idx = np.clip(np.arange(n) - k, 0, n - 1)
    return np.asarray(envelope)[idx]


def shift_audio(track: AudioTrack, frames: int, fps=48) -> AudioTrack:
    """Delay (positive ``frames``) or advance the audio by whole video frames, keeping its length."""
    n = len(track)
    k = round_half_away(abs(frames) * exact(track.sample_rate) / exact(fps))
    k = min(k, n)
    pad = np.zeros(k)
    if frames >= 0:
        out = np.concatenate([pad, track.samples[:n - k]])
    else:
        out = np.concatenate([track.samples[k:], pad])
    return AudioTrack(out, track.sample_rate)


def scene(color, num_frames: int, size: int = 16) -> list:
    return [Frame.filled(size, size, color)] * num_frames

