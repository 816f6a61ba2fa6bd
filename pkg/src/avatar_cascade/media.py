"""Core media values (frames, clips, audio), time-grid arithmetic and file I/O.

Clips are stored as a directory of binary PPM (P6) frames named
``frame_%06d.ppm`` next to a ``clip.json`` sidecar::

    {"fps": 48, "width": 64, "height": 64, "num_frames": 96,
     "duration": 2.0, "audio": null}

Audio is RIFF WAV, PCM16, read into a mono float track at 16 kHz.
"""

from __future__ import annotations

import json
import math
import os
import wave
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import AudioFormatError, ClipFormatError, MediaIOError, ValidationError

CANONICAL_SAMPLE_RATE = 16000
DEFAULT_FPS = 48
DEFAULT_TOKEN_RATE = 50

Number = Union[int, float, Fraction]
PathLike = Union[str, os.PathLike]


def exact(x: Number) -> Fraction:
    """Convert to an exact rational.

    Floats go through their shortest repr so that ``1.0104166666666667`` is
    treated as the decimal a human typed, not its binary expansion.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    return Fraction(repr(float(x)))


def round_half_away(x: Number) -> int:
    q = exact(x)
    if q >= 0:
        return math.floor(q + Fraction(1, 2))
    return -math.floor(-q + Fraction(1, 2))


def frames_for_audio(duration_s: Number, fps: Number = DEFAULT_FPS) -> int:
    """Mandatory frame count for a video driven by audio of ``duration_s``."""
    d, f = exact(duration_s), exact(fps)
    if d < 0:
        raise ValidationError(f"negative duration {duration_s}")
    if f <= 0:
        raise ValidationError(f"fps must be positive, got {fps}")
    return round_half_away(d * f)


@dataclass(frozen=True, eq=False)
class Frame:
    """An RGB frame backed by a read-only ``(height, width, 3)`` uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValidationError(f"frame pixels must be HxWx3, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError("frame must be at least 1x1")
        if arr.dtype != np.uint8:
            if np.issubdtype(arr.dtype, np.floating):
                arr = np.rint(arr)
            arr = np.clip(arr, 0, 255).astype(np.uint8)
        else:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple:
        return self.pixels.shape

    @classmethod
    def filled(cls, width: int, height: int, color) -> "Frame":
        arr = np.empty((height, width, 3), dtype=np.uint8)
        arr[:] = np.asarray(color, dtype=np.uint8)
        return cls(arr)

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def __repr__(self):
        return f"Frame({self.width}x{self.height})"


@dataclass(frozen=True)
class Clip:
    frames: tuple = ()
    fps: Number = DEFAULT_FPS
    audio: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if exact(self.fps) <= 0:
            raise ValidationError(f"fps must be positive, got {self.fps}")
        if self.frames:
            shape = self.frames[0].shape
            for i, f in enumerate(self.frames):
                if f.shape != shape:
                    raise ValidationError(f"frame {i} has shape {f.shape}, expected {shape}")

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def duration(self) -> float:
        return float(Fraction(len(self.frames)) / exact(self.fps))

    def as_array(self) -> np.ndarray:
        """Stack frames into a ``(n, height, width, 3)`` uint8 array."""
        if not self.frames:
            return np.zeros((0, 0, 0, 3), dtype=np.uint8)
        return np.stack([f.pixels for f in self.frames])


@dataclass(frozen=True, eq=False)
class AudioTrack:
    samples: np.ndarray
    sample_rate: int = CANONICAL_SAMPLE_RATE

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64).reshape(-1).copy()
        if self.sample_rate <= 0:
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")
        if arr.size and (np.max(np.abs(arr)) > 1.0 or not np.all(np.isfinite(arr))):
            raise ValidationError("audio samples must lie within [-1, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.size

    @property
    def duration_exact(self) -> Fraction:
        return Fraction(self.samples.size, self.sample_rate)

    @property
    def duration(self) -> float:
        return float(self.duration_exact)


@dataclass(frozen=True)
class TimeGrid:
    """Frame/token interval arithmetic.

    Frame ``i`` covers ``[i/fps, (i+1)/fps)``; token ``j`` covers
    ``[j/token_rate, (j+1)/token_rate)``. All index math is exact.
    """

    fps: Number = DEFAULT_FPS
    token_rate: Number = DEFAULT_TOKEN_RATE
    _fps: Fraction = field(init=False, repr=False, compare=False)
    _rate: Fraction = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        fps, rate = exact(self.fps), exact(self.token_rate)
        if fps <= 0 or rate <= 0:
            raise ValidationError("fps and token_rate must be positive")
        object.__setattr__(self, "_fps", fps)
        object.__setattr__(self, "_rate", rate)

    def frame_interval(self, i: int) -> tuple:
        return (Fraction(i) / self._fps, Fraction(i + 1) / self._fps)

    def token_interval(self, j: int) -> tuple:
        return (Fraction(j) / self._rate, Fraction(j + 1) / self._rate)

    def tokens_for_frame(self, i: int) -> tuple:
        """Inclusive ``(lo, hi)`` of tokens whose interval overlaps frame ``i``."""
        lo = math.floor(Fraction(i) * self._rate / self._fps)
        hi = math.ceil(Fraction(i + 1) * self._rate / self._fps) - 1
        return lo, hi

    def center_token(self, i: int) -> int:
        """Token containing the center of frame ``i``."""
        return math.floor((Fraction(i) + Fraction(1, 2)) * self._rate / self._fps)

    def token_at(self, t: Number) -> int:
        return math.floor(exact(t) * self._rate)

    def frame_at(self, t: Number) -> int:
        return math.floor(exact(t) * self._fps)


# --------------------------------------------------------------------------
# PPM clips


def _frame_path(dir_path: Path, i: int) -> Path:
    return dir_path / f"frame_{i:06d}.ppm"


def save_frame(frame: Frame, path: PathLike) -> None:
    try:
        Image.fromarray(np.ascontiguousarray(frame.pixels), "RGB").save(path, format="PPM")
    except OSError as exc:
        raise MediaIOError(f"cannot write {path}: {exc}") from exc


def load_frame(path: PathLike) -> Frame:
    try:
        with Image.open(path) as im:
            if im.format != "PPM" or im.mode != "RGB":
                raise ClipFormatError(f"{path}: expected binary RGB PPM, got {im.format}/{im.mode}")
            return Frame(np.asarray(im))
    except FileNotFoundError as exc:
        raise MediaIOError(f"cannot read {path}: {exc}") from exc
    except UnidentifiedImageError as exc:
        raise ClipFormatError(f"{path}: not a PPM image") from exc


def save_clip(clip: Clip, dir_path: PathLike) -> None:
    if not clip.frames:
        raise ValidationError("empty clip")
    d = Path(dir_path)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise MediaIOError(f"cannot create {d}: {exc}") from exc
    for stale in d.glob("frame_*.ppm"):
        stale.unlink()
    for i, frame in enumerate(clip.frames):
        save_frame(frame, _frame_path(d, i))
    fps = exact(clip.fps)
    meta = {
        "fps": int(fps) if fps.denominator == 1 else float(fps),
        "width": clip.width,
        "height": clip.height,
        "num_frames": len(clip.frames),
        "duration": float(Fraction(len(clip.frames)) / fps),
        "audio": clip.audio,
    }
    try:
        (d / "clip.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise MediaIOError(f"cannot write {d / 'clip.json'}: {exc}") from exc


def load_clip(dir_path: PathLike) -> Clip:
    d = Path(dir_path)
    meta_path = d / "clip.json"
    try:
        meta = json.loads(meta_path.read_text())
    except FileNotFoundError as exc:
        raise MediaIOError(f"missing {meta_path}") from exc
    except json.JSONDecodeError as exc:
        raise ClipFormatError(f"{meta_path}: invalid JSON ({exc})") from exc
    try:
        n, w, h, fps = int(meta["num_frames"]), int(meta["width"]), int(meta["height"]), meta["fps"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ClipFormatError(f"{meta_path}: bad or missing field ({exc})") from exc

    frames = []
    for i in range(n):
        p = _frame_path(d, i)
        if not p.exists():
            raise ClipFormatError(f"missing frame {i}")
        f = load_frame(p)
        if (f.width, f.height) != (w, h):
            raise ClipFormatError(
                f"dimension mismatch in frame {i} ({p.name}): {f.width}x{f.height}, "
                f"clip.json says {w}x{h}"
            )
        frames.append(f)
    if _frame_path(d, n).exists():
        raise ClipFormatError(f"extra frame {n} beyond num_frames={n}")
    return Clip(tuple(frames), fps=fps, audio=meta.get("audio"))


# --------------------------------------------------------------------------
# WAV audio


def resample_linear(samples: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    n = samples.size
    if src_rate == dst_rate or n == 0:
        return np.asarray(samples, dtype=np.float64)
    n_out = (2 * n * dst_rate + src_rate) // (2 * src_rate)
    pos = np.arange(n_out, dtype=np.float64) * (src_rate / dst_rate)
    return np.interp(pos, np.arange(n, dtype=np.float64), samples)


def load_audio(path: PathLike, target_rate: int = CANONICAL_SAMPLE_RATE) -> AudioTrack:
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, nframes = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            if width != 2:
                raise AudioFormatError(f"{path}: unsupported encoding, need PCM16 (sample width {width})")
            raw = w.readframes(nframes)
    except FileNotFoundError as exc:
        raise MediaIOError(f"cannot read {path}: {exc}") from exc
    except (wave.Error, EOFError) as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise AudioFormatError(f"{path}: unsupported encoding ({msg})") from exc
        raise AudioFormatError(f"{path}: corrupt WAV header ({msg})") from exc

    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if channels > 1:
        data = data[: data.size - data.size % channels].reshape(-1, channels).mean(axis=1)
    return AudioTrack(resample_linear(data, rate, target_rate), target_rate)


def save_audio(track: AudioTrack, path: PathLike) -> None:
    pcm = np.clip(np.rint(track.samples * 32768.0), -32768, 32767).astype("<i2")
    try:
        with wave.open(str(path), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(int(track.sample_rate))
            w.writeframes(pcm.tobytes())
    except OSError as exc:
        raise MediaIOError(f"cannot write {path}: {exc}") from exc

