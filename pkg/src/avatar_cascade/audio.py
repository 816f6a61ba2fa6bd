"""Per-token audio features and a rule-based audio caption.

This is a deterministic stand-in for a learned speech encoder: it produces an
RMS envelope, a voiced/unvoiced activity flag and four band energies on a
fixed token grid (default 50 tokens/s, i.e. a 20 ms hop).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import ValidationError
from .media import DEFAULT_TOKEN_RATE, AudioTrack, TimeGrid, exact

EMOTIONS = ("calm", "excitement", "confusion", "sadness", "surprise", "anger")
INTENSITIES = ("low", "medium", "high")

BAND_EDGES_HZ = (0.0, 500.0, 1000.0, 2000.0, 8000.0)
ACTIVITY_THRESHOLD = 0.05
NORM_PERCENTILE = 99.0


@dataclass(frozen=True, eq=False)
class AudioFeatures:
    """Features on a token grid.

    ``token_offset`` is the global index of token 0, so slices cut out of a
    longer track keep their absolute timing.
    """

    token_rate: float
    envelope: np.ndarray
    activity: np.ndarray
    band_energy: np.ndarray
    raw_rms: np.ndarray
    duration_s: float
    token_offset: int = 0

    def __post_init__(self):
        n = len(self.envelope)
        for name in ("activity", "band_energy", "raw_rms"):
            if len(getattr(self, name)) != n:
                raise ValidationError(f"feature {name} has length {len(getattr(self, name))}, expected {n}")
        for name in ("envelope", "activity", "band_energy", "raw_rms"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.envelope)

    def slice(self, start_token: int, stop_token: int) -> "AudioFeatures":
        """Global-index slice ``[start_token, stop_token)``, clamped to the data."""
        lo = max(start_token - self.token_offset, 0)
        hi = min(max(stop_token - self.token_offset, lo), len(self))
        return AudioFeatures(
            token_rate=self.token_rate,
            envelope=self.envelope[lo:hi],
            activity=self.activity[lo:hi],
            band_energy=self.band_energy[lo:hi],
            raw_rms=self.raw_rms[lo:hi],
            duration_s=(hi - lo) / float(self.token_rate),
            token_offset=self.token_offset + lo,
        )

    def envelope_at_token(self, token: int) -> float:
        """Envelope at a global token index; out-of-range tokens read as silence."""
        j = token - self.token_offset
        if 0 <= j < len(self.envelope):
            return float(self.envelope[j])
        return 0.0

    def envelope_on_frames(self, num_frames: int, fps, first_frame: int = 0) -> np.ndarray:
        """Envelope sampled at the token containing each frame's center."""
        grid = TimeGrid(fps, self.token_rate)
        return np.array(
            [self.envelope_at_token(grid.center_token(first_frame + i)) for i in range(num_frames)]
        )

    def to_dict(self) -> dict:
        return {
            "token_rate": self.token_rate,
            "token_offset": self.token_offset,
            "duration_s": self.duration_s,
            "envelope": self.envelope.tolist(),
            "activity": self.activity.astype(bool).tolist(),
            "band_energy": self.band_energy.tolist(),
            "raw_rms": self.raw_rms.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AudioFeatures":
        return cls(
            token_rate=d["token_rate"],
            envelope=np.asarray(d["envelope"], dtype=np.float64),
            activity=np.asarray(d["activity"], dtype=bool),
            band_energy=np.asarray(d["band_energy"], dtype=np.float64).reshape(-1, 4),
            raw_rms=np.asarray(d["raw_rms"], dtype=np.float64),
            duration_s=d["duration_s"],
            token_offset=d.get("token_offset", 0),
        )

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


def _token_bounds(num_samples: int, sample_rate: int, token_rate) -> np.ndarray:
    rate = exact(token_rate)
    n_tokens = math.ceil(Fraction(num_samples) * rate / sample_rate)
    # sample s belongs to token j iff j/rate <= s/sr < (j+1)/rate
    bounds = [math.ceil(Fraction(j * sample_rate) / rate) for j in range(n_tokens + 1)]
    bounds[-1] = num_samples
    return np.asarray(bounds, dtype=np.int64)


def _band_energies(window: np.ndarray, sample_rate: int) -> np.ndarray:
    n = window.size
    spec = np.abs(np.fft.rfft(window * np.hanning(n))) ** 2 if n > 1 else np.abs(window) ** 2
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate) if n > 1 else np.zeros(1)
    out = np.empty(4)
    for b in range(4):
        lo, hi = BAND_EDGES_HZ[b], BAND_EDGES_HZ[b + 1]
        sel = (freqs >= lo) & ((freqs < hi) if b < 3 else (freqs <= hi))
        out[b] = spec[sel].sum()
    total = out.sum()
    if total <= 0:
        return np.full(4, 0.25)
    return out / total


def extract_features(audio: AudioTrack, token_rate=DEFAULT_TOKEN_RATE) -> AudioFeatures:
    if len(audio) == 0:
        raise ValidationError("zero-length audio")
    x = audio.samples
    bounds = _token_bounds(x.size, audio.sample_rate, token_rate)
    n_tokens = bounds.size - 1

    sq = np.concatenate([[0.0], np.cumsum(x * x)])
    lengths = np.diff(bounds)
    raw = np.sqrt(np.maximum(sq[bounds[1:]] - sq[bounds[:-1]], 0.0) / lengths)

    ref = np.percentile(raw, NORM_PERCENTILE)
    if ref > 0:
        envelope = np.clip(raw / ref, 0.0, 1.0)
    else:
        envelope = np.zeros(n_tokens)
    activity = envelope > ACTIVITY_THRESHOLD

    bands = np.empty((n_tokens, 4))
    for j in range(n_tokens):
        bands[j] = _band_energies(x[bounds[j]:bounds[j + 1]], audio.sample_rate)

    return AudioFeatures(
        token_rate=float(token_rate),
        envelope=envelope,
        activity=activity,
        band_energy=bands,
        raw_rms=raw,
        duration_s=audio.duration,
    )


# --------------------------------------------------------------------------
# Caption


@dataclass(frozen=True)
class AudioCaption:
    transcript: str = ""
    emotion: str = "calm"
    intensity: str = "medium"
    speech_rate: float = 0.0

    def __post_init__(self):
        if self.emotion not in EMOTIONS:
            raise ValidationError(f"unknown emotion {self.emotion!r}")
        if self.intensity not in INTENSITIES:
            raise ValidationError(f"unknown intensity {self.intensity!r}")


@dataclass(frozen=True)
class EmotionRule:
    """First matching rule wins; ``None`` bounds are ignored."""

    emotion: str
    min_mean: Optional[float] = None
    max_mean: Optional[float] = None
    min_var: Optional[float] = None
    max_var: Optional[float] = None
    min_rate: Optional[float] = None
    max_rate: Optional[float] = None

    def matches(self, mean: float, var: float, rate: float) -> bool:
        checks = (
            (self.min_mean, mean, True), (self.max_mean, mean, False),
            (self.min_var, var, True), (self.max_var, var, False),
            (self.min_rate, rate, True), (self.max_rate, rate, False),
        )
        for bound, value, is_min in checks:
            if bound is None:
                continue
            if is_min and value < bound:
                return False
            if not is_min and value >= bound:
                return False
        return True


# mean/var are over the normalized envelope; rate is active tokens per second.
DEFAULT_EMOTION_RULES = (
    EmotionRule("calm", max_mean=0.05),
    EmotionRule("excitement", min_mean=0.6, min_var=0.03),
    EmotionRule("anger", min_mean=0.6),
    EmotionRule("surprise", min_var=0.08),
    EmotionRule("sadness", max_mean=0.35, max_rate=20.0),
    EmotionRule("confusion", min_var=0.04),
    EmotionRule("calm"),
)


@dataclass(frozen=True)
class CaptionConfig:
    rules: tuple = DEFAULT_EMOTION_RULES
    intensity_edges: tuple = (1.0 / 3.0, 2.0 / 3.0)


def caption_audio(features: AudioFeatures, config: CaptionConfig = CaptionConfig()) -> AudioCaption:
    env = features.envelope
    mean = float(env.mean()) if env.size else 0.0
    var = float(env.var()) if env.size else 0.0
    rate = float(np.count_nonzero(features.activity)) / features.duration_s if features.duration_s > 0 else 0.0

    lo, hi = config.intensity_edges
    intensity = "low" if mean < lo else ("medium" if mean < hi else "high")
    emotion = "calm"
    for rule in config.rules:
        if rule.matches(mean, var, rate):
            emotion = rule.emotion
            break
    return AudioCaption(transcript="", emotion=emotion, intensity=intensity, speech_rate=rate)
