"""Training/inference conditioning mechanisms as standalone numeric components.

* sliding-window audio attention masks (one video token per frame)
* mouth-region weighted MSE and its gradient
* random frame padding augmentation
* trainable/frozen parameter partition (text cross-attention frozen)
* reference-image corruption for negative-frame guidance, CFG combination
* audio cross-attention output boosting
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional, Union

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.ndimage import uniform_filter

from .errors import ConditioningWarning, MediaIOError, ValidationError
from .media import Frame, TimeGrid

DEFAULT_PAD_TOKENS = 2
DEFAULT_MOUTH_WEIGHT = 2.0
DEFAULT_BOOST = 1.5
DEFAULT_CFG_SCALE = 4.0
MIN_BOX_CONFIDENCE = 0.3
TEXT_XATTN_PATTERN = r"(?:^|\.)text_xattn(?:\.|$)"


# --------------------------------------------------------------------------
# Sliding-window audio attention


@dataclass(frozen=True, eq=False)
class AttentionMask:
    num_video_tokens: int
    num_audio_tokens: int
    lo: np.ndarray
    hi: np.ndarray

    @property
    def ranges(self) -> list:
        return [(int(a), int(b)) for a, b in zip(self.lo, self.hi)]

    def dense(self) -> np.ndarray:
        """Boolean ``(num_video_tokens, num_audio_tokens)`` matrix, True = may attend."""
        j = np.arange(self.num_audio_tokens)
        return (j[None, :] >= self.lo[:, None]) & (j[None, :] <= self.hi[:, None])

    def additive(self) -> np.ndarray:
        """0 where allowed, -inf elsewhere; add to attention logits before softmax."""
        return np.where(self.dense(), 0.0, -np.inf)


def build_audio_mask(grid: TimeGrid, num_frames: int, num_audio_tokens: int,
                     pad_tokens: int = DEFAULT_PAD_TOKENS) -> AttentionMask:
    if num_frames <= 0 or num_audio_tokens <= 0:
        raise ValidationError("attention mask needs at least one frame and one audio token")
    if pad_tokens < 0:
        raise ValidationError(f"pad_tokens must be >= 0, got {pad_tokens}")
    lo = np.empty(num_frames, dtype=np.int64)
    hi = np.empty(num_frames, dtype=np.int64)
    last = num_audio_tokens - 1
    for i in range(num_frames):
        a, b = grid.tokens_for_frame(i)
        lo[i] = min(max(a - pad_tokens, 0), last)
        hi[i] = min(max(b + pad_tokens, 0), last)
    return AttentionMask(num_frames, num_audio_tokens, lo, hi)


# --------------------------------------------------------------------------
# Mouth boxes and the weighted loss


@dataclass(frozen=True)
class MouthBox:
    """Inclusive pixel rectangle around the mouth plus detector confidence."""

    x0: int
    y0: int
    x1: int
    y1: int
    confidence: float = 1.0

    @property
    def present(self) -> bool:
        return self.confidence >= MIN_BOX_CONFIDENCE

    def to_record(self, frame: int) -> dict:
        return {"frame": frame, "x0": self.x0, "y0": self.y0, "x1": self.x1, "y1": self.y1,
                "conf": round(float(self.confidence), 6)}


def load_keypoints(path) -> dict:
    """Read a keypoints JSONL file into ``{frame_index: MouthBox}``."""
    boxes = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    r = json.loads(line)
                    boxes[int(r["frame"])] = MouthBox(int(r["x0"]), int(r["y0"]), int(r["x1"]), int(r["y1"]), float(r["conf"]))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise ValidationError(f"{path}:{lineno}: bad keypoints record ({exc})") from exc
    except FileNotFoundError as exc:
        raise MediaIOError(f"cannot read {path}: {exc}") from exc
    return boxes


def save_keypoints(boxes: Mapping[int, MouthBox], path) -> None:
    with open(path, "w") as fh:
        for i in sorted(boxes):
            fh.write(json.dumps(boxes[i].to_record(i), sort_keys=True) + "\n")


@dataclass(frozen=True, eq=False)
class WeightMask:
    width: int
    height: int
    weights: np.ndarray


def build_weight_mask(box: Optional[MouthBox], width: int, height: int,
                      w_mouth: float = DEFAULT_MOUTH_WEIGHT) -> WeightMask:
    if w_mouth < 1:
        raise ValidationError(f"w_mouth must be >= 1, got {w_mouth}")
    weights = np.ones((height, width))
    if box is not None and box.present:
        x0, x1 = sorted((box.x0, box.x1))
        y0, y1 = sorted((box.y0, box.y1))
        cx0, cx1 = max(x0, 0), min(x1, width - 1)
        cy0, cy1 = max(y0, 0), min(y1, height - 1)
        if (cx0, cx1, cy0, cy1) != (x0, x1, y0, y1):
            warnings.warn(f"mouth box {box} clamped to {width}x{height} image", ConditioningWarning, stacklevel=2)
        if cx0 <= cx1 and cy0 <= cy1:
            weights[cy0:cy1 + 1, cx0:cx1 + 1] = w_mouth
    return WeightMask(width, height, weights)


def weighted_loss(pred, target, mask: WeightMask) -> tuple:
    """Weighted MSE ``sum(w*(p-t)^2)/sum(w)`` and its gradient w.r.t. ``pred``.

    ``pred``/``target`` are ``(H, W)`` or ``(H, W, C)``; weights broadcast over channels.
    """
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValidationError(f"shape mismatch: pred {p.shape} vs target {t.shape}")
    w = mask.weights
    if p.shape[:2] != w.shape:
        raise ValidationError(f"shape mismatch: pred {p.shape} vs mask {w.shape}")
    if p.ndim == 3:
        w = np.broadcast_to(w[:, :, None], p.shape)
    diff = p - t
    total = w.sum()
    return float((w * diff * diff).sum() / total), 2.0 * w * diff / total


# --------------------------------------------------------------------------
# Frame padding augmentation


def pad_frame(frame: Frame, pad_left: int, pad_right: int, pad_top: int, pad_bottom: int,
              fill=(0, 0, 0)) -> Frame:
    if min(pad_left, pad_right, pad_top, pad_bottom) < 0:
        raise ValidationError("pads must be non-negative")
    h, w = frame.height, frame.width
    out = np.empty((h + pad_top + pad_bottom, w + pad_left + pad_right, 3), dtype=np.uint8)
    out[:] = np.asarray(fill, dtype=np.uint8)
    out[pad_top:pad_top + h, pad_left:pad_left + w] = frame.pixels
    return Frame(out)


def sample_pads(width: int, height: int, ratio: float, seed) -> tuple:
    """Draw ``(left, right, top, bottom)`` uniformly in ``[0, ratio*dim]`` per side."""
    rng = np.random.default_rng(seed)
    mx, my = int(ratio * width), int(ratio * height)
    left, right = (int(v) for v in rng.integers(0, mx + 1, size=2))
    top, bottom = (int(v) for v in rng.integers(0, my + 1, size=2))
    return left, right, top, bottom


def random_pad(frame: Frame, ratio: float, seed, fill=(0, 0, 0)) -> Frame:
    return pad_frame(frame, *sample_pads(frame.width, frame.height, ratio, seed), fill=fill)


# --------------------------------------------------------------------------
# Parameter partition


def partition_parameters(named_parameters: Union[Iterable[str], Mapping[str, object]],
                         pattern: str = TEXT_XATTN_PATTERN) -> tuple:
    """Split parameter names into ``(trainable, frozen)`` sets.

    Names follow dotted module paths; any path component ``text_xattn`` marks
    a text cross-attention parameter, which is frozen.
    """
    names = set(named_parameters.keys() if isinstance(named_parameters, Mapping) else named_parameters)
    rx = re.compile(pattern)
    frozen = {n for n in names if rx.search(n)}
    if names and not frozen:
        warnings.warn("no text cross-attention parameters matched; nothing frozen",
                      ConditioningWarning, stacklevel=2)
    return names - frozen, frozen


# --------------------------------------------------------------------------
# Negative-frame guidance


@dataclass(frozen=True)
class CorruptionRecipe:
    """Identity drift simulation; applied in field order (blur first, noise last)."""

    blur_radius: int = 0
    contrast_gain: float = 1.0
    saturation_gain: float = 1.0
    hue_shift: float = 0.0
    texture_noise_amp: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.blur_radius < 0:
            raise ValidationError("blur_radius must be >= 0")
        if self.contrast_gain < 1 or self.saturation_gain < 1:
            raise ValidationError("contrast and saturation gains must be >= 1")
        if not 0 <= self.texture_noise_amp <= 1:
            raise ValidationError("texture_noise_amp must lie in [0, 1]")

    @property
    def is_identity(self) -> bool:
        return (self.blur_radius, self.contrast_gain, self.saturation_gain,
                self.hue_shift % 360.0, self.texture_noise_amp) == (0, 1.0, 1.0, 0.0, 0.0)


DEFAULT_RECIPE = CorruptionRecipe(blur_radius=2, contrast_gain=1.4, saturation_gain=1.5,
                                  hue_shift=20.0, texture_noise_amp=0.08, seed=0)


def corrupt_reference(image: Frame, recipe: CorruptionRecipe) -> Frame:
    """Blur -> contrast -> saturation -> hue -> additive noise.

    Colour steps use the hexcone HSV model (matplotlib's ``rgb_to_hsv``) on
    values scaled to [0, 1]. Identity steps are skipped so an identity recipe
    returns the input bit-exactly.
    """
    x = image.pixels.astype(np.float64)
    if recipe.blur_radius > 0:
        size = 2 * int(recipe.blur_radius) + 1
        x = uniform_filter(x, size=(size, size, 1), mode="nearest")
    if recipe.contrast_gain != 1.0:
        x = np.clip(128.0 + recipe.contrast_gain * (x - 128.0), 0.0, 255.0)
    if recipe.saturation_gain != 1.0 or recipe.hue_shift % 360.0 != 0.0:
        hsv = rgb_to_hsv(np.clip(x, 0.0, 255.0) / 255.0)
        if recipe.saturation_gain != 1.0:
            hsv[..., 1] = np.clip(hsv[..., 1] * recipe.saturation_gain, 0.0, 1.0)
        if recipe.hue_shift % 360.0 != 0.0:
            hsv[..., 0] = (hsv[..., 0] + recipe.hue_shift / 360.0) % 1.0
        x = hsv_to_rgb(hsv) * 255.0
    if recipe.texture_noise_amp > 0:
        rng = np.random.default_rng(recipe.seed)
        amp = recipe.texture_noise_amp * 255.0
        x = x + rng.uniform(-amp, amp, size=x.shape)
    return Frame(np.clip(np.rint(x), 0, 255).astype(np.uint8))


def cfg_combine(e_pos, e_neg, scale: float = DEFAULT_CFG_SCALE) -> np.ndarray:
    """``e_neg + scale * (e_pos - e_neg)``."""
    p = np.asarray(e_pos, dtype=np.float64)
    n = np.asarray(e_neg, dtype=np.float64)
    if p.shape != n.shape:
        raise ValidationError(f"length mismatch: {p.shape} vs {n.shape}")
    return n + scale * (p - n)


class NegativeFrameGuidance:
    """Guided denoiser output with a corrupted reference as the negative branch.

    ``denoise(x, t, reference)`` is any callable returning a noise/velocity
    prediction conditioned on a reference frame.
    """

    def __init__(self, recipe: CorruptionRecipe = DEFAULT_RECIPE, scale: float = DEFAULT_CFG_SCALE):
        self.recipe = recipe
        self.scale = scale
        self._negatives = {}

    def negative_reference(self, reference: Frame) -> Frame:
        if reference not in self._negatives:
            self._negatives[reference] = corrupt_reference(reference, self.recipe)
        return self._negatives[reference]

    def __call__(self, denoise: Callable, x, t, reference: Frame) -> np.ndarray:
        e_pos = denoise(x, t, reference)
        e_neg = denoise(x, t, self.negative_reference(reference))
        return cfg_combine(e_pos, e_neg, self.scale)


def boost_audio_attention(values, factor: float = DEFAULT_BOOST) -> np.ndarray:
    """Scale the audio cross-attention output (post-attention, pre-residual)."""
    if factor <= 0:
        raise ValidationError(f"boost factor must be positive, got {factor}")
    return np.asarray(values, dtype=np.float64) * factor
