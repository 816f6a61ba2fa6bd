"""Run configuration.

Stored as JSON; unknown keys are rejected and every value is validated on
load. Command-line flags override file values via :meth:`Config.override`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

from .backend import DEFAULT_BLUEPRINT_FPS
from .cascade import DEFAULT_ANCHOR_WEIGHTS, DEFAULT_ANCHOR_WINDOW_S, DEFAULT_CLIP_SECONDS
from .conditioning import (DEFAULT_BOOST, DEFAULT_CFG_SCALE, DEFAULT_MOUTH_WEIGHT, DEFAULT_PAD_TOKENS,
                           DEFAULT_RECIPE, CorruptionRecipe)
from .curation import Thresholds
from .errors import ValidationError
from .media import DEFAULT_FPS, DEFAULT_TOKEN_RATE


@dataclass(frozen=True)
class Config:
    fps: int = DEFAULT_FPS                      # output frame rate (up to 48 fps)
    token_rate: int = DEFAULT_TOKEN_RATE        # audio tokens per second
    pad_tokens: int = DEFAULT_PAD_TOKENS        # sliding-window audio attention padding
    w_mouth: float = DEFAULT_MOUTH_WEIGHT       # mouth-region loss weight
    cfg_scale: float = DEFAULT_CFG_SCALE        # negative-frame guidance scale
    boost_factor: float = DEFAULT_BOOST         # audio attention boost at inference
    anchor_weights: tuple = DEFAULT_ANCHOR_WEIGHTS  # identity, motion, occlusion_free, expressiveness
    anchor_window_s: float = DEFAULT_ANCHOR_WINDOW_S
    blueprint_fps: int = DEFAULT_BLUEPRINT_FPS
    clip_seconds: float = DEFAULT_CLIP_SECONDS  # default clip length for ceil(D / clip_seconds)
    num_clips: Optional[int] = None             # overrides clip_seconds when set
    workers: int = 1
    seed: int = 0
    director: str = "rules"
    backend: str = "procedural"
    corruption: CorruptionRecipe = DEFAULT_RECIPE
    thresholds: Thresholds = field(default_factory=Thresholds)

    def __post_init__(self):
        def pos_int(name):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ValidationError(f"config {name} must be a positive integer, got {v!r}")

        def finite(name, lo=None, strict=False):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValidationError(f"config {name} must be a finite number, got {v!r}")
            if lo is not None and (v <= lo if strict else v < lo):
                raise ValidationError(f"config {name} must be {'>' if strict else '>='} {lo}, got {v!r}")

        for name in ("fps", "token_rate", "blueprint_fps", "workers"):
            pos_int(name)
        if self.num_clips is not None:
            pos_int("num_clips")
        if isinstance(self.pad_tokens, bool) or not isinstance(self.pad_tokens, int) or self.pad_tokens < 0:
            raise ValidationError(f"config pad_tokens must be a non-negative integer, got {self.pad_tokens!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ValidationError(f"config seed must be a non-negative integer, got {self.seed!r}")
        finite("w_mouth", 1.0)
        finite("cfg_scale", 0.0)
        finite("boost_factor", 0.0, strict=True)
        finite("anchor_window_s", 0.0)
        finite("clip_seconds", 0.0, strict=True)
        w = tuple(self.anchor_weights)
        if len(w) != 4 or any(not isinstance(x, (int, float)) or not math.isfinite(x) or x < 0 for x in w):
            raise ValidationError("config anchor_weights must be four finite non-negative numbers")
        object.__setattr__(self, "anchor_weights", tuple(float(x) for x in w))
        if self.blueprint_fps > self.fps:
            raise ValidationError("config blueprint_fps must not exceed fps")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["anchor_weights"] = list(self.anchor_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        if not isinstance(d, dict):
            raise ValidationError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        kw = dict(d)
        try:
            if "corruption" in kw:
                kw["corruption"] = CorruptionRecipe(**kw["corruption"])
            if "thresholds" in kw:
                kw["thresholds"] = Thresholds(**kw["thresholds"])
        except TypeError as exc:
            raise ValidationError(f"config: {exc}") from None
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "Config":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"config {path}: invalid JSON ({exc.msg})") from None
        return cls.from_dict(data)

    def override(self, **values) -> "Config":
        """Replace fields whose value is not ``None``."""
        given = {k: v for k, v in values.items() if v is not None}
        return replace(self, **given) if given else self

    def with_thresholds(self, **values) -> "Config":
        given = {k: v for k, v in values.items() if v is not None}
        return replace(self, thresholds=replace(self.thresholds, **given)) if given else self
