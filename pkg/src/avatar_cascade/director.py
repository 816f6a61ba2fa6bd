"""Instruction grounding: prompt + audio caption + image caption -> Storyline.

The rule-based director merges slots by source priority (user prompt, then
audio caption, then image caption, then defaults) and renders the result in
a fixed template. ``decompose`` restricts a storyline to per-sub-clip windows.

Prompt grammar
--------------
Parsing is keyword based and lower-cased:

* emotions: see ``EMOTION_WORDS``; an intensity modifier (``INTENSITY_WORDS``)
  in the two tokens before the emotion word sets the intensity, otherwise
  ``medium``. The first emotion mentioned is the prompt's emotion.
* camera: ``CAMERA_PATTERNS``. Ops are kept in mention order; an op that
  contradicts an earlier one (left/right, in/out, static/anything) is dropped.
* actions: ``ACTION_PATTERNS``, kept in mention order, deduplicated.
* an emotional shift directive matches ``SHIFT_PATTERN`` ("then", "becomes", ...).

Multiple camera ops or actions split the duration evenly in mention order.
"""

from __future__ import annotations

import json
import re
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Protocol, Sequence

import numpy as np

from .audio import EMOTIONS, INTENSITIES, AudioCaption
from .errors import StorylineValidationError, ValidationError
from .media import Frame

CAMERA_OPS = ("static", "pan_left", "pan_right", "zoom_in", "zoom_out")
STYLES = ("photoreal", "cartoon", "anime", "animal", "other")
FRAMINGS = ("full_body", "half_body", "face")

DEFAULT_EMOTION = ("calm", "medium")
DEFAULT_CAMERA = "static"
DEFAULT_ACTION = "talking"
DEFAULT_CHARACTER = "a person"
DEFAULT_BACKGROUND = "plain studio backdrop"
DEFAULT_STYLE = "photoreal"

TIME_TOL = 1e-9

EMOTION_WORDS = {
    "calm": ("calm", "calmly", "peaceful", "peacefully", "relaxed", "serene", "gentle", "gently"),
    "excitement": ("excited", "excitement", "excitedly", "energetic", "enthusiastic", "joyful", "happy", "happily", "cheerful"),
    "confusion": ("confused", "confusion", "puzzled", "perplexed", "bewildered"),
    "sadness": ("sad", "sadness", "sadly", "sorrowful", "crying", "melancholy", "upset", "gloomy"),
    "surprise": ("surprised", "surprise", "shocked", "astonished", "amazed"),
    "anger": ("angry", "anger", "angrily", "furious", "furiously", "rage", "mad", "irritated"),
}
INTENSITY_WORDS = {
    "low": ("slightly", "mildly", "somewhat", "faintly", "little"),
    "high": ("very", "extremely", "intensely", "deeply", "highly", "strongly", "really", "super"),
}
CAMERA_PATTERNS = (
    ("pan_left", r"\bpan(?:s|ning|ned)?\s+(?:to\s+the\s+)?left\b"),
    ("pan_right", r"\bpan(?:s|ning|ned)?\s+(?:to\s+the\s+)?right\b"),
    ("zoom_in", r"\bzoom(?:s|ing|ed)?\s+in\b|\bpush(?:es|ing)?\s+in\b|\bclose[- ]up\b"),
    ("zoom_out", r"\bzoom(?:s|ing|ed)?\s+out\b|\bpull(?:s|ing)?\s+back\b"),
    ("static", r"\b(?:static|fixed|locked|still)\s+(?:camera|shot)\b"),
)
ACTION_PATTERNS = (
    ("raising_hands", r"\b(?:rais(?:e|es|ing)|lift(?:s|ing)?)\s+(?:(?:his|her|their|both|one|the|a)\s+)*hands?\b|\bhands?\s+up\b"),
    ("head_shaking", r"\bshak(?:e|es|ing)\s+(?:(?:his|her|their|the)\s+)?head\b|\bhead[- ]shak(?:e|es|ing)\b"),
    ("nodding", r"\bnod(?:s|ding|ded)?\b"),
    ("turning", r"\bturn(?:s|ing|ed)?\b"),
    ("waving", r"\bwav(?:e|es|ing)\b"),
    ("singing", r"\bsing(?:s|ing)?\b|\bsang\b"),
    ("gesturing", r"\bgestur(?:e|es|ing)\b"),
    ("talking", r"\b(?:talk|speak)(?:s|ing)?\b"),
)
STYLE_PATTERNS = (
    ("cartoon", r"\bcartoon(?:ish|y)?\b"),
    ("anime", r"\banime\b"),
    ("photoreal", r"\b(?:photoreal(?:istic)?|realistic)\b"),
)
SHIFT_PATTERN = re.compile(
    r"\b(?:then|later|eventually|afterwards|becom(?:e|es|ing)|(?:shift|transition)(?:s|ing)?\s+to)\b"
)


def _conflicts(a: str, b: str) -> bool:
    if a == b:
        return False
    if "static" in (a, b):
        return True
    return {a, b} in ({"pan_left", "pan_right"}, {"zoom_in", "zoom_out"})


@dataclass(frozen=True)
class UserPrompt:
    raw: str = ""
    parsed_emotion: Optional[tuple] = None
    parsed_actions: tuple = ()
    parsed_camera: tuple = ()
    parsed_style: Optional[str] = None
    shift_directive: bool = False

    @classmethod
    def parse(cls, raw: str) -> "UserPrompt":
        return parse_prompt(raw)


def _find_ordered(patterns, text: str) -> list:
    hits = []
    for name, pat in patterns:
        for m in re.finditer(pat, text):
            hits.append((m.start(), name))
    hits.sort()
    return hits


def parse_prompt(raw: str) -> UserPrompt:
    text = (raw or "").lower()
    tokens = re.findall(r"[a-z]+", text)

    emotion = None
    word_to_emotion = {w: e for e, ws in EMOTION_WORDS.items() for w in ws}
    word_to_intensity = {w: i for i, ws in INTENSITY_WORDS.items() for w in ws}
    for k, tok in enumerate(tokens):
        if tok in word_to_emotion:
            intensity = "medium"
            for prev in reversed(tokens[max(0, k - 2):k]):
                if prev in word_to_intensity:
                    intensity = word_to_intensity[prev]
                    break
            emotion = (word_to_emotion[tok], intensity)
            break

    camera = []
    for _, op in _find_ordered(CAMERA_PATTERNS, text):
        if op in camera or any(_conflicts(op, kept) for kept in camera):
            continue
        camera.append(op)

    actions = []
    for _, tag in _find_ordered(ACTION_PATTERNS, text):
        if tag not in actions:
            actions.append(tag)

    styles = _find_ordered(STYLE_PATTERNS, text)
    return UserPrompt(
        raw=raw or "",
        parsed_emotion=emotion,
        parsed_actions=tuple(actions),
        parsed_camera=tuple(camera),
        parsed_style=styles[0][1] if styles else None,
        shift_directive=bool(SHIFT_PATTERN.search(text)),
    )


@dataclass(frozen=True)
class ImageCaption:
    subject: str = DEFAULT_CHARACTER
    style: str = DEFAULT_STYLE
    framing: str = "half_body"
    background: str = DEFAULT_BACKGROUND
    expression: Optional[str] = None  # facial emotion if the captioner reports one

    def __post_init__(self):
        if self.style not in STYLES:
            raise ValidationError(f"unknown style {self.style!r}")
        if self.framing not in FRAMINGS:
            raise ValidationError(f"unknown framing {self.framing!r}")
        if self.expression is not None and self.expression not in EMOTIONS:
            raise ValidationError(f"unknown expression {self.expression!r}")


_HUE_NAMES = ((15, "red"), (45, "orange"), (70, "yellow"), (160, "green"), (200, "cyan"), (260, "blue"), (300, "purple"), (340, "pink"), (360, "red"))


def _color_name(rgb) -> str:
    r, g, b = (float(c) / 255.0 for c in rgb)
    mx, mn = max(r, g, b), min(r, g, b)
    if mx - mn < 0.08:
        return "white" if mx > 0.85 else ("black" if mx < 0.15 else "gray")
    if mx == r:
        h = (60 * (g - b) / (mx - mn)) % 360
    elif mx == g:
        h = 60 * (b - r) / (mx - mn) + 120
    else:
        h = 60 * (r - g) / (mx - mn) + 240
    for edge, name in _HUE_NAMES:
        if h < edge:
            return name
    return "red"


def caption_image(frame: Frame) -> ImageCaption:
    """Pixel-statistics stand-in for a vision-language captioner."""
    px = frame.pixels
    border = np.concatenate([px[0], px[-1], px[:, 0], px[:, -1]]).reshape(-1, 3)
    return ImageCaption(
        subject="portrait subject",
        style="photoreal",
        framing="half_body",
        background=f"plain {_color_name(border.mean(axis=0))} backdrop",
    )


# --------------------------------------------------------------------------
# Storyline types


@dataclass(frozen=True)
class Span:
    start_s: float
    end_s: float
    tag: str

    @property
    def length(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class EmotionSpan:
    start_s: float
    end_s: float
    emotion: str
    intensity: str = "medium"

    @property
    def length(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class Storyline:
    duration_s: float
    character_features: str
    background_layout: str
    visual_style: str
    actions: tuple
    camera_plan: tuple
    emotion_track: tuple
    unified_prompt: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class LocalPlan:
    clip_index: int
    window: tuple
    emotion: str
    intensity: str
    actions: tuple
    camera_op: str
    local_prompt: str
    action_spans: tuple = ()
    camera_spans: tuple = ()
    emotion_spans: tuple = ()

    def to_dict(self) -> dict:
        return asdict(self)


def _even_spans(duration: float, tags: Sequence[str]) -> tuple:
    n = len(tags)
    edges = [duration * k / n for k in range(n)] + [duration]
    return tuple(Span(edges[k], edges[k + 1], t) for k, t in enumerate(tags))


def _fmt_time(t: float) -> str:
    return f"{t:.2f}"


def _render_spans(spans, fmt) -> str:
    return "; ".join(f"{_fmt_time(s.start_s)}-{_fmt_time(s.end_s)}s {fmt(s)}" for s in spans)


def render_prompt(character, background, style, emotions, actions, camera, header: str = "") -> str:
    """Fixed slot order: character, background, style, emotion, actions, camera."""
    parts = [
        f"[character] {character}",
        f"[background] {background}",
        f"[style] {style}",
        "[emotion] " + _render_spans(emotions, lambda s: f"{s.emotion} ({s.intensity})"),
        "[actions] " + _render_spans(actions, lambda s: s.tag),
        "[camera] " + _render_spans(camera, lambda s: s.tag),
    ]
    text = " | ".join(parts)
    return f"{header} {text}" if header else text


def compose_storyline(
    prompt=None,
    audio: Optional[AudioCaption] = None,
    image: Optional[ImageCaption] = None,
    duration_s: float = 0.0,
) -> Storyline:
    """Priority merge of the three instruction sources into a Storyline."""
    if duration_s <= 0:
        raise ValidationError(f"duration must be positive, got {duration_s}")
    if prompt is None or isinstance(prompt, str):
        prompt = parse_prompt(prompt or "")
    d = float(duration_s)

    if prompt.parsed_emotion is not None:
        primary = prompt.parsed_emotion
    elif audio is not None:
        primary = (audio.emotion, audio.intensity)
    elif image is not None and image.expression is not None:
        primary = (image.expression, "medium")
    else:
        primary = DEFAULT_EMOTION

    if (
        prompt.parsed_emotion is not None
        and audio is not None
        and audio.emotion != prompt.parsed_emotion[0]
        and prompt.shift_directive
    ):
        emotions = (
            EmotionSpan(0.0, d / 2, *primary),
            EmotionSpan(d / 2, d, audio.emotion, audio.intensity),
        )
    else:
        emotions = (EmotionSpan(0.0, d, *primary),)

    camera = _even_spans(d, prompt.parsed_camera or (DEFAULT_CAMERA,))
    actions = _even_spans(d, prompt.parsed_actions or (DEFAULT_ACTION,))

    if image is not None:
        character = f"{image.subject}, {image.framing.replace('_', ' ')} framing"
        background = image.background
        style = image.style
    else:
        character, background, style = DEFAULT_CHARACTER, DEFAULT_BACKGROUND, DEFAULT_STYLE
    if prompt.parsed_style is not None:
        style = prompt.parsed_style

    return Storyline(
        duration_s=d,
        character_features=character,
        background_layout=background,
        visual_style=style,
        actions=actions,
        camera_plan=camera,
        emotion_track=emotions,
        unified_prompt=render_prompt(character, background, style, emotions, actions, camera),
    )


# --------------------------------------------------------------------------
# Validation and (de)serialization


def _timeline_problems(name: str, spans, duration: float) -> list:
    if not spans:
        return [f"{name}: empty timeline"]
    problems = []
    if abs(spans[0].start_s) > TIME_TOL:
        problems.append(f"{name}: starts at {spans[0].start_s}, expected 0")
    for k, s in enumerate(spans):
        if not s.end_s > s.start_s:
            problems.append(f"{name}[{k}]: empty or reversed interval [{s.start_s}, {s.end_s})")
    for k in range(len(spans) - 1):
        gap = spans[k + 1].start_s - spans[k].end_s
        if gap > TIME_TOL:
            problems.append(f"{name}: gap between entries {k} and {k + 1}")
        elif gap < -TIME_TOL:
            problems.append(f"{name}: entries {k} and {k + 1} overlap")
    if abs(spans[-1].end_s - duration) > TIME_TOL:
        problems.append(f"{name}: ends at {spans[-1].end_s}, expected {duration}")
    return problems


def storyline_problems(sl: Storyline) -> list:
    problems = []
    if not sl.duration_s > 0:
        problems.append("duration_s must be positive")
    problems += _timeline_problems("actions", sl.actions, sl.duration_s)
    problems += _timeline_problems("camera_plan", sl.camera_plan, sl.duration_s)
    problems += _timeline_problems("emotion_track", sl.emotion_track, sl.duration_s)
    for k, s in enumerate(sl.camera_plan):
        if s.tag not in CAMERA_OPS:
            problems.append(f"camera_plan[{k}]: unknown camera op {s.tag!r}")
    for k, s in enumerate(sl.emotion_track):
        if s.emotion not in EMOTIONS:
            problems.append(f"emotion_track[{k}]: emotion {s.emotion!r} not in taxonomy")
        if s.intensity not in INTENSITIES:
            problems.append(f"emotion_track[{k}]: unknown intensity {s.intensity!r}")
    for k, s in enumerate(sl.actions):
        if not s.tag:
            problems.append(f"actions[{k}]: empty action tag")
    return problems


def validate_storyline(sl: Storyline) -> Storyline:
    problems = storyline_problems(sl)
    if problems:
        raise StorylineValidationError("invalid storyline: " + "; ".join(problems))
    return sl


def storyline_from_dict(d: dict) -> Storyline:
    """Parse and validate a storyline dict (e.g. an external director response)."""
    if not isinstance(d, dict):
        raise StorylineValidationError("storyline response must be a JSON object")
    required = ("duration_s", "actions", "camera_plan", "emotion_track")
    missing = [k for k in required if k not in d]
    if missing:
        raise StorylineValidationError(f"storyline response missing {', '.join(missing)}")
    try:
        sl = Storyline(
            duration_s=float(d["duration_s"]),
            character_features=str(d.get("character_features", DEFAULT_CHARACTER)),
            background_layout=str(d.get("background_layout", DEFAULT_BACKGROUND)),
            visual_style=str(d.get("visual_style", DEFAULT_STYLE)),
            actions=tuple(Span(float(s["start_s"]), float(s["end_s"]), str(s["tag"])) for s in d["actions"]),
            camera_plan=tuple(Span(float(s["start_s"]), float(s["end_s"]), str(s["tag"])) for s in d["camera_plan"]),
            emotion_track=tuple(
                EmotionSpan(float(s["start_s"]), float(s["end_s"]), str(s["emotion"]), str(s.get("intensity", "medium")))
                for s in d["emotion_track"]
            ),
            unified_prompt=str(d.get("unified_prompt", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise StorylineValidationError(f"malformed storyline entry: {exc!r}") from exc
    validate_storyline(sl)
    if not sl.unified_prompt:
        sl = replace(sl, unified_prompt=render_prompt(
            sl.character_features, sl.background_layout, sl.visual_style,
            sl.emotion_track, sl.actions, sl.camera_plan))
    return sl


# --------------------------------------------------------------------------
# Decomposition


def _restrict(spans, lo: float, hi: float) -> list:
    out = []
    for s in spans:
        a, b = max(s.start_s, lo), min(s.end_s, hi)
        if b > a:
            out.append(replace(s, start_s=a, end_s=b))
    return out


def _dominant(spans):
    best = None
    for s in spans:
        if best is None or s.length > best.length:
            best = s
    return best


def check_windows(windows, duration: float) -> None:
    if not windows:
        raise ValidationError("no windows")
    if abs(windows[0][0]) > TIME_TOL:
        raise ValidationError(f"windows must start at 0, got {windows[0][0]}")
    for k, (a, b) in enumerate(windows):
        if not b > a:
            raise ValidationError(f"window {k} is empty: [{a}, {b})")
    for k in range(len(windows) - 1):
        gap = windows[k + 1][0] - windows[k][1]
        if gap > TIME_TOL:
            raise ValidationError(f"gap between windows {k} and {k + 1}")
        if gap < -TIME_TOL:
            raise ValidationError(f"windows {k} and {k + 1} overlap")
    if abs(windows[-1][1] - duration) > TIME_TOL:
        raise ValidationError(f"windows end at {windows[-1][1]}, storyline lasts {duration}")


def decompose(storyline: Storyline, clip_windows) -> list:
    """One LocalPlan per window; boundary-spanning entries appear in both plans, clipped."""
    windows = [(float(a), float(b)) for a, b in clip_windows]
    check_windows(windows, storyline.duration_s)
    plans = []
    for k, (lo, hi) in enumerate(windows):
        emotions = _restrict(storyline.emotion_track, lo, hi)
        actions = _restrict(storyline.actions, lo, hi)
        camera = _restrict(storyline.camera_plan, lo, hi)
        dom_e, dom_c = _dominant(emotions), _dominant(camera)
        tags = tuple(dict.fromkeys(s.tag for s in actions))
        header = f"[clip {k}] [window] {_fmt_time(lo)}-{_fmt_time(hi)}s"
        plans.append(LocalPlan(
            clip_index=k,
            window=(lo, hi),
            emotion=dom_e.emotion,
            intensity=dom_e.intensity,
            actions=tags,
            camera_op=dom_c.tag,
            local_prompt=render_prompt(
                storyline.character_features, storyline.background_layout,
                storyline.visual_style, emotions, actions, camera, header=header),
            action_spans=tuple(actions),
            camera_spans=tuple(camera),
            emotion_spans=tuple(emotions),
        ))
    return plans


# --------------------------------------------------------------------------
# Backends

STORYLINE_TEMPLATE = {
    "slots": ["character_features", "background_layout", "visual_style",
              "emotion_track", "actions", "camera_plan"],
    "emotions": list(EMOTIONS),
    "intensities": list(INTENSITIES),
    "camera_ops": list(CAMERA_OPS),
    "timeline_entry": {"start_s": "number", "end_s": "number"},
    "priority": ["user_prompt", "audio_caption", "image_caption"],
}


@dataclass(frozen=True)
class DirectorRequest:
    prompt: str = ""
    audio_caption: Optional[AudioCaption] = None
    image_caption: Optional[ImageCaption] = None
    duration_s: float = 0.0
    template: dict = field(default_factory=lambda: STORYLINE_TEMPLATE)

    def to_dict(self) -> dict:
        return {
            "prompt": self.prompt,
            "audio_caption": asdict(self.audio_caption) if self.audio_caption else None,
            "image_caption": asdict(self.image_caption) if self.image_caption else None,
            "duration_s": self.duration_s,
            "template": self.template,
        }


class DirectorBackend(Protocol):
    def compose(self, request: DirectorRequest) -> Storyline: ...


class RuleDirector:
    """Reference backend: exactly :func:`compose_storyline`."""

    def compose(self, request: DirectorRequest) -> Storyline:
        return compose_storyline(
            parse_prompt(request.prompt), request.audio_caption, request.image_caption, request.duration_s
        )


class ExternalDirector:
    """Client for an external MLLM director speaking JSON over one POST endpoint.

    Request body is :meth:`DirectorRequest.to_dict`; the response body must be
    a storyline object (``Storyline.to_dict`` layout). Stateless, so safe to
    share across threads.
    """

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def compose(self, request: DirectorRequest) -> Storyline:
        body = json.dumps(request.to_dict()).encode()
        req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = resp.read()
        except urllib.error.URLError as exc:
            raise OSError(f"director endpoint {self.url} unreachable: {exc}") from exc
        try:
            data = json.loads(payload)
        except json.JSONDecodeError as exc:
            raise StorylineValidationError(f"director response is not JSON: {exc}") from exc
        return storyline_from_dict(data)


def make_director(spec: str):
    """``rules`` or ``external:<url>``."""
    if spec in ("rules", "", None):
        return RuleDirector()
    if spec.startswith("external:"):
        return ExternalDirector(spec[len("external:"):])
    raise ValidationError(f"unknown director {spec!r}; use 'rules' or 'external:<url>'")
