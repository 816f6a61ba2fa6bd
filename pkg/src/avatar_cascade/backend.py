"""Generation backends.

``GenerationBackend`` is the contract a real video model would implement:
blueprint generation, first-last-frame sub-clip generation and
audio-conditioned transition frames. ``ProceduralBackend`` is the shipped
reference implementation: a flat-shaded parametric avatar whose mouth height
follows the audio envelope.

Rendered geometry is quantized to whole pixels, so every parameter can be
read back from a rendered frame exactly (``recover_params``). Sub-clips use
this to blend between the avatar states shown in their anchor frames.

Expression table (emotion -> brow raise, mouth-corner curve)::

    calm        0.3   0
    excitement  0.8  +1
    confusion   0.6   0
    sadness     0.2  -1
    surprise    1.0   0
    anger       0.0  -1

Intensity ``low`` pulls the brow halfway back to neutral (0.3); ``high``
pushes it 50% further from neutral, clamped to [0, 1].
"""

from __future__ import annotations

import base64
import math
import time
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional, Protocol

import numpy as np

from .audio import AudioFeatures
from .conditioning import MouthBox
from .director import LocalPlan, Storyline
from .errors import ValidationError
from .media import Clip, Frame, TimeGrid, exact, frames_for_audio

DEFAULT_BLUEPRINT_FPS = 12
EYE_COLOR = (25, 25, 35)
BROW_COLOR = (55, 35, 25)
DEFAULT_MOUTH_COLOR = (95, 20, 30)
MIN_SIZE = 24
MIN_RADIUS = 8

EXPRESSIONS = {
    "calm": (0.3, 0),
    "excitement": (0.8, 1),
    "confusion": (0.6, 0),
    "sadness": (0.2, -1),
    "surprise": (1.0, 0),
    "anger": (0.0, -1),
}
NEUTRAL_BROW = 0.3


def _luma(rgb) -> float:
    r, g, b = rgb
    return 0.299 * r + 0.587 * g + 0.114 * b


@dataclass(frozen=True)
class AvatarParams:
    face_center: tuple = (0.5, 0.45)
    face_radius: float = 0.3
    skin_color: tuple = (220, 180, 150)
    background_color: tuple = (60, 90, 140)
    mouth_color: tuple = DEFAULT_MOUTH_COLOR
    mouth_aperture: float = 0.0
    head_yaw: float = 0.0
    brow_raise: float = NEUTRAL_BROW
    mouth_curve: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mouth_aperture <= 1.0:
            raise ValidationError(f"mouth_aperture {self.mouth_aperture} outside [0, 1]")
        if not -1.0 <= self.head_yaw <= 1.0:
            raise ValidationError(f"head_yaw {self.head_yaw} outside [-1, 1]")
        if not 0.0 <= self.brow_raise <= 1.0:
            raise ValidationError(f"brow_raise {self.brow_raise} outside [0, 1]")
        if self.mouth_curve not in (-1, 0, 1):
            raise ValidationError(f"mouth_curve must be -1, 0 or 1, got {self.mouth_curve}")


@dataclass(frozen=True)
class Geometry:
    """Pixel-level layout derived from params and frame size."""

    cx: int
    cy: int
    radius: int
    eye_dy: int
    eye_dx: int
    eye_r: int
    brow_max: int
    brow_px: int
    brow_half: int
    mouth_top: int
    mouth_half: int
    mouth_max: int
    mouth_h: int
    curve: int

    @property
    def eye_y(self) -> int:
        return self.cy - self.eye_dy

    @property
    def brow_y(self) -> int:
        return self.eye_y - self.eye_r - 2 - self.brow_px

    def mouth_box(self) -> MouthBox:
        return MouthBox(self.cx - self.mouth_half - 1, self.mouth_top - 1,
                        self.cx + self.mouth_half + 1, self.mouth_top + self.mouth_max + 1, 1.0)


def _layout(radius: int) -> dict:
    return {
        "eye_dy": max(1, round(0.25 * radius)),
        "eye_dx": max(2, round(0.38 * radius)),
        "eye_r": max(1, round(0.12 * radius)),
        "brow_max": max(1, round(0.15 * radius)),
        "brow_half": max(1, round(0.18 * radius)),
        "mouth_dy": max(2, round(0.35 * radius)),
        "mouth_half": max(1, round(0.3 * radius)),
        "mouth_max": max(2, round(0.35 * radius)),
    }


def yaw_pixels(width: int) -> int:
    return max(1, round(0.08 * width))


def geometry(params: AvatarParams, width: int, height: int) -> Geometry:
    if width < MIN_SIZE or height < MIN_SIZE:
        raise ValidationError(f"frames must be at least {MIN_SIZE}x{MIN_SIZE}")
    radius = max(MIN_RADIUS, round(params.face_radius * min(width, height)))
    radius = min(radius, (min(width, height) - 1) // 2)
    cx = round(params.face_center[0] * width) + round(params.head_yaw * yaw_pixels(width))
    cy = round(params.face_center[1] * height)
    cx = min(max(cx, radius), width - 1 - radius)
    cy = min(max(cy, radius), height - 1 - radius)
    lay = _layout(radius)
    return Geometry(
        cx=cx, cy=cy, radius=radius,
        eye_dy=lay["eye_dy"], eye_dx=lay["eye_dx"], eye_r=lay["eye_r"],
        brow_max=lay["brow_max"], brow_px=round(params.brow_raise * lay["brow_max"]),
        brow_half=lay["brow_half"],
        mouth_top=cy + lay["mouth_dy"], mouth_half=lay["mouth_half"], mouth_max=lay["mouth_max"],
        mouth_h=1 + round(params.mouth_aperture * lay["mouth_max"]),
        curve=params.mouth_curve,
    )


@lru_cache(maxsize=16)
def _grid(width: int, height: int):
    yy, xx = np.mgrid[0:height, 0:width]
    yy.setflags(write=False)
    xx.setflags(write=False)
    return yy, xx


def draw_mouth(canvas: np.ndarray, g: Geometry, skin, mouth) -> None:
    """Paint the mouth box with skin, then the mouth bar and its corners."""
    x0, x1 = g.cx - g.mouth_half - 1, g.cx + g.mouth_half + 1
    canvas[g.mouth_top - 1:g.mouth_top + g.mouth_max + 2, x0:x1 + 1] = skin
    canvas[g.mouth_top:g.mouth_top + g.mouth_h, g.cx - g.mouth_half:g.cx + g.mouth_half + 1] = mouth
    if g.curve:
        row = g.mouth_top - g.curve
        canvas[row, x0] = mouth
        canvas[row, x1] = mouth


def render(params: AvatarParams, width: int, height: int) -> Frame:
    g = geometry(params, width, height)
    yy, xx = _grid(width, height)
    canvas = np.empty((height, width, 3), dtype=np.uint8)
    canvas[:] = params.background_color
    canvas[(xx - g.cx) ** 2 + (yy - g.cy) ** 2 <= g.radius ** 2] = params.skin_color
    for side in (-1, 1):
        ex = g.cx + side * g.eye_dx
        canvas[(xx - ex) ** 2 + (yy - g.eye_y) ** 2 <= g.eye_r ** 2] = EYE_COLOR
        canvas[g.brow_y, ex - g.brow_half:ex + g.brow_half + 1] = BROW_COLOR
    draw_mouth(canvas, g, params.skin_color, params.mouth_color)
    return Frame(canvas)


def recover_params(frame: Frame) -> Optional[AvatarParams]:
    """Read avatar parameters back from a procedurally rendered frame.

    Returns ``None`` when the frame does not look like a render (no face
    blob, face touching the border, features missing). Head yaw is folded
    into ``face_center``, so ``render(recover_params(f))`` reproduces ``f``
    rather than the original parameter values.
    """
    px = frame.pixels
    h, w = px.shape[:2]
    if w < MIN_SIZE or h < MIN_SIZE:
        return None
    bg = px[0, 0]
    if not (np.array_equal(px[0, -1], bg) and np.array_equal(px[-1, 0], bg) and np.array_equal(px[-1, -1], bg)):
        return None
    mask = np.any(px != bg, axis=2)
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        return None
    x0, x1, y0, y1 = xs.min(), xs.max(), ys.min(), ys.max()
    if (x1 - x0) != (y1 - y0) or (x1 - x0) % 2:
        return None
    radius = int((x1 - x0) // 2)
    cx, cy = int(x0 + radius), int(y0 + radius)
    if radius < MIN_RADIUS:
        return None
    skin = px[cy, cx]
    lay = _layout(radius)

    mouth_top = cy + lay["mouth_dy"]
    mouth = px[mouth_top, cx]
    if np.array_equal(mouth, skin):
        return None
    mouth_h = 0
    while mouth_top + mouth_h < h and np.array_equal(px[mouth_top + mouth_h, cx], mouth):
        mouth_h += 1
    aperture = (mouth_h - 1) / lay["mouth_max"]
    if not 0.0 <= aperture <= 1.0:
        return None

    corner_x = cx + lay["mouth_half"] + 1
    curve = 0
    if np.array_equal(px[mouth_top - 1, corner_x], mouth):
        curve = 1
    elif np.array_equal(px[mouth_top + 1, corner_x], mouth):
        curve = -1

    eye_x, eye_y = cx + lay["eye_dx"], cy - lay["eye_dy"]
    brow_px = None
    for b in range(lay["brow_max"] + 1):
        y = eye_y - lay["eye_r"] - 2 - b
        if 0 <= y < h and np.array_equal(px[y, eye_x], BROW_COLOR):
            brow_px = b
            break
    if brow_px is None:
        return None

    return AvatarParams(
        face_center=(cx / w, cy / h),
        face_radius=radius / min(w, h),
        skin_color=tuple(int(c) for c in skin),
        background_color=tuple(int(c) for c in bg),
        mouth_color=tuple(int(c) for c in mouth),
        mouth_aperture=aperture,
        head_yaw=0.0,
        brow_raise=brow_px / lay["brow_max"],
        mouth_curve=curve,
    )


def mouth_box_for(frame: Frame) -> MouthBox:
    p = recover_params(frame)
    if p is None:
        return MouthBox(0, 0, 0, 0, 0.0)
    return geometry(p, frame.width, frame.height).mouth_box()


def derive_base_params(reference: Frame) -> AvatarParams:
    """Colours from the reference: mean central-disk colour for skin, mean border colour for background."""
    px = reference.pixels.astype(np.float64)
    h, w = px.shape[:2]
    yy, xx = _grid(w, h)
    r = 0.3 * min(w, h)
    disk = (xx - w / 2) ** 2 + (yy - 0.45 * h) ** 2 <= r * r
    skin = px[disk].mean(axis=0) if disk.any() else px.reshape(-1, 3).mean(axis=0)
    border = np.concatenate([px[0], px[-1], px[:, 0], px[:, -1]])
    bg = border.mean(axis=0)

    skin = np.rint(skin)
    while _luma(skin) < 120:
        skin = np.rint(skin + (255 - skin) * 0.5)
    bg = np.rint(bg)
    if np.max(np.abs(skin - bg)) < 40:
        bg = np.rint(255 - skin) if _luma(skin) < 128 else np.rint(skin * 0.35)
    skin_t = tuple(int(c) for c in skin)
    bg_t = tuple(int(c) for c in bg)
    if bg_t in (EYE_COLOR, BROW_COLOR, DEFAULT_MOUTH_COLOR):
        bg_t = (bg_t[0], bg_t[1], (bg_t[2] + 60) % 256)
    return AvatarParams(skin_color=skin_t, background_color=bg_t)


def expression(emotion: str, intensity: str) -> tuple:
    brow, curve = EXPRESSIONS.get(emotion, EXPRESSIONS["calm"])
    if intensity == "low":
        brow = NEUTRAL_BROW + 0.5 * (brow - NEUTRAL_BROW)
    elif intensity == "high":
        brow = NEUTRAL_BROW + 1.5 * (brow - NEUTRAL_BROW)
    return min(max(brow, 0.0), 1.0), curve


def mouth_response(envelope: float, boost: float = 1.0) -> float:
    """Mouth aperture for an envelope value; ``boost`` scales the response."""
    return min(1.0, max(0.0, boost * envelope))


# --------------------------------------------------------------------------
# Requests and the backend contract


@dataclass(frozen=True)
class GenerationRequest:
    """One backend call.

    Blueprint mode leaves ``first_frame``/``last_frame`` unset. Sub-clip mode
    sets both, plus the output-frame window ``[start_frame, start_frame + num_frames)``.
    When ``num_frames`` is ``None`` it is ``frames_for_audio`` of the audio slice.
    """

    reference: Frame
    audio: AudioFeatures
    grid: TimeGrid = TimeGrid()
    storyline: Optional[Storyline] = None
    plan: Optional[LocalPlan] = None
    first_frame: Optional[Frame] = None
    last_frame: Optional[Frame] = None
    start_frame: int = 0
    num_frames: Optional[int] = None
    blueprint_fps: int = DEFAULT_BLUEPRINT_FPS
    boost: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if (self.first_frame is None) != (self.last_frame is None):
            raise ValidationError("sub-clip mode needs both first_frame and last_frame")

    @property
    def is_subclip(self) -> bool:
        return self.first_frame is not None

    def frame_count(self) -> int:
        if self.num_frames is not None:
            return self.num_frames
        return frames_for_audio(exact(len(self.audio)) / exact(self.audio.token_rate), self.grid.fps)

    def to_dict(self) -> dict:
        """JSON-ready form for out-of-process backends (frames as base64 raw RGB)."""
        def enc(f):
            if f is None:
                return None
            return {"width": f.width, "height": f.height,
                    "rgb_base64": base64.b64encode(f.pixels.tobytes()).decode()}
        return {
            "reference": enc(self.reference),
            "audio": self.audio.to_dict(),
            "grid": {"fps": float(exact(self.grid.fps)), "token_rate": float(exact(self.grid.token_rate))},
            "storyline": self.storyline.to_dict() if self.storyline else None,
            "plan": self.plan.to_dict() if self.plan else None,
            "first_frame": enc(self.first_frame),
            "last_frame": enc(self.last_frame),
            "start_frame": self.start_frame,
            "num_frames": self.num_frames,
            "blueprint_fps": self.blueprint_fps,
            "boost": self.boost,
            "seed": self.seed,
        }


class GenerationBackend(Protocol):
    def generate_blueprint(self, request: GenerationRequest) -> Clip: ...

    def generate_subclip(self, request: GenerationRequest) -> Clip: ...

    def interpolate_transition(self, frame_a: Frame, frame_b: Frame, num_frames: int,
                               audio_slice: AudioFeatures, fps=48, start_frame: int = 0,
                               boost: float = 1.0) -> Clip: ...

    def mouth_boxes(self, clip: Clip) -> dict: ...


def _span_at(spans, t: float):
    for s in spans:
        if s.start_s <= t < s.end_s:
            return s
    return spans[-1] if spans else None


class ProceduralBackend:
    """Deterministic parametric avatar renderer. Stateless and thread-safe."""

    name = "procedural"

    # motion amplitudes in yaw units / radius multipliers
    TURN_AMP, TURN_PERIOD = 0.6, 3.0
    SHAKE_AMP, SHAKE_HZ = 0.35, 2.0
    PAN_AMP = 0.8
    ZOOM_IN, ZOOM_OUT = 0.2, 0.15

    def blueprint_params(self, base: AvatarParams, storyline: Storyline, t: float,
                         envelope: float, boost: float, phase: float) -> AvatarParams:
        yaw = 0.0
        radius = base.face_radius
        for act in storyline.actions:
            if act.start_s <= t < act.end_s:
                if act.tag == "turning":
                    yaw += self.TURN_AMP * math.sin(2 * math.pi * t / self.TURN_PERIOD + phase)
                elif act.tag == "head_shaking":
                    yaw += self.SHAKE_AMP * math.sin(2 * math.pi * self.SHAKE_HZ * t + phase)
        cam = _span_at(storyline.camera_plan, t)
        if cam is not None and cam.tag != "static":
            u = math.sin(math.pi * (t - cam.start_s) / cam.length)
            if cam.tag == "pan_left":
                yaw += self.PAN_AMP * u
            elif cam.tag == "pan_right":
                yaw -= self.PAN_AMP * u
            elif cam.tag == "zoom_in":
                radius *= 1 + self.ZOOM_IN * u
            elif cam.tag == "zoom_out":
                radius *= 1 - self.ZOOM_OUT * u
        emo = _span_at(storyline.emotion_track, t)
        brow, curve = expression(emo.emotion, emo.intensity) if emo else expression("calm", "medium")
        return replace(base, face_radius=radius, head_yaw=min(max(yaw, -1.0), 1.0),
                       brow_raise=brow, mouth_curve=curve,
                       mouth_aperture=mouth_response(envelope, boost))

    def generate_blueprint(self, request: GenerationRequest) -> Clip:
        if request.is_subclip:
            raise ValidationError("blueprint request must not set first/last frames")
        if request.storyline is None:
            raise ValidationError("blueprint generation needs a storyline")
        bfps = request.blueprint_fps
        n = frames_for_audio(request.storyline.duration_s, bfps)
        grid = TimeGrid(bfps, request.audio.token_rate)
        base = derive_base_params(request.reference)
        phase = float(np.random.default_rng(request.seed).uniform(0.0, 2 * math.pi))
        w, h = request.reference.width, request.reference.height
        frames = []
        for i in range(n):
            t = (i + 0.5) / bfps
            env = request.audio.envelope_at_token(grid.center_token(i))
            frames.append(render(self.blueprint_params(base, request.storyline, t, env, request.boost, phase), w, h))
        return Clip(tuple(frames), fps=bfps)

    def generate_subclip(self, request: GenerationRequest) -> Clip:
        if not request.is_subclip:
            raise ValidationError("sub-clip request needs first and last frames")
        a, b = request.first_frame, request.last_frame
        if a.shape != b.shape:
            raise ValidationError(f"anchor frames differ in size: {a.shape} vs {b.shape}")
        n = request.frame_count()
        if n < 2:
            raise ValidationError(f"sub-clip needs at least 2 frames, got {n}")
        pa, pb = recover_params(a), recover_params(b)
        if pa is None or pb is None:
            # not procedural anchors: plain audio-conditioned cross-fade
            mid = self.interpolate_transition(a, b, n - 2, request.audio, fps=request.grid.fps, start_frame=request.start_frame + 1,
                                              boost=request.boost)
            return Clip((a,) + mid.frames + (b,), fps=request.grid.fps)

        grid = request.grid
        w, h = a.width, a.height
        ga, gb = geometry(pa, w, h), geometry(pb, w, h)
        actions = request.plan.actions if request.plan is not None else ()
        frames = [a]
        for j in range(1, n - 1):
            u = j / (n - 1)
            t = float((exact(request.start_frame + j) + exact(0.5)) / exact(grid.fps))
            wobble = 0.0
            if "head_shaking" in actions:
                wobble = self.SHAKE_AMP * math.sin(2 * math.pi * self.SHAKE_HZ * t) * math.sin(math.pi * u)
            env = request.audio.envelope_at_token(grid.center_token(request.start_frame + j))
            p = _blend(pa, pb, ga, gb, u, w, h, wobble)
            frames.append(render(replace(p, mouth_aperture=mouth_response(env, request.boost)), w, h))
        frames.append(b)
        return Clip(tuple(frames), fps=grid.fps)

    def interpolate_transition(self, frame_a: Frame, frame_b: Frame, num_frames: int,
                               audio_slice: AudioFeatures, fps=48, start_frame: int = 0,
                               boost: float = 1.0) -> Clip:
        """Cross-fade ``a -> b`` over ``num_frames`` in-between frames with an audio-driven mouth.

        Frame ``j`` uses blend weight ``(j+1)/(num_frames+1)`` and the envelope at
        the token containing the center of global frame ``start_frame + j``.
        """
        if num_frames < 0:
            raise ValidationError(f"num_frames must be >= 0, got {num_frames}")
        if frame_a.shape != frame_b.shape:
            raise ValidationError(f"transition frames differ in size: {frame_a.shape} vs {frame_b.shape}")
        if num_frames == 0:
            return Clip((), fps=fps)
        grid = TimeGrid(fps, audio_slice.token_rate)
        pa, pb = recover_params(frame_a), recover_params(frame_b)
        fa = frame_a.pixels.astype(np.float64)
        fb = frame_b.pixels.astype(np.float64)
        w, h = frame_a.width, frame_a.height
        frames = []
        for j in range(num_frames):
            u = (j + 1) / (num_frames + 1)
            canvas = np.clip(np.rint((1 - u) * fa + u * fb), 0, 255).astype(np.uint8)
            if pa is not None and pb is not None:
                env = audio_slice.envelope_at_token(grid.center_token(start_frame + j))
                ga, gb = geometry(pa, w, h), geometry(pb, w, h)
                p = _blend(pa, pb, ga, gb, u, w, h, 0.0)
                p = replace(p, mouth_aperture=mouth_response(env, boost))
                g = geometry(p, w, h)
                draw_mouth(canvas, g, p.skin_color, p.mouth_color)
            frames.append(Frame(canvas))
        return Clip(tuple(frames), fps=fps)

    def mouth_boxes(self, clip: Clip) -> dict:
        return {i: mouth_box_for(f) for i, f in enumerate(clip.frames)}


def _lerp_int(a: int, b: int, u: float) -> int:
    return int(round(a + (b - a) * u))


def _blend(pa: AvatarParams, pb: AvatarParams, ga: Geometry, gb: Geometry, u: float,
           w: int, h: int, yaw: float) -> AvatarParams:
    """Blend two recovered states at pixel level so the result re-renders on the same lattice."""
    radius = _lerp_int(ga.radius, gb.radius, u)
    cx = _lerp_int(ga.cx, gb.cx, u) + round(yaw * yaw_pixels(w))
    cy = _lerp_int(ga.cy, gb.cy, u)
    brow_a = ga.brow_px / ga.brow_max
    brow_b = gb.brow_px / gb.brow_max
    return AvatarParams(
        face_center=(cx / w, cy / h),
        face_radius=radius / min(w, h),
        skin_color=tuple(_lerp_int(x, y, u) for x, y in zip(pa.skin_color, pb.skin_color)),
        background_color=tuple(_lerp_int(x, y, u) for x, y in zip(pa.background_color, pb.background_color)),
        mouth_color=tuple(_lerp_int(x, y, u) for x, y in zip(pa.mouth_color, pb.mouth_color)),
        mouth_aperture=0.0,
        head_yaw=0.0,
        brow_raise=brow_a + (brow_b - brow_a) * u,
        mouth_curve=pa.mouth_curve if u < 0.5 else pb.mouth_curve,
    )


class SleepBackend:
    """Test backend that injects a fixed delay per sub-clip.

    Without an ``inner`` backend the sub-clip is ``[first] + [first]*(n-2) + [last]``.
    """

    name = "sleep"

    def __init__(self, delay_s: float = 0.1, inner: Optional[GenerationBackend] = None):
        self.delay_s = delay_s
        self.inner = inner

    def generate_blueprint(self, request: GenerationRequest) -> Clip:
        time.sleep(self.delay_s)
        return (self.inner or ProceduralBackend()).generate_blueprint(request)

    def generate_subclip(self, request: GenerationRequest) -> Clip:
        time.sleep(self.delay_s)
        if self.inner is not None:
            return self.inner.generate_subclip(request)
        n = request.frame_count()
        a, b = request.first_frame, request.last_frame
        return Clip((a,) + (a,) * (n - 2) + (b,), fps=request.grid.fps)

    def interpolate_transition(self, *args, **kwargs) -> Clip:
        return (self.inner or ProceduralBackend()).interpolate_transition(*args, **kwargs)

    def mouth_boxes(self, clip: Clip) -> dict:
        return (self.inner or ProceduralBackend()).mouth_boxes(clip)


BACKENDS = {"procedural": ProceduralBackend}


def make_backend(name: str) -> GenerationBackend:
    try:
        return BACKENDS[name]()
    except KeyError:
        raise ValidationError(f"unknown backend {name!r}; available: {', '.join(sorted(BACKENDS))}") from None
