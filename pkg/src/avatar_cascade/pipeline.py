"""End-to-end generation: captions -> storyline -> blueprint -> anchors -> parallel sub-clips -> stitch.

Output directory layout written by :func:`write_outputs`::

    clip.json, frame_000000.ppm ...   final video (loadable with ``load_clip``)
    audio.wav                         the input audio, PCM16 mono at 16 kHz
    keypoints.jsonl                   mouth boxes of the final video
    storyline.json                    director output
    report.json                       deterministic run report (see below)
    timings.json                      wall-clock timings (not deterministic)

``report.json`` keys: ``duration_s``, ``fps``, ``num_frames``, ``num_clips``,
``boundaries_s``, ``blueprint`` (fps, num_frames), ``anchors`` (list of
``AnchorFrame.to_dict``), ``jobs`` (clip_index, window, seed, emotion,
intensity, camera_op, actions), ``junctions`` (output indices of shared
anchor frames), ``config`` (every setting except ``workers``).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .audio import AudioFeatures, caption_audio, extract_features
from .backend import GenerationBackend, GenerationRequest, make_backend
from .cascade import (build_jobs, default_num_clips, plan_segments, run_parallel, select_anchors,
                      stitch)
from .conditioning import save_keypoints
from .config import Config
from .director import DirectorRequest, Storyline, caption_image, make_director
from .errors import MediaIOError
from .media import AudioTrack, Clip, Frame, TimeGrid, save_audio, save_clip


@dataclass
class GenerationResult:
    clip: Clip
    storyline: Storyline
    features: AudioFeatures
    blueprint: Clip
    plan: object
    anchors: list
    jobs: list
    timings: dict = field(default_factory=dict)

    def report(self, config: Config) -> dict:
        cfg = config.to_dict()
        cfg.pop("workers")
        junctions = [a.snapped_output_frame_index for a in self.anchors[1:-1]]
        return {
            "duration_s": self.storyline.duration_s,
            "fps": config.fps,
            "num_frames": len(self.clip),
            "num_clips": len(self.jobs),
            "boundaries_s": list(self.plan.boundaries),
            "blueprint": {"fps": config.blueprint_fps, "num_frames": len(self.blueprint)},
            "anchors": [a.to_dict() for a in self.anchors],
            "jobs": [{
                "clip_index": j.clip_index, "window": list(j.window), "seed": j.seed,
                "emotion": j.local_plan.emotion, "intensity": j.local_plan.intensity,
                "camera_op": j.local_plan.camera_op, "actions": list(j.local_plan.actions),
            } for j in self.jobs],
            "junctions": junctions,
            "config": cfg,
        }


def generate_video(reference: Frame, audio: AudioTrack, prompt: str = "", config: Config = Config(),
                   backend: Optional[GenerationBackend] = None, director=None,
                   blueprint_boxes: Optional[dict] = None) -> GenerationResult:
    """Run the whole cascade on in-memory inputs."""
    t_start = time.perf_counter()
    backend = backend or make_backend(config.backend)
    director = director or make_director(config.director)
    grid = TimeGrid(config.fps, config.token_rate)
    duration = audio.duration

    features = extract_features(audio, config.token_rate)
    request = DirectorRequest(prompt=prompt, audio_caption=caption_audio(features),
                              image_caption=caption_image(reference), duration_s=duration)
    storyline = director.compose(request)

    t0 = time.perf_counter()
    blueprint = backend.generate_blueprint(GenerationRequest(
        reference=reference, audio=features, grid=grid, storyline=storyline,
        blueprint_fps=config.blueprint_fps, boost=config.boost_factor, seed=config.seed))
    t_blueprint = time.perf_counter() - t0

    num_clips = config.num_clips or default_num_clips(duration, config.clip_seconds)
    plan = plan_segments(duration, num_clips)
    boxes = blueprint_boxes if blueprint_boxes is not None else backend.mouth_boxes(blueprint)
    anchors = select_anchors(blueprint, plan, reference, boxes, window_s=config.anchor_window_s,
                             fps=config.fps, weights=config.anchor_weights)
    jobs = build_jobs(anchors, storyline, features, grid, seed=config.seed)

    job_timings = []
    t0 = time.perf_counter()
    clips = run_parallel(jobs, backend, config.workers, reference=reference, grid=grid,
                         boost=config.boost_factor, blueprint_fps=config.blueprint_fps, timings=job_timings)
    t_parallel = time.perf_counter() - t0

    video = stitch(clips, anchors, audio, grid, backend=backend, features=features, boost=config.boost_factor)
    timings = {
        "workers": config.workers,
        "blueprint_s": t_blueprint,
        "parallel_s": t_parallel,
        "total_s": time.perf_counter() - t_start,
        "jobs": [{"clip_index": t.clip_index, "seconds": t.seconds} for t in job_timings],
    }
    return GenerationResult(video, storyline, features, blueprint, plan, anchors, jobs, timings)


def write_outputs(result: GenerationResult, audio: AudioTrack, out_dir, config: Config,
                  backend: Optional[GenerationBackend] = None) -> Path:
    out = Path(out_dir)
    backend = backend or make_backend(config.backend)
    clip = Clip(result.clip.frames, fps=result.clip.fps, audio="audio.wav")
    save_clip(clip, out)
    save_audio(audio, out / "audio.wav")
    try:
        save_keypoints(backend.mouth_boxes(clip), out / "keypoints.jsonl")
        (out / "storyline.json").write_text(result.storyline.to_json() + "\n")
        (out / "report.json").write_text(json.dumps(result.report(config), indent=2, sort_keys=True) + "\n")
        (out / "timings.json").write_text(json.dumps(result.timings, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise MediaIOError(f"cannot write outputs to {out}: {exc}") from exc
    return out
