"""Cascaded audio-driven portrait video generation at desk scale."""

from .config import Config
from .errors import AvatarError, MediaIOError, ValidationError
from .media import AudioTrack, Clip, Frame, TimeGrid, frames_for_audio
from .pipeline import generate_video, write_outputs

__all__ = [
    "AudioTrack", "AvatarError", "Clip", "Config", "Frame", "MediaIOError", "TimeGrid",
    "ValidationError", "frames_for_audio", "generate_video", "write_outputs",
]
__version__ = "0.1.0"
