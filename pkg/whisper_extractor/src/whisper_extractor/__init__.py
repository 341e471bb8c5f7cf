"""Whisper-encoder speaker embedding extraction, written to SDEB files."""

from .audio import (
    AudioBuffer,
    SegmentSpec,
    VadConfig,
    energy_vad,
    frame_rms,
    load_wav,
    segment_audio,
    segment_spans,
    speech_segments,
    vad_threshold,
)
from .extractor import (
    CHUNK_SECONDS,
    EMBEDDING_DIMS,
    ExtractorConfig,
    ExtractResult,
    WhisperEmbedder,
    extract,
)
from .sdeb import SDEB_MAGIC, SDEB_VERSION, write_sdeb

__all__ = [
    "AudioBuffer",
    "CHUNK_SECONDS",
    "EMBEDDING_DIMS",
    "ExtractResult",
    "ExtractorConfig",
    "SDEB_MAGIC",
    "SDEB_VERSION",
    "SegmentSpec",
    "VadConfig",
    "WhisperEmbedder",
    "energy_vad",
    "extract",
    "frame_rms",
    "load_wav",
    "segment_audio",
    "segment_spans",
    "speech_segments",
    "vad_threshold",
    "write_sdeb",
]
