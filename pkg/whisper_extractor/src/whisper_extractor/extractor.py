"""Whisper-encoder speaker embeddings.

One embedding per speech window: the window's samples are zero-padded to the
encoder's 30 s chunk, run through the encoder (no decoder, no transcription),
and the final block's output states are averaged over the time axis. The
average covers only the states that correspond to real audio: the encoder
emits a fixed number of states per second, so a w-second window occupies the
first ceil(w * states_per_second) states and the rest describe padding.
Including the padded tail in the mean washes out speaker identity (the tail
is identical for every window), so it is excluded.

Heavy dependencies (torch, transformers) are imported lazily; config
validation, silence handling, and file writing work without them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, SegmentSpec, VadConfig, load_wav, speech_segments
from .sdeb import write_sdeb

EMBEDDING_DIMS = {
    "tiny": 384,
    "base": 512,
    "small": 768,
    "medium": 1024,
    "large": 1280,
}

# The encoder consumes fixed 30 s chunks; a window (after tail merging) must
# fit in one chunk or audio would be silently truncated.
CHUNK_SECONDS = 30.0


@dataclass(frozen=True)
class ExtractorConfig:
    """Extraction settings: which encoder, the window size, the energy-VAD
    settings (identical defaults to the diarization consumer), and where to
    run the model."""

    model_version: str = "tiny"
    window_s: float = 1.0
    vad: VadConfig = field(default_factory=VadConfig)
    device: str = "cpu"
    batch_size: int = 8

    def __post_init__(self):
        if self.model_version not in EMBEDDING_DIMS:
            raise ValueError(f"unknown model version {self.model_version!r}; "
                             f"known: {sorted(EMBEDDING_DIMS)}")
        if not (0 < self.window_s <= CHUNK_SECONDS):
            raise ValueError(f"window must be in (0, {CHUNK_SECONDS:g}] seconds, "
                             f"got {self.window_s}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")

    @property
    def dim(self) -> int:
        return EMBEDDING_DIMS[self.model_version]

    @property
    def source_tag(self) -> str:
        return f"whisper-{self.model_version}"


def _load_backend():
    import torch
    from transformers import WhisperFeatureExtractor, WhisperModel

    return torch, WhisperFeatureExtractor, WhisperModel


class WhisperEmbedder:
    """Loaded encoder plus feature extractor; reusable across recordings."""

    def __init__(self, config: ExtractorConfig):
        torch, WhisperFeatureExtractor, WhisperModel = _load_backend()
        self._torch = torch
        self.config = config
        name = f"openai/whisper-{config.model_version}"
        self.feature_extractor = WhisperFeatureExtractor.from_pretrained(name)
        self.model = WhisperModel.from_pretrained(name)
        self.model.eval()
        self.model.to(config.device)
        self.encoder = self.model.get_encoder()
        self.sample_rate = int(self.feature_extractor.sampling_rate)

    def _check_dim(self, got: int) -> None:
        expected = self.config.dim
        if got != expected:
            raise RuntimeError(
                f"encoder produced {got}-dim states but "
                f"whisper-{self.config.model_version} embeddings are "
                f"{expected}-dim; refusing to write a mislabeled file")

    def embed_segments(self, audio: AudioBuffer,
                       segments: list[SegmentSpec]) -> np.ndarray:
        """One embedding per segment, batching encoder passes. Returns an
        (n, dim) float32 array in segment order."""
        if audio.sample_rate != self.sample_rate:
            raise ValueError(f"audio must be at {self.sample_rate} Hz, "
                             f"got {audio.sample_rate}")
        for seg in segments:
            if seg.duration > CHUNK_SECONDS + 1e-9:
                raise ValueError(f"segment of {seg.duration:.3f} s exceeds the "
                                 f"{CHUNK_SECONDS:g} s encoder chunk")
        torch = self._torch
        rows: list[np.ndarray] = []
        with torch.no_grad():
            for lo in range(0, len(segments), self.config.batch_size):
                batch = segments[lo:lo + self.config.batch_size]
                waves = [audio.samples[s.start_sample:s.end_sample].astype(np.float32)
                         for s in batch]
                feats = self.feature_extractor(
                    waves, sampling_rate=self.sample_rate,
                    return_tensors="pt").input_features.to(self.config.device)
                states = self.encoder(feats).last_hidden_state
                self._check_dim(int(states.shape[-1]))
                states_per_s = states.shape[1] / CHUNK_SECONDS
                for i, seg in enumerate(batch):
                    n_states = min(states.shape[1],
                                   max(1, math.ceil(seg.duration * states_per_s)))
                    rows.append(states[i, :n_states].mean(dim=0).cpu().numpy())
        if not rows:
            return np.zeros((0, self.config.dim), dtype=np.float32)
        return np.stack(rows).astype(np.float32)


@dataclass
class ExtractResult:
    out_path: Path
    n: int
    dim: int
    n_windows: int
    n_speech_windows: int


def extract(audio_path, out_path, config: ExtractorConfig | None = None,
            recording_id: str | None = None,
            embedder: WhisperEmbedder | None = None) -> ExtractResult:
    """Window the recording, drop non-speech windows, embed the rest, and
    write one SDEB file with per-window timings. A recording with no speech
    windows yields a valid n = 0 file (no model is loaded for it)."""
    config = config or ExtractorConfig()
    audio_path = Path(audio_path)
    out_path = Path(out_path)
    if recording_id is None:
        recording_id = audio_path.stem
    audio = load_wav(audio_path)
    kept, mask = speech_segments(audio, config.window_s, config.vad)
    if kept:
        if embedder is None:
            embedder = WhisperEmbedder(config)
        elif embedder.config.model_version != config.model_version:
            raise ValueError("embedder was built for "
                             f"whisper-{embedder.config.model_version}, "
                             f"config asks for whisper-{config.model_version}")
        vectors = embedder.embed_segments(audio, kept)
    else:
        vectors = np.zeros((0, config.dim), dtype=np.float32)
    timings = np.array([(s.start_s, s.end_s) for s in kept],
                       dtype=np.float64).reshape(len(kept), 2)
    write_sdeb(out_path, vectors, timings=timings,
               recording_id=recording_id, source_tag=config.source_tag)
    return ExtractResult(out_path=out_path, n=len(kept), dim=config.dim,
                         n_windows=int(mask.size),
                         n_speech_windows=int(mask.sum()))
