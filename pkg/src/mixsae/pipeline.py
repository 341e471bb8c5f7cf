"""Diarization front-end and back-end: WAV ingestion at 16 kHz, fixed-window
segmentation, energy-based voice activity detection, clustering dispatch,
and assembly of per-segment labels into timed speaker turns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.io.wavfile

from .cluster import AhcConfig, ahc_fit, kmeans_fit
from .metrics import ReferenceAnnotation, Turn, write_rttm
from .mix import MixSae

TARGET_SAMPLE_RATE = 16000


@dataclass
class AudioBuffer:
    """Mono audio in [-1, 1] at the pipeline rate."""

    samples: np.ndarray
    sample_rate: int = TARGET_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return self.samples.shape[0] / self.sample_rate


def load_wav(path) -> AudioBuffer:
    """Read a PCM WAV file: integer samples are scaled to [-1, 1], multiple
    channels are averaged down to one, and anything not at 16 kHz is
    resampled there by linear interpolation."""
    rate, data = scipy.io.wavfile.read(path)
    if data.ndim == 2:
        data = data.mean(axis=1)
    data = np.asarray(data)
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:
        samples = data / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        samples = data.astype(np.float64)
    if rate != TARGET_SAMPLE_RATE:
        n_out = int(round(len(samples) * TARGET_SAMPLE_RATE / rate))
        t_in = np.arange(len(samples)) / rate
        t_out = np.arange(n_out) / TARGET_SAMPLE_RATE
        samples = np.interp(t_out, t_in, samples)
    return AudioBuffer(samples, TARGET_SAMPLE_RATE)


@dataclass(frozen=True)
class SegmentSpec:
    start_s: float
    end_s: float
    start_sample: int
    end_sample: int

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s


def segment_spans(n_samples: int, sample_rate: int, window_s: float) -> list[tuple[int, int]]:
    """Tile [0, n_samples) with windows of window_s seconds. A final window
    shorter than half the nominal size is merged into the previous one, so
    every sample lands in exactly one window."""
    if window_s <= 0:
        raise ValueError(f"window must be positive, got {window_s}")
    if n_samples <= 0:
        raise ValueError("empty audio cannot be segmented")
    w = int(round(window_s * sample_rate))
    w = max(w, 1)
    spans = []
    start = 0
    while start < n_samples:
        spans.append((start, min(start + w, n_samples)))
        start += w
    if len(spans) >= 2 and (spans[-1][1] - spans[-1][0]) < 0.5 * w:
        last = spans.pop()
        prev = spans.pop()
        spans.append((prev[0], last[1]))
    return spans


def segment_audio(audio: AudioBuffer, window_s: float) -> list[SegmentSpec]:
    spans = segment_spans(audio.samples.shape[0], audio.sample_rate, window_s)
    rate = audio.sample_rate
    return [SegmentSpec(a / rate, b / rate, a, b) for a, b in spans]


@dataclass(frozen=True)
class VadConfig:
    """Energy detector settings: 25 ms frames on a 10 ms hop; the threshold
    is the larger of an absolute floor and a fraction of the recording's
    95th-percentile frame RMS."""

    frame_s: float = 0.025
    hop_s: float = 0.010
    abs_floor: float = 1e-4
    rel_frac: float = 0.1
    min_speech_fraction: float = 0.5


def frame_rms(samples: np.ndarray, sample_rate: int, config: VadConfig) -> np.ndarray:
    """RMS of every frame; a tail shorter than one frame becomes its own
    frame so no audio is ignored."""
    frame = max(int(round(config.frame_s * sample_rate)), 1)
    hop = max(int(round(config.hop_s * sample_rate)), 1)
    n = samples.shape[0]
    if n == 0:
        return np.zeros(0)
    if n <= frame:
        return np.array([math.sqrt(float(np.mean(samples * samples)))])
    starts = list(range(0, n - frame + 1, hop))
    if starts[-1] + frame < n:
        starts.append(n - frame)
    out = np.empty(len(starts))
    for i, s in enumerate(starts):
        piece = samples[s:s + frame]
        out[i] = math.sqrt(float(np.mean(piece * piece)))
    return out


def vad_threshold(audio: AudioBuffer, config: VadConfig | None = None) -> float:
    """Recording-level energy threshold: max(abs_floor, rel_frac x p95 of
    frame RMS). Depends only on this recording's own statistics."""
    config = config or VadConfig()
    rms = frame_rms(audio.samples, audio.sample_rate, config)
    p95 = float(np.percentile(rms, 95)) if rms.size else 0.0
    return max(config.abs_floor, config.rel_frac * p95)


def energy_vad(audio: AudioBuffer, segment: SegmentSpec,
               config: VadConfig | None = None,
               threshold: float | None = None) -> bool:
    """Speech iff at least half the segment's frames exceed the recording
    threshold."""
    config = config or VadConfig()
    if segment.start_sample < 0 or segment.end_sample > audio.samples.shape[0]:
        raise ValueError("segment lies outside the audio")
    if threshold is None:
        threshold = vad_threshold(audio, config)
    rms = frame_rms(audio.samples[segment.start_sample:segment.end_sample],
                    audio.sample_rate, config)
    if rms.size == 0:
        return False
    return float(np.mean(rms > threshold)) >= config.min_speech_fraction


def speech_segments(audio: AudioBuffer, window_s: float,
                    config: VadConfig | None = None):
    """Segment the recording and keep only the windows the detector calls
    speech. Returns (kept_segments, mask_over_all_segments)."""
    config = config or VadConfig()
    segments = segment_audio(audio, window_s)
    threshold = vad_threshold(audio, config)
    mask = np.array([energy_vad(audio, seg, config, threshold) for seg in segments])
    return [s for s, keep in zip(segments, mask) if keep], mask


@dataclass
class DiarizationResult:
    """Hypothesis speaker turns: (start_s, end_s, speaker_id) sorted by
    start, with zero-gap same-speaker neighbors already merged."""

    turns: list[tuple[float, float, int]]
    recording_id: str = "rec"

    def speaker_ids(self) -> list[int]:
        return sorted({t[2] for t in self.turns})

    def to_annotation(self) -> ReferenceAnnotation:
        return ReferenceAnnotation(
            [Turn(a, b, f"spk{s}") for a, b, s in self.turns],
            recording_id=self.recording_id)

    def write_rttm(self, path) -> None:
        write_rttm(self.to_annotation(), path)


def relabel_by_first_appearance(labels: np.ndarray) -> np.ndarray:
    """Canonical speaker ids: 0 for whoever speaks first, 1 for the next new
    voice, and so on. Idempotent."""
    labels = np.asarray(labels, dtype=np.int64)
    mapping: dict[int, int] = {}
    out = np.empty_like(labels)
    for i, lab in enumerate(labels):
        if int(lab) not in mapping:
            mapping[int(lab)] = len(mapping)
        out[i] = mapping[int(lab)]
    return out


def assemble_diarization(timings, labels, recording_id: str = "rec",
                         gap_eps: float = 1e-9) -> DiarizationResult:
    """Turn per-segment labels into speaker turns: relabel canonically, then
    merge a segment into the previous turn when the speaker matches and the
    segments touch (gaps survive as separate turns)."""
    starts_ends = [(float(a), float(b)) for a, b in timings]
    labels = np.asarray(labels, dtype=np.int64)
    if len(starts_ends) != labels.shape[0]:
        raise ValueError(f"{len(starts_ends)} segments vs {labels.shape[0]} labels")
    order = np.argsort([a for a, _ in starts_ends], kind="stable")
    starts_ends = [starts_ends[i] for i in order]
    labels = relabel_by_first_appearance(labels[order])

    turns: list[tuple[float, float, int]] = []
    for (a, b), lab in zip(starts_ends, labels):
        if turns and turns[-1][2] == int(lab) and abs(a - turns[-1][1]) <= gap_eps:
            turns[-1] = (turns[-1][0], b, int(lab))
        else:
            turns.append((a, b, int(lab)))
    return DiarizationResult(turns, recording_id=recording_id)


def run_pipeline(embeddings, k: int, method: str = "mixsae", seed: int = 0,
                 mix_overrides: dict | None = None) -> DiarizationResult:
    """Cluster timed embeddings and assemble speaker turns.

    ``embeddings`` needs ``vectors``, ``timings``, and ``recording_id``;
    method is one of mixsae, kmeans, ahc. With the same seed and inputs the
    result is bit-identical across runs.
    """
    timings = getattr(embeddings, "timings", None)
    if timings is None:
        raise ValueError("embeddings carry no segment timings; cannot diarize")
    vectors = np.asarray(embeddings.vectors)
    if vectors.shape[0] != len(timings):
        raise ValueError("timing count does not match embedding count")
    if method == "mixsae":
        if k < 2:
            raise ValueError(f"mixsae needs k >= 2, got k={k}")
        overrides = dict(mix_overrides or {})
        mix = MixSae(input_dim=vectors.shape[1], k=k, seed=seed, **overrides)
        labels = mix.fit(vectors)
    elif method == "kmeans":
        _, labels = kmeans_fit(vectors.astype(np.float64), k, seed=seed)
    elif method == "ahc":
        labels = ahc_fit(vectors.astype(np.float64), AhcConfig(target_clusters=k))
    else:
        raise ValueError(f"unknown method {method!r} (use mixsae, kmeans, or ahc)")
    rec = getattr(embeddings, "recording_id", "rec")
    return assemble_diarization(timings, labels, recording_id=rec)
