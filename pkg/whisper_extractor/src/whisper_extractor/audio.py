"""Audio front-end: WAV ingestion at 16 kHz, fixed-window segmentation, and
energy-based voice activity detection.

The timings written next to the embeddings are consumed downstream by the
diarization toolkit, which runs the same windowing and VAD arithmetic on its
side of the file boundary. The two implementations must agree bit for bit,
so every expression here (sample scaling, resampling grid, window rounding,
tail-merge rule, frame RMS, threshold) is kept identical to the consumer's,
on purpose. Do not "simplify" the arithmetic without changing both sides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.io.wavfile

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
