"""Embedding sets: the binary interchange format shared with the acoustic
extractor, plus synthetic generators (Gaussian blob clouds and two-speaker
conversations) that make the test suite self-contained.

File layout, little-endian throughout: magic "SDEB", version byte 0x01,
flags byte (bit0 = timings present), u32 dim, u64 n, two length-prefixed
UTF-8 strings (u16 length; recording id then source tag), n*dim float32
vectors row-major, then, when flagged, n (start, end) float64 pairs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .metrics import ReferenceAnnotation, Turn
from .pipeline import segment_spans

SDEB_MAGIC = b"SDEB"
SDEB_VERSION = 1

WHISPER_EMBEDDING_DIMS = {
    "tiny": 384,
    "base": 512,
    "small": 768,
    "medium": 1024,
    "large": 1280,
}


class SdebError(ValueError):
    """Base for embedding-file format errors."""


class BadMagicError(SdebError):
    pass


class UnknownVersionError(SdebError):
    pass


class TruncatedPayloadError(SdebError):
    pass


class EmbeddingSet:
    """n fixed-width vectors, optionally with per-segment timings.

    Vectors are float32 (the storage precision, so file roundtrips are
    bit-exact); timings are float64 (start_s, end_s) rows that must be
    sorted and non-overlapping. A source tag of the form ``whisper-<v>``
    pins the expected dimension for that model version.
    """

    def __init__(self, vectors, timings=None, recording_id: str = "rec",
                 source_tag: str = "synthetic"):
        self.vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {self.vectors.shape}")
        self.recording_id = recording_id
        self.source_tag = source_tag
        if timings is None:
            self.timings = None
        else:
            t = np.ascontiguousarray(timings, dtype=np.float64)
            if t.shape != (self.n, 2):
                raise ValueError(f"timings must be ({self.n}, 2), got {t.shape}")
            if np.any(t[:, 1] <= t[:, 0]):
                raise ValueError("every timing must satisfy start < end")
            if np.any(t[1:, 0] < t[:-1, 1] - 1e-9):
                raise ValueError("timings must be sorted and non-overlapping")
            self.timings = t
        if source_tag.startswith("whisper-"):
            version = source_tag[len("whisper-"):]
            expected = WHISPER_EMBEDDING_DIMS.get(version)
            if expected is None:
                raise ValueError(f"unknown whisper version {version!r}; "
                                 f"known: {sorted(WHISPER_EMBEDDING_DIMS)}")
            if self.dim != expected:
                raise ValueError(f"whisper-{version} embeddings are {expected}-dim, "
                                 f"got {self.dim}")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _write_string(fh, text: str) -> None:
    encoded = text.encode("utf-8")
    if len(encoded) > 0xFFFF:
        raise ValueError("string field longer than 65535 bytes")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)


def write_embeddings(es: EmbeddingSet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(SDEB_MAGIC)
        flags = 1 if es.timings is not None else 0
        fh.write(struct.pack("<BB", SDEB_VERSION, flags))
        fh.write(struct.pack("<IQ", es.dim, es.n))
        _write_string(fh, es.recording_id)
        _write_string(fh, es.source_tag)
        fh.write(np.ascontiguousarray(es.vectors, dtype="<f4").tobytes())
        if es.timings is not None:
            fh.write(np.ascontiguousarray(es.timings, dtype="<f8").tobytes())


class _Cursor:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.off = 0

    def take(self, count: int) -> bytes:
        if self.off + count > len(self.raw):
            raise TruncatedPayloadError(
                f"needed {count} bytes at offset {self.off}, "
                f"file has {len(self.raw)}")
        piece = self.raw[self.off:self.off + count]
        self.off += count
        return piece

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_embeddings(path) -> EmbeddingSet:
    with open(path, "rb") as fh:
        raw = fh.read()
    cur = _Cursor(raw)
    magic = cur.take(4)
    if magic != SDEB_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {SDEB_MAGIC!r}")
    version, flags = cur.unpack("<BB")
    if version != SDEB_VERSION:
        raise UnknownVersionError(f"unknown format version {version}")
    dim, n = cur.unpack("<IQ")
    (rec_len,) = cur.unpack("<H")
    recording_id = cur.take(rec_len).decode("utf-8")
    (tag_len,) = cur.unpack("<H")
    source_tag = cur.take(tag_len).decode("utf-8")
    vec_bytes = cur.take(4 * dim * n)
    vectors = np.frombuffer(vec_bytes, dtype="<f4").reshape(n, dim).copy()
    timings = None
    if flags & 1:
        t_bytes = cur.take(16 * n)
        timings = np.frombuffer(t_bytes, dtype="<f8").reshape(n, 2).copy()
    if cur.off != len(raw):
        raise TruncatedPayloadError(
            f"{len(raw) - cur.off} unexpected trailing bytes")
    return EmbeddingSet(vectors, timings=timings, recording_id=recording_id,
                        source_tag=source_tag)


# -- synthetic generators ----------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Isotropic Gaussian blob cloud: k clusters with unit within-cluster
    std, centroids pairwise exactly ``separation`` apart (vertices of a
    randomly oriented regular simplex)."""

    k: int
    dim: int
    points_per_cluster: int
    separation: float = 6.0
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.dim < 1 or self.points_per_cluster < 1:
            raise ValueError("k, dim, points_per_cluster must all be >= 1")
        if self.separation < 0:
            raise ValueError(f"separation must be >= 0, got {self.separation}")
        if self.separation > 0 and self.dim < self.k:
            raise ValueError(f"separated centroids need dim >= k "
                             f"(got dim={self.dim}, k={self.k})")


def _simplex_centroids(rng: np.random.Generator, k: int, dim: int,
                       separation: float) -> np.ndarray:
    if separation == 0:
        return np.zeros((k, dim))
    q, _ = np.linalg.qr(rng.standard_normal((dim, k)))
    return (separation / np.sqrt(2.0)) * q.T


def synth_embeddings(spec: SynthSpec):
    """Generate the blob cloud. Returns (EmbeddingSet, true_labels)."""
    base = np.random.SeedSequence(spec.seed)
    cent_rng, noise_rng = (np.random.default_rng(s) for s in base.spawn(2))
    centroids = _simplex_centroids(cent_rng, spec.k, spec.dim, spec.separation)
    labels = np.repeat(np.arange(spec.k), spec.points_per_cluster)
    points = centroids[labels] + noise_rng.standard_normal((labels.size, spec.dim))
    es = EmbeddingSet(points.astype(np.float32),
                      recording_id=f"synth-k{spec.k}-seed{spec.seed}",
                      source_tag="synthetic")
    return es, labels.astype(np.int64)


@dataclass(frozen=True)
class ConversationSpec:
    """Alternating-speaker conversation with exponential turn lengths and
    optional silence gaps between turns."""

    k: int = 2
    dim: int = 32
    separation: float = 6.0
    duration_s: float = 60.0
    mean_turn_s: float = 2.0
    min_turn_s: float = 0.25
    silence_prob: float = 0.0
    mean_silence_s: float = 0.5
    window_s: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"a conversation needs k >= 2 speakers, got {self.k}")
        if self.duration_s <= 0 or self.mean_turn_s <= 0 or self.window_s <= 0:
            raise ValueError("duration, mean turn length, and window must be positive")
        if not (0 <= self.silence_prob <= 1):
            raise ValueError(f"silence_prob must be in [0, 1], got {self.silence_prob}")


@dataclass
class Conversation:
    embeddings: EmbeddingSet
    reference: ReferenceAnnotation
    window_labels: np.ndarray = field(repr=False)
    turns: list = field(repr=False, default_factory=list)


def sample_turns(spec: ConversationSpec) -> list[tuple[float, float, int]]:
    """Draw the speaker turn timeline: speakers rotate, lengths are
    exponential with the configured mean (floored), and a silence gap may
    follow each turn."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(1)[0])
    turns = []
    t = 0.0
    speaker = 0
    while t < spec.duration_s - 1e-9:
        length = max(spec.min_turn_s, float(rng.exponential(spec.mean_turn_s)))
        end = min(t + length, spec.duration_s)
        if end - t >= 0.05:
            turns.append((t, end, speaker))
        t = end
        if spec.silence_prob > 0 and rng.random() < spec.silence_prob:
            t = min(t + max(0.05, float(rng.exponential(spec.mean_silence_s))),
                    spec.duration_s)
        speaker = (speaker + 1) % spec.k
    return turns


def annotation_from_turns(turns, recording_id: str = "synthconv") -> ReferenceAnnotation:
    return ReferenceAnnotation(
        [Turn(a, b, f"ref{s}") for a, b, s in turns], recording_id=recording_id)


def conversation_from_turns(turns, dim: int, separation: float, window_s: float,
                            seed: int = 0, k: int | None = None,
                            recording_id: str = "synthconv") -> tuple[EmbeddingSet, np.ndarray]:
    """Emit one embedding per speech window of a given turn timeline.

    Windows tile [0, last turn end] exactly like the audio pipeline's
    segmentation. A window is emitted iff speech covers at least half of it;
    its embedding is drawn from the Gaussian of the speaker holding the
    majority of its speech (ties to the lower speaker index). Returns the
    embedding set plus the emitting speaker per window.
    """
    turns = [(float(a), float(b), int(s)) for a, b, s in turns]
    if not turns:
        raise ValueError("cannot build a conversation from zero turns")
    if k is None:
        k = max(s for _, _, s in turns) + 1
    total = max(b for _, b, _ in turns)
    rate = 16000
    base = np.random.SeedSequence(seed)
    cent_rng, noise_rng = (np.random.default_rng(s) for s in base.spawn(2))
    centroids = _simplex_centroids(cent_rng, k, dim, separation)

    spans = segment_spans(int(round(total * rate)), rate, window_s)
    vectors = []
    timings = []
    labels = []
    for a_smp, b_smp in spans:
        a, b = a_smp / rate, b_smp / rate
        overlap = np.zeros(k)
        for ts, te, s in turns:
            overlap[s] += max(0.0, min(b, te) - max(a, ts))
        if overlap.sum() < 0.5 * (b - a):
            continue
        lab = int(np.argmax(overlap))
        vectors.append(centroids[lab] + noise_rng.standard_normal(dim))
        timings.append((a, b))
        labels.append(lab)
    if not vectors:
        raise ValueError("no window had majority speech; nothing to emit")
    es = EmbeddingSet(np.asarray(vectors, dtype=np.float32),
                      timings=np.asarray(timings, dtype=np.float64),
                      recording_id=recording_id, source_tag="synthetic")
    return es, np.asarray(labels, dtype=np.int64)


def synth_conversation(spec: ConversationSpec) -> Conversation:
    """Full synthetic conversation: turn timeline, reference annotation, and
    one embedding per majority-speech window."""
    turns = sample_turns(spec)
    rec = f"synthconv-seed{spec.seed}"
    es, labels = conversation_from_turns(
        turns, dim=spec.dim, separation=spec.separation, window_s=spec.window_s,
        seed=spec.seed, k=spec.k, recording_id=rec)
    return Conversation(embeddings=es, reference=annotation_from_turns(turns, rec),
                        window_labels=labels, turns=turns)
