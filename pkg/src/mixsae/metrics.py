"""Diarization error rate scoring.

The timeline is partitioned at every turn and collar boundary; regions
within +/- collar of any reference turn boundary are excluded from scoring.
Errors decompose into missed speech, false alarm, and speaker confusion,
all in seconds, with the denominator being scored reference speech time.
Hypothesis speakers are mapped to reference speakers by maximizing total
overlap (computed without the collar).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class Turn:
    start: float
    end: float
    speaker: str

    def __post_init__(self):
        if not (self.end > self.start):
            raise ValueError(
                f"turn for {self.speaker!r} must have positive duration, "
                f"got [{self.start}, {self.end}]")

    @property
    def duration(self) -> float:
        return self.end - self.start


class ReferenceAnnotation:
    """Timed speaker turns for one recording.

    Turns of the same speaker may touch but never overlap; overlap between
    different speakers is tolerated but flagged, since scoring it is only
    meaningful when the hypothesis can also emit overlapping speakers.
    """

    def __init__(self, turns, recording_id: str = "rec"):
        self.recording_id = recording_id
        self.turns = sorted(
            (t if isinstance(t, Turn) else Turn(*t) for t in turns),
            key=lambda t: (t.start, t.end, t.speaker))
        self.has_cross_speaker_overlap = False
        last_end: dict[str, float] = {}
        events = sorted((t.start, t.end) for t in self.turns)
        for i in range(1, len(events)):
            if events[i][0] < events[i - 1][1]:
                self.has_cross_speaker_overlap = True
                break
        # after same-speaker overlap is rejected below, any overlap the event
        # sweep saw must have been cross-speaker
        for t in self.turns:
            prev = last_end.get(t.speaker)
            if prev is not None and t.start < prev - 1e-12:
                raise ValueError(
                    f"turns of speaker {t.speaker!r} overlap at {t.start}")
            last_end[t.speaker] = t.end if prev is None else max(t.end, prev)

    def speakers(self) -> list[str]:
        return sorted({t.speaker for t in self.turns})

    @property
    def total_speech(self) -> float:
        return math.fsum(t.duration for t in self.turns)

    def boundaries(self) -> list[float]:
        points = {t.start for t in self.turns} | {t.end for t in self.turns}
        return sorted(points)


@dataclass
class DerReport:
    """Error decomposition in seconds under one collar setting."""

    fa_s: float
    ms_s: float
    ce_s: float
    scored_total_s: float
    collar_s: float
    speaker_map: dict[str, str] = field(default_factory=dict)
    recording_id: str = "rec"

    @property
    def der(self) -> float:
        return (self.fa_s + self.ms_s + self.ce_s) / self.scored_total_s


def _active_speakers(turns: list[Turn], t: float) -> set[str]:
    return {turn.speaker for turn in turns if turn.start <= t < turn.end}


def overlap_matrix(ref: ReferenceAnnotation, hyp) -> tuple[np.ndarray, list[str], list[str]]:
    """Seconds of co-occurrence for every (reference, hypothesis) speaker
    pair, integrated over the full uncollared timeline."""
    hyp_turns = _as_turns(hyp)
    ref_speakers = ref.speakers()
    hyp_speakers = sorted({t.speaker for t in hyp_turns})
    points = sorted({t.start for t in ref.turns} | {t.end for t in ref.turns}
                    | {t.start for t in hyp_turns} | {t.end for t in hyp_turns})
    ref_idx = {s: i for i, s in enumerate(ref_speakers)}
    hyp_idx = {s: i for i, s in enumerate(hyp_speakers)}
    grid = np.zeros((len(ref_speakers), len(hyp_speakers)))
    for a, b in zip(points, points[1:]):
        if b <= a:
            continue
        mid = 0.5 * (a + b)
        active_r = _active_speakers(ref.turns, mid)
        active_h = _active_speakers(hyp_turns, mid)
        for r in active_r:
            for h in active_h:
                grid[ref_idx[r], hyp_idx[h]] += b - a
    return grid, ref_speakers, hyp_speakers


def optimal_speaker_mapping(ref: ReferenceAnnotation, hyp) -> dict[str, str]:
    """One-to-one hypothesis-to-reference relabeling maximizing total
    overlapped duration. Pairs that never co-occur are left unmapped."""
    grid, ref_speakers, hyp_speakers = overlap_matrix(ref, hyp)
    if grid.size == 0:
        return {}
    rows, cols = linear_sum_assignment(grid, maximize=True)
    mapping = {}
    for r, h in zip(rows, cols):
        if grid[r, h] > 0:
            mapping[hyp_speakers[h]] = ref_speakers[r]
    return mapping


def _as_turns(hyp) -> list[Turn]:
    turns = getattr(hyp, "turns", hyp)
    return [t if isinstance(t, Turn) else Turn(*t) for t in turns]


def der(ref: ReferenceAnnotation, hyp, collar_s: float = 0.0,
        strict_no_overlap: bool = False) -> DerReport:
    """Score a hypothesis against a reference.

    Scoring excludes every region within +/- collar_s of any reference turn
    boundary, including the first start and last end. In the scored regions:
    missed speech is reference speaker time the hypothesis leaves uncovered,
    false alarm is hypothesis speaker time with no reference speaker to
    absorb it, and confusion is co-occurring time whose mapped labels
    disagree. The rate divides by scored reference speaker time.
    """
    if not ref.turns:
        raise ValueError("reference annotation has no turns; nothing to score")
    if collar_s < 0:
        raise ValueError(f"collar must be >= 0, got {collar_s}")
    if strict_no_overlap and ref.has_cross_speaker_overlap:
        raise ValueError("reference contains overlapping speakers "
                         "(strict_no_overlap is set)")
    hyp_turns = _as_turns(hyp)
    ref_speakers = ref.speakers()
    hyp_speakers = sorted({t.speaker for t in hyp_turns})
    ref_idx = {s: i for i, s in enumerate(ref_speakers)}
    hyp_idx = {s: i for i, s in enumerate(hyp_speakers)}

    excluded = []
    if collar_s > 0:
        excluded = [(b - collar_s, b + collar_s) for b in ref.boundaries()]

    points = set(ref.boundaries())
    points |= {t.start for t in hyp_turns} | {t.end for t in hyp_turns}
    for a, b in excluded:
        points.add(a)
        points.add(b)
    order = sorted(points)

    ms = fa = total = min_cover = 0.0
    grid = np.zeros((len(ref_speakers), len(hyp_speakers)))
    for a, b in zip(order, order[1:]):
        if b <= a:
            continue
        mid = 0.5 * (a + b)
        if any(lo < mid < hi for lo, hi in excluded):
            continue
        dur = b - a
        active_r = _active_speakers(ref.turns, mid)
        active_h = _active_speakers(hyp_turns, mid)
        n_ref = len(active_r)
        n_hyp = len(active_h)
        ms += dur * max(0, n_ref - n_hyp)
        fa += dur * max(0, n_hyp - n_ref)
        min_cover += dur * min(n_ref, n_hyp)
        total += dur * n_ref
        for r in active_r:
            for h in active_h:
                grid[ref_idx[r], hyp_idx[h]] += dur

    # the mapping is chosen on the scored timeline, so the collar forgives
    # boundary jitter in the mapping step as well
    mapping: dict[str, str] = {}
    correct = 0.0
    if grid.size:
        rows, cols = linear_sum_assignment(grid, maximize=True)
        for r, h in zip(rows, cols):
            if grid[r, h] > 0:
                mapping[hyp_speakers[h]] = ref_speakers[r]
                correct += grid[r, h]
    ce = min_cover - correct

    if total <= 0:
        raise ValueError("collar excluded all reference speech; nothing to score")
    return DerReport(fa_s=fa, ms_s=ms, ce_s=ce, scored_total_s=total,
                     collar_s=collar_s, speaker_map=mapping,
                     recording_id=ref.recording_id)


# -- file formats ----------------------------------------------------------------


def parse_rttm(path) -> ReferenceAnnotation:
    """Read SPEAKER records from an RTTM file. Comment lines (starting with
    ';;' or '#') and blank lines are skipped; any other malformed line is an
    error naming its line number."""
    turns = []
    recording_ids = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith(";;") or stripped.startswith("#"):
                continue
            fields = stripped.split()
            if fields[0] != "SPEAKER":
                continue
            if len(fields) < 8:
                raise ValueError(f"line {lineno}: SPEAKER record has "
                                 f"{len(fields)} fields, expected at least 8")
            try:
                start = float(fields[3])
                dur = float(fields[4])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: non-numeric start/duration") from exc
            if dur <= 0:
                raise ValueError(f"line {lineno}: non-positive duration {dur}")
            recording_ids.add(fields[1])
            turns.append(Turn(start, start + dur, fields[7]))
    if len(recording_ids) > 1:
        raise ValueError(f"RTTM mixes recordings {sorted(recording_ids)}; "
                         f"score one recording at a time")
    rec = recording_ids.pop() if recording_ids else "rec"
    return ReferenceAnnotation(turns, recording_id=rec)


def write_rttm(annotation, path) -> None:
    turns = _as_turns(annotation)
    rec = getattr(annotation, "recording_id", "rec")
    with open(path, "w") as fh:
        for t in sorted(turns, key=lambda t: (t.start, t.end, t.speaker)):
            fh.write(f"SPEAKER {rec} 1 {t.start:.3f} {t.duration:.3f} "
                     f"<NA> <NA> {t.speaker} <NA> <NA>\n")


def parse_csv_annotation(path, recording_id: str = "rec") -> ReferenceAnnotation:
    """Read a start,end,speaker table (header required)."""
    turns = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"start", "end", "speaker"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"CSV must have columns {sorted(required)}, "
                             f"got {reader.fieldnames}")
        for row in reader:
            turns.append(Turn(float(row["start"]), float(row["end"]), row["speaker"]))
    return ReferenceAnnotation(turns, recording_id=recording_id)


def load_annotation(path) -> ReferenceAnnotation:
    """Dispatch on extension: .rttm or .csv."""
    text = str(path)
    if text.endswith(".rttm"):
        return parse_rttm(path)
    if text.endswith(".csv"):
        return parse_csv_annotation(path)
    raise ValueError(f"unknown annotation format: {text} (use .rttm or .csv)")
