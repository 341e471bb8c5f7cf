"""SDEB file format and the synthetic data generators."""

import itertools

import numpy as np
import pytest

from mixsae.cluster import kmeans_fit
from mixsae.embeddings import (
    BadMagicError,
    ConversationSpec,
    EmbeddingSet,
    SdebError,
    SynthSpec,
    TruncatedPayloadError,
    UnknownVersionError,
    annotation_from_turns,
    conversation_from_turns,
    read_embeddings,
    synth_conversation,
    synth_embeddings,
    write_embeddings,
)
from mixsae.metrics import der
from mixsae.pipeline import assemble_diarization


def small_set(timed=False):
    vectors = np.arange(12, dtype=np.float32).reshape(4, 3) / 7.0
    timings = [(0.0, 0.5), (0.5, 1.0), (1.0, 1.5), (1.5, 2.0)] if timed else None
    return EmbeddingSet(vectors, timings=timings, recording_id="clip",
                        source_tag="synthetic")


def test_roundtrip_bit_exact(tmp_path):
    for timed in (False, True):
        es = small_set(timed)
        path = tmp_path / f"t{timed}.sdeb"
        write_embeddings(es, path)
        back = read_embeddings(path)
        assert np.array_equal(back.vectors, es.vectors)
        assert back.recording_id == "clip"
        assert back.source_tag == "synthetic"
        if timed:
            assert np.array_equal(back.timings, es.timings)
        else:
            assert back.timings is None
        # writing the parsed set again reproduces the same bytes
        again = tmp_path / f"u{timed}.sdeb"
        write_embeddings(back, again)
        assert again.read_bytes() == path.read_bytes()


def test_roundtrip_empty_set(tmp_path):
    es = EmbeddingSet(np.zeros((0, 5), dtype=np.float32))
    path = tmp_path / "empty.sdeb"
    write_embeddings(es, path)
    back = read_embeddings(path)
    assert back.n == 0
    assert back.dim == 5


def test_bad_magic(tmp_path):
    path = tmp_path / "a.sdeb"
    write_embeddings(small_set(), path)
    raw = path.read_bytes()
    path.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(BadMagicError):
        read_embeddings(path)


def test_unknown_version(tmp_path):
    path = tmp_path / "b.sdeb"
    write_embeddings(small_set(), path)
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(UnknownVersionError):
        read_embeddings(path)


def test_truncated_and_trailing_bytes(tmp_path):
    path = tmp_path / "c.sdeb"
    write_embeddings(small_set(True), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(TruncatedPayloadError):
        read_embeddings(path)
    path.write_bytes(raw + b"\x00\x00")
    with pytest.raises(TruncatedPayloadError):
        read_embeddings(path)
    # all format errors share one family for coarse handling
    assert issubclass(BadMagicError, SdebError)
    assert issubclass(UnknownVersionError, SdebError)
    assert issubclass(TruncatedPayloadError, SdebError)


def test_vectors_must_be_2d():
    with pytest.raises(ValueError):
        EmbeddingSet(np.zeros(5, dtype=np.float32))


def test_timings_validation():
    v = np.zeros((2, 3), dtype=np.float32)
    with pytest.raises(ValueError):
        EmbeddingSet(v, timings=[(0.0, 1.0)])
    with pytest.raises(ValueError):
        EmbeddingSet(v, timings=[(0.0, 0.0), (1.0, 2.0)])
    with pytest.raises(ValueError):
        EmbeddingSet(v, timings=[(0.0, 1.0), (0.5, 2.0)])


def test_whisper_tag_pins_dimension():
    EmbeddingSet(np.zeros((1, 384), dtype=np.float32), source_tag="whisper-tiny")
    with pytest.raises(ValueError):
        EmbeddingSet(np.zeros((1, 100), dtype=np.float32), source_tag="whisper-tiny")
    with pytest.raises(ValueError):
        EmbeddingSet(np.zeros((1, 384), dtype=np.float32), source_tag="whisper-huge")


def test_overlong_string_rejected(tmp_path):
    es = EmbeddingSet(np.zeros((1, 2), dtype=np.float32),
                      recording_id="x" * 70000)
    with pytest.raises(ValueError):
        write_embeddings(es, tmp_path / "d.sdeb")


def test_synth_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(k=0, dim=4, points_per_cluster=10)
    with pytest.raises(ValueError):
        SynthSpec(k=2, dim=4, points_per_cluster=10, separation=-1.0)
    with pytest.raises(ValueError):
        SynthSpec(k=5, dim=3, points_per_cluster=10, separation=6.0)
    # zero separation permits dim < k (all centroids coincide)
    SynthSpec(k=5, dim=3, points_per_cluster=10, separation=0.0)


def test_synth_centroids_pairwise_separation():
    spec = SynthSpec(k=4, dim=16, points_per_cluster=1, separation=6.0, seed=3)
    es, labels = synth_embeddings(spec)
    assert es.n == 4
    assert np.array_equal(labels, [0, 1, 2, 3])


def test_synth_blob_geometry():
    # large sample: cluster means land near pairwise-6-apart centroids
    spec = SynthSpec(k=3, dim=8, points_per_cluster=400, separation=6.0, seed=4)
    es, labels = synth_embeddings(spec)
    means = np.stack([es.vectors[labels == j].mean(axis=0) for j in range(3)])
    for i, j in itertools.combinations(range(3), 2):
        assert abs(np.linalg.norm(means[i] - means[j]) - 6.0) < 0.3


def test_synth_zero_separation_is_chance():
    accs = []
    for seed in range(50):
        es, labels = synth_embeddings(
            SynthSpec(k=2, dim=4, points_per_cluster=40, separation=0.0, seed=seed))
        _, pred = kmeans_fit(es.vectors.astype(np.float64), 2, seed=seed)
        a = float((pred == labels).mean())
        accs.append(max(a, 1.0 - a))
    # indistinguishable clusters: best-permutation accuracy stays near chance
    assert 0.5 <= float(np.mean(accs)) <= 0.62


def test_synth_six_sigma_kmeans_accuracy():
    for seed in range(5):
        es, labels = synth_embeddings(
            SynthSpec(k=2, dim=32, points_per_cluster=100, separation=6.0, seed=seed))
        _, pred = kmeans_fit(es.vectors.astype(np.float64), 2, seed=seed)
        a = float((pred == labels).mean())
        assert max(a, 1.0 - a) >= 0.99


def test_synth_determinism_same_bytes(tmp_path):
    spec = SynthSpec(k=2, dim=8, points_per_cluster=20, seed=9)
    a, _ = synth_embeddings(spec)
    b, _ = synth_embeddings(spec)
    pa, pb = tmp_path / "a.sdeb", tmp_path / "b.sdeb"
    write_embeddings(a, pa)
    write_embeddings(b, pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_conversation_two_turns_of_five_seconds():
    turns = [(0.0, 5.0, 0), (5.0, 10.0, 1)]
    es, labels = conversation_from_turns(turns, dim=8, separation=6.0,
                                         window_s=1.0, seed=0)
    assert es.n == 10
    assert labels.tolist() == [0] * 5 + [1] * 5
    ref = annotation_from_turns(turns)
    assert len(ref.turns) == 2


def test_conversation_oracle_labels_score_zero_when_grid_aligned():
    # with turn boundaries on the window grid there is no quantization, so
    # feeding the generator's own labels back closes the loop exactly
    turns = [(0.0, 2.0, 0), (2.0, 3.5, 1), (3.5, 5.0, 0), (5.0, 7.0, 1)]
    es, labels = conversation_from_turns(turns, dim=8, separation=6.0,
                                         window_s=0.5, seed=5)
    hyp = assemble_diarization(es.timings, labels, recording_id="synthconv")
    report = der(annotation_from_turns(turns), hyp.to_annotation(), collar_s=0.0)
    assert report.der == pytest.approx(0.0, abs=1e-9)
    assert [(s, e) for s, e, _ in hyp.turns] == [(s, e) for s, e, _ in turns]


def test_conversation_majority_window_rule():
    # the second window is 0.3 s speaker 0 and 0.7 s speaker 1
    turns = [(0.0, 1.3, 0), (1.3, 3.0, 1)]
    es, labels = conversation_from_turns(turns, dim=8, separation=6.0,
                                         window_s=1.0, seed=6)
    assert labels.tolist() == [0, 1, 1]


def test_conversation_tie_picks_lower_speaker():
    turns = [(0.0, 1.5, 0), (1.5, 3.0, 1)]
    _, labels = conversation_from_turns(turns, dim=8, separation=6.0,
                                        window_s=1.0, seed=7)
    assert labels.tolist() == [0, 0, 1]


def test_conversation_silence_drops_underfilled_windows():
    # window [2,3) holds 0.4 s of speech, under half, so it emits nothing
    turns = [(0.0, 1.0, 0), (2.6, 4.0, 1)]
    es, labels = conversation_from_turns(turns, dim=8, separation=6.0,
                                         window_s=1.0, seed=8)
    assert es.timings[:, 0].tolist() == [0.0, 3.0]
    assert labels.tolist() == [0, 1]
    # at 0.6 s of speech the same window clears the bar
    es, labels = conversation_from_turns([(0.0, 1.0, 0), (2.4, 4.0, 1)],
                                         dim=8, separation=6.0,
                                         window_s=1.0, seed=8)
    assert es.timings[:, 0].tolist() == [0.0, 2.0, 3.0]
    assert labels.tolist() == [0, 1, 1]


def test_conversation_spec_validation():
    with pytest.raises(ValueError):
        ConversationSpec(k=1)
    with pytest.raises(ValueError):
        ConversationSpec(duration_s=0.0)
    with pytest.raises(ValueError):
        ConversationSpec(silence_prob=1.5)


def test_conversation_generator_is_deterministic():
    spec = ConversationSpec(k=2, dim=8, duration_s=20.0, seed=10)
    a = synth_conversation(spec)
    b = synth_conversation(spec)
    assert np.array_equal(a.embeddings.vectors, b.embeddings.vectors)
    assert np.array_equal(a.window_labels, b.window_labels)
    assert a.reference.turns == b.reference.turns


def test_conversation_reference_invariants():
    for seed in range(5):
        conv = synth_conversation(ConversationSpec(
            k=3, dim=8, duration_s=25.0, silence_prob=0.3, seed=seed))
        ref = conv.reference
        assert not ref.has_cross_speaker_overlap
        assert ref.total_speech > 0.0
        assert conv.embeddings.timings is not None
