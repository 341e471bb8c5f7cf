"""Audio ingestion, segmentation, VAD, and turn assembly."""

import numpy as np
import pytest
from scipy.io import wavfile

from mixsae.embeddings import ConversationSpec, synth_conversation
from mixsae.metrics import parse_rttm
from mixsae.pipeline import (
    AudioBuffer,
    DiarizationResult,
    VadConfig,
    assemble_diarization,
    energy_vad,
    frame_rms,
    load_wav,
    relabel_by_first_appearance,
    run_pipeline,
    segment_audio,
    segment_spans,
    speech_segments,
    vad_threshold,
)


def tone(duration_s, freq=440.0, rate=16000, amp=0.5):
    t = np.arange(int(duration_s * rate)) / rate
    return amp * np.sin(2 * np.pi * freq * t)


def test_load_wav_int16_scaling(tmp_path):
    path = tmp_path / "a.wav"
    samples = (tone(0.5) * 32767).astype(np.int16)
    wavfile.write(path, 16000, samples)
    audio = load_wav(path)
    assert audio.sample_rate == 16000
    assert np.allclose(audio.samples, samples / 32768.0)


def test_load_wav_downmixes_and_resamples(tmp_path):
    path = tmp_path / "b.wav"
    left = tone(1.0, rate=8000)
    right = np.zeros_like(left)
    wavfile.write(path, 8000, np.stack([left, right], axis=1).astype(np.float32))
    audio = load_wav(path)
    assert audio.sample_rate == 16000
    assert abs(audio.duration - 1.0) < 1e-3
    # channel mean halves the left-only tone
    assert abs(np.abs(audio.samples).max() - 0.25) < 0.01


def test_audio_buffer_validates_rate():
    with pytest.raises(ValueError):
        AudioBuffer(np.zeros(10), sample_rate=0)


def test_segment_spans_exact_tiling():
    spans = segment_spans(16000, 16000, 0.2)
    assert len(spans) == 5
    assert spans[0] == (0, 3200)
    assert spans[-1] == (12800, 16000)


def test_segment_spans_merges_short_tail():
    # 1.05 s at W=0.2: the 0.05 s tail joins the previous window
    spans = segment_spans(16800, 16000, 0.2)
    assert len(spans) == 5
    assert spans[-1] == (12800, 16800)


def test_segment_spans_keeps_long_tail():
    # 1.1 s at W=0.2: a 0.1 s tail is exactly half a window and survives
    spans = segment_spans(17600, 16000, 0.2)
    assert len(spans) == 6
    assert spans[-1] == (16000, 17600)


def test_segment_spans_cover_everything_once():
    for n in (1, 100, 15999, 16000, 16001, 50000):
        spans = segment_spans(n, 16000, 0.3)
        assert spans[0][0] == 0
        assert spans[-1][1] == n
        for (_, b), (c, _) in zip(spans, spans[1:]):
            assert b == c


def test_segment_audio_times():
    audio = AudioBuffer(np.zeros(16000))
    segs = segment_audio(audio, 0.5)
    assert [(s.start_s, s.end_s) for s in segs] == [(0.0, 0.5), (0.5, 1.0)]
    assert segs[0].duration == 0.5


def test_frame_rms_short_input():
    config = VadConfig()
    rms = frame_rms(np.full(100, 0.5), 16000, config)
    assert rms.shape == (1,)
    assert rms[0] == pytest.approx(0.5)
    assert frame_rms(np.zeros(0), 16000, config).size == 0


def test_vad_threshold_formula():
    audio = AudioBuffer(tone(2.0))
    config = VadConfig()
    rms = frame_rms(audio.samples, 16000, config)
    expect = max(1e-4, 0.1 * float(np.percentile(rms, 95)))
    assert vad_threshold(audio, config) == pytest.approx(expect)
    # digital silence bottoms out at the absolute floor
    assert vad_threshold(AudioBuffer(np.zeros(16000))) == pytest.approx(1e-4)


def test_energy_vad_on_tone_and_silence():
    samples = np.concatenate([tone(1.0), np.zeros(16000), tone(1.0)])
    audio = AudioBuffer(samples)
    segs = segment_audio(audio, 1.0)
    assert energy_vad(audio, segs[0]) is True
    assert energy_vad(audio, segs[1]) is False
    assert energy_vad(audio, segs[2]) is True


def test_energy_vad_rejects_out_of_range_segment():
    audio = AudioBuffer(np.zeros(100))
    seg = segment_audio(AudioBuffer(np.zeros(200)), 0.01)[-1]
    with pytest.raises(ValueError):
        energy_vad(audio, seg)


def test_speech_segments_mask():
    samples = np.concatenate([tone(1.0), np.zeros(16000), tone(1.0)])
    kept, mask = speech_segments(AudioBuffer(samples), 1.0)
    assert mask.tolist() == [True, False, True]
    assert [(s.start_s, s.end_s) for s in kept] == [(0.0, 1.0), (2.0, 3.0)]


def test_relabel_first_appearance_is_canonical_and_idempotent():
    labels = np.array([2, 2, 0, 1, 0])
    once = relabel_by_first_appearance(labels)
    assert once.tolist() == [0, 0, 1, 2, 1]
    assert np.array_equal(relabel_by_first_appearance(once), once)


def test_assemble_merges_contiguous_same_speaker():
    timings = [(float(i), float(i + 1)) for i in range(5)]
    result = assemble_diarization(timings, [0, 0, 1, 1, 0])
    assert result.turns == [(0.0, 2.0, 0), (2.0, 4.0, 1), (4.0, 5.0, 0)]


def test_assemble_keeps_gaps_apart():
    timings = [(0.0, 1.0), (2.0, 3.0)]
    result = assemble_diarization(timings, [0, 0])
    assert result.turns == [(0.0, 1.0, 0), (2.0, 3.0, 0)]


def test_assemble_sorts_and_validates():
    result = assemble_diarization([(1.0, 2.0), (0.0, 1.0)], [1, 0])
    # earliest segment claims label 0 after canonical relabeling
    assert result.turns == [(0.0, 1.0, 0), (1.0, 2.0, 1)]
    with pytest.raises(ValueError):
        assemble_diarization([(0.0, 1.0)], [0, 1])


def test_constant_labels_one_turn_per_speech_region():
    timings = [(0.0, 1.0), (1.0, 2.0), (5.0, 6.0)]
    result = assemble_diarization(timings, [0, 0, 0])
    assert result.turns == [(0.0, 2.0, 0), (5.0, 6.0, 0)]


def test_diarization_result_rttm(tmp_path):
    result = DiarizationResult([(0.0, 2.0, 0), (2.0, 3.5, 1)], recording_id="conv")
    path = tmp_path / "hyp.rttm"
    result.write_rttm(path)
    text = path.read_text()
    assert "SPEAKER conv 1 0.000 2.000 <NA> <NA> spk0 <NA> <NA>" in text
    back = parse_rttm(path)
    assert back.speakers() == ["spk0", "spk1"]


def test_run_pipeline_requires_timings():
    class Bare:
        vectors = np.zeros((4, 2), dtype=np.float32)
        timings = None
        recording_id = "x"

    with pytest.raises(ValueError):
        run_pipeline(Bare(), k=2, method="kmeans")


def test_run_pipeline_kmeans_single_cluster():
    conv = synth_conversation(ConversationSpec(
        k=2, dim=8, separation=6.0, duration_s=10.0, window_s=1.0, seed=0))
    result = run_pipeline(conv.embeddings, k=1, method="kmeans")
    # one speaker end to end collapses into one turn over the speech span
    assert len(result.turns) == 1
    assert result.turns[0][2] == 0


def test_run_pipeline_methods_agree_on_easy_input():
    conv = synth_conversation(ConversationSpec(
        k=2, dim=8, separation=8.0, duration_s=20.0, window_s=1.0, seed=1))
    km = run_pipeline(conv.embeddings, k=2, method="kmeans", seed=1)
    hc = run_pipeline(conv.embeddings, k=2, method="ahc", seed=1)
    assert km.turns == hc.turns
    with pytest.raises(ValueError):
        run_pipeline(conv.embeddings, k=2, method="spectral")
    with pytest.raises(ValueError):
        run_pipeline(conv.embeddings, k=1, method="mixsae")


def test_run_pipeline_deterministic():
    conv = synth_conversation(ConversationSpec(
        k=2, dim=8, separation=8.0, duration_s=15.0, window_s=0.5, seed=2))
    overrides = dict(encoder_hidden=(6, 4), latent_dim=2, pretrain_epochs=5,
                     per_cluster_epochs=3, main_epochs=4)
    a = run_pipeline(conv.embeddings, k=2, method="mixsae", seed=2,
                     mix_overrides=overrides)
    b = run_pipeline(conv.embeddings, k=2, method="mixsae", seed=2,
                     mix_overrides=overrides)
    assert a.turns == b.turns
