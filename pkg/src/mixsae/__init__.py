"""Deep-clustering speaker diarization: k sparse autoencoders behind a
softmax gate, classical clustering baselines, an audio front-end, DER
scoring, and a binary embedding interchange format.
"""

from .cluster import AhcConfig, KMeansModel, ahc_fit, kmeans_fit, kmeans_pp_init
from .embeddings import (
    Conversation,
    ConversationSpec,
    EmbeddingSet,
    SynthSpec,
    WHISPER_EMBEDDING_DIMS,
    read_embeddings,
    synth_conversation,
    synth_embeddings,
    write_embeddings,
)
from .metrics import (
    DerReport,
    ReferenceAnnotation,
    Turn,
    der,
    load_annotation,
    optimal_speaker_mapping,
    parse_rttm,
    write_rttm,
)
from .mix import GatingProjection, MixSae, PseudoLabelState, pseudo_label_loss
from .pipeline import (
    AudioBuffer,
    DiarizationResult,
    VadConfig,
    assemble_diarization,
    energy_vad,
    load_wav,
    run_pipeline,
    segment_audio,
    vad_threshold,
)
from .sae import SaeArchitecture, SparseAutoencoder, SparsityConfig, train_sae

__version__ = "0.1.0"

__all__ = [
    "AhcConfig", "AudioBuffer", "Conversation", "ConversationSpec",
    "DerReport", "DiarizationResult", "EmbeddingSet", "GatingProjection",
    "KMeansModel", "MixSae", "PseudoLabelState", "ReferenceAnnotation",
    "SaeArchitecture", "SparseAutoencoder", "SparsityConfig", "SynthSpec",
    "Turn", "VadConfig", "WHISPER_EMBEDDING_DIMS", "ahc_fit",
    "assemble_diarization", "der", "energy_vad", "kmeans_fit",
    "kmeans_pp_init", "load_annotation", "load_wav",
    "optimal_speaker_mapping", "parse_rttm", "pseudo_label_loss",
    "read_embeddings", "run_pipeline", "segment_audio", "synth_conversation",
    "synth_embeddings", "train_sae", "vad_threshold", "write_embeddings",
    "write_rttm", "__version__",
]
