"""Reasoning-based semantic communication: knowledge-graph embeddings, triplet
completion, a packetized noisy channel and life-long model updating."""

from .channel import ChannelConfig, QuantizationSpec, snr_to_bit_error_rate, transmit, transmit_and_recover
from .embedding import (
    EmbeddingModel,
    GeneralConstants,
    InferenceConfig,
    InferenceMode,
    TripletEmbedding,
    init_model,
    score,
    score_gradients,
)
from .experiments import (
    ExperimentSpec,
    run_acc_vs_trainsize,
    run_category_scatter,
    run_loss_curves,
    run_per_vs_snr,
)
from .kg import KnowledgeGraph, PartialTriplet, Triplet, load_dataset, make_stream, synthetic_taxonomy, toy_graph
from .reasoning import complete, evaluate_completion, graph_score, semantic_distance
from .session import SessionConfig, init_session, ingest_slot, run_session
from .training import MarginSchedule, TrainConfig, TrainingSets, hinge_loss, sample_negatives, sgd_epoch, train

__version__ = "0.1.0"
