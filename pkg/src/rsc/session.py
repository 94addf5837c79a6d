"""Life-long model updating between a simulated transmitter and receiver.

The receiver accumulates a knowledge graph slot by slot. Whenever a slot
brings new entities, relations or complete triplets, the positive and
negative sets are updated and the model is retrained (warm start by
default). Partial triplets are completed by reasoning after their present
entity packets cross the channel, and the slot's semantic distance between
ground truth and the recovered triplets is recorded.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .channel import ChannelConfig, QuantizationSpec, receive_embeddings, transmit, make_packet
from .embedding import EmbeddingModel, InferenceConfig, TripletEmbedding, grow_model, init_model
from .kg import KnowledgeGraph, MessageStream, PartialTriplet, SlotBatch, Triplet
from .reasoning import CompletionResult, complete, semantic_distance
from .training import MarginSchedule, TrainConfig, TrainingSets, hinge_loss, sample_negatives, train

__all__ = [
    "SessionConfig",
    "SessionState",
    "SlotOutcome",
    "SessionTrace",
    "init_session",
    "ingest_slot",
    "run_session",
    "loss_feedback",
    "channel_triplet_embeddings",
    "write_trace",
]


@dataclass(frozen=True)
class SessionConfig:
    dim: int = 50
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    warm_start: bool = True
    # Drive the convergence test with the receiver's loss on channel-corrupted embeddings.
    feedback_driven: bool = False
    feedback_sample: int = 64


@dataclass
class SessionState:
    seed: int
    cfg: TrainConfig
    session_cfg: SessionConfig
    graph: KnowledgeGraph = field(default_factory=KnowledgeGraph)
    sets: TrainingSets = field(default_factory=TrainingSets)
    model: EmbeddingModel | None = None
    margins: MarginSchedule = field(default_factory=MarginSchedule)
    t: int = 0
    objective_history: list[float] = field(default_factory=list)
    epochs_trained: int = 0


@dataclass(frozen=True)
class SlotOutcome:
    slot: int
    new_entities: int
    new_relations: int
    new_positives: int
    retrained: bool
    completions: tuple[CompletionResult | None, ...]
    correct: tuple[bool, ...]
    slot_distance: float
    train_epochs: int = 0

    @property
    def completion_acc(self) -> float:
        return float(np.mean(self.correct)) if self.correct else float("nan")


@dataclass
class SessionTrace:
    outcomes: list[SlotOutcome]
    state: SessionState

    @property
    def distances(self) -> list[float]:
        return [o.slot_distance for o in self.outcomes]

    @property
    def retrain_count(self) -> int:
        return sum(o.retrained for o in self.outcomes)


def init_session(seed: int = 0, cfg: TrainConfig | None = None, session_cfg: SessionConfig | None = None,
                 margins: MarginSchedule | None = None) -> SessionState:
    return SessionState(
        seed=seed,
        cfg=cfg or TrainConfig(seed=seed),
        session_cfg=session_cfg or SessionConfig(),
        margins=margins or MarginSchedule(),
    )


def _sub_seed(state: SessionState, *key: int) -> int:
    return int(np.random.SeedSequence(state.seed, spawn_key=(state.t, *key)).generate_state(1)[0])


def _register(graph: KnowledgeGraph, symbols: Iterable[tuple[str, object]]) -> None:
    for kind, sym in symbols:
        (graph.entities if kind == "e" else graph.relations).add(sym)


def _grow(state: SessionState) -> None:
    g = state.graph
    if state.model is None:
        state.model = EmbeddingModel.empty(state.session_cfg.dim, state.session_cfg.inference)
    m = state.model
    grow_model(m, g.n_entities - m.n_entities, g.n_relations - m.n_relations, seed=_sub_seed(state, 0))


def _refresh_negatives(state: SessionState, new_pos: list[Triplet]) -> None:
    """Evict negatives that are now positive, replace them 1:1, top up to k per positive."""
    sets, g = state.sets, state.graph
    evicted = [t for t in new_pos if t in sets.negatives]
    for t in evicted:
        sets.negatives.discard(t)
    k = state.cfg.negatives_per_positive
    if g.n_entities < 2 or k == 0:
        return
    need = len(evicted) + max(0, k * len(sets.positives) - len(sets.negatives) - len(evicted))
    sources = (evicted + new_pos) or list(sets.positives)
    attempt = 0
    while need > 0 and attempt < state.cfg.max_retries:
        reps = [sources[i % len(sources)] for i in range(need)]
        fresh = sample_negatives(g, reps, 1, seed=_sub_seed(state, 1, attempt), exclude=sets.negatives,
                                 max_retries=state.cfg.max_retries)
        fresh -= sets.negatives
        for t in sorted(fresh)[:need]:
            sets.negatives.add(t)
            need -= 1
        attempt += 1


def _feedback_signal(state: SessionState, ch: ChannelConfig, spec: QuantizationSpec):
    n = state.session_cfg.feedback_sample
    rng = np.random.default_rng(_sub_seed(state, 2))
    pos = sorted(state.sets.positives)
    neg = sorted(state.sets.negatives)
    pos = [pos[i] for i in rng.choice(len(pos), size=min(n, len(pos)), replace=False)]
    neg = [neg[i] for i in rng.choice(len(neg), size=min(n, len(neg)), replace=False)]
    calls = [0]

    def signal(model: EmbeddingModel) -> float:
        calls[0] += 1
        noisy = ChannelConfig(ch.snr_db, seed=ch.seed + calls[0], bit_error_rate=ch.bit_error_rate)
        pe = channel_triplet_embeddings(model, pos, noisy, spec)
        ne = channel_triplet_embeddings(model, neg, noisy, spec, first_index=2 * len(pos))
        return loss_feedback(state, pe, ne, model=model) / (len(pos) * len(neg))

    return signal


def _retrain(state: SessionState, ch: ChannelConfig, spec: QuantizationSpec) -> int:
    if not state.sets.positives:
        return 0
    if not state.session_cfg.warm_start:
        scfg = state.session_cfg
        state.model = init_model(state.graph.n_entities, state.graph.n_relations, scfg.dim,
                                 seed=_sub_seed(state, 3), config=scfg.inference)
    signal = None
    if state.session_cfg.feedback_driven and state.sets.negatives:
        signal = _feedback_signal(state, ch, spec)
    res = train(state.model, state.sets, state.cfg, state.margins,
                epoch_offset=state.epochs_trained, convergence_signal=signal)
    state.epochs_trained += res.epochs
    return res.epochs


def _complete_partial(state: SessionState, query: PartialTriplet, ch: ChannelConfig, spec: QuantizationSpec,
                      base_index: int) -> CompletionResult | None:
    """Send the present entity packets; corrupted ones become missing slots too."""
    model = state.model
    values = {"head": query.head, "relation": query.relation, "tail": query.tail}
    for j, slot in enumerate(("head", "tail")):
        eid = values[slot]
        if eid is None:
            continue
        _, bad = transmit(make_packet(eid, model.entities[eid], spec), ch, spec, base_index + j)
        if bad:
            values[slot] = None
    if all(v is None for v in values.values()):
        return None
    return complete(model, state.graph, PartialTriplet(**values), top_k=1)


def ingest_slot(state: SessionState, batch: SlotBatch, ch: ChannelConfig, spec: QuantizationSpec,
                stream: MessageStream | None = None) -> SlotOutcome:
    """Process one slot. ``batch`` ids are mapped through ``stream``'s source vocabulary.

    Without a stream the ids are taken as symbols themselves (``str(id)``).
    """
    state.t += 1
    ent_sym = (lambda i: stream.entity_symbols[i]) if stream is not None else str
    rel_sym = (lambda i: stream.relation_symbols[i]) if stream is not None else str
    g = state.graph
    n_e0, n_r0 = g.n_entities, g.n_relations

    new_pos: list[Triplet] = []
    for t in batch.complete:
        syms = (ent_sym(t.head), rel_sym(t.relation), ent_sym(t.tail))
        had = len(g)
        g.add_triplet(syms)
        if len(g) > had:
            local = Triplet(g.entities.id(syms[0]), g.relations.id(syms[1]), g.entities.id(syms[2]))
            new_pos.append(local)
    for q in batch.partial:
        present = [("e", ent_sym(q.head)) if q.head is not None else None,
                   ("r", rel_sym(q.relation)) if q.relation is not None else None,
                   ("e", ent_sym(q.tail)) if q.tail is not None else None]
        _register(g, [x for x in present if x is not None])
    new_e, new_r = g.n_entities - n_e0, g.n_relations - n_r0
    if state.model is None or new_e or new_r:
        _grow(state)
    state.sets.positives.update(new_pos)
    _refresh_negatives(state, new_pos)

    epochs = 0
    retrained = bool(new_e or new_r or new_pos)
    if retrained:
        epochs = _retrain(state, ch, spec)

    completions: list[CompletionResult | None] = []
    correct: list[bool] = []
    recovered: set[Triplet] = set()
    truth_local: set[Triplet] = set()
    for t in batch.complete:
        local = _local(g, ent_sym(t.head), rel_sym(t.relation), ent_sym(t.tail))
        recovered.add(local)
        truth_local.add(local)
    for i, (q, truth) in enumerate(zip(batch.partial, batch.truth)):
        lq = PartialTriplet(
            None if q.head is None else g.entities.id(ent_sym(q.head)),
            None if q.relation is None else g.relations.id(rel_sym(q.relation)),
            None if q.tail is None else g.entities.id(ent_sym(q.tail)),
        )
        res = _complete_partial(state, lq, ch, spec, base_index=(state.t << 20) + 2 * i)
        completions.append(res)
        lt = _local(g, ent_sym(truth.head), rel_sym(truth.relation), ent_sym(truth.tail))
        correct.append(res is not None and lt is not None and res.completed == lt)
        # Truth triplets naming symbols the receiver never saw cannot be scored.
        if lt is not None:
            truth_local.add(lt)
            if res is not None:
                recovered.add(res.completed)
    dist = semantic_distance(state.model, truth_local, recovered) if state.model is not None else 0.0
    state.objective_history.append(dist)
    return SlotOutcome(state.t, new_e, new_r, len(new_pos), retrained, tuple(completions), tuple(correct), dist, epochs)


def _local(g: KnowledgeGraph, h: str, r: str, t: str) -> Triplet | None:
    hi, ri, ti = g.entities.get(h), g.relations.get(r), g.entities.get(t)
    if hi is None or ri is None or ti is None:
        return None
    return Triplet(hi, ri, ti)


def run_session(state: SessionState, stream: MessageStream, ch: ChannelConfig, spec: QuantizationSpec) -> SessionTrace:
    outcomes = [ingest_slot(state, batch, ch, spec, stream=stream) for batch in stream]
    return SessionTrace(outcomes, state)


def channel_triplet_embeddings(model: EmbeddingModel, triplets: Sequence[Triplet], ch: ChannelConfig,
                               spec: QuantizationSpec, first_index: int = 0) -> TripletEmbedding:
    """Triplet embeddings as seen by the receiver: entity rows cross the channel, relations do not."""
    if not triplets:
        d = model.dim
        return TripletEmbedding(np.zeros((0, d)), np.zeros((0, d)), np.zeros((0, d)))
    arr = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    ids = np.column_stack([arr[:, 0], arr[:, 2]]).reshape(-1)
    rows, _ = receive_embeddings(model, ids.tolist(), ch, spec, first_index)
    rows = rows.reshape(len(arr), 2, model.dim)
    return TripletEmbedding(rows[:, 0], model.relations[arr[:, 1]], rows[:, 1])


def loss_feedback(state: SessionState, corrupted_positive_embeds, corrupted_negative_embeds,
                  model: EmbeddingModel | None = None) -> float:
    """Receiver-side margin loss on received embeddings, fed back to the transmitter."""
    model = model or state.model
    if model is None:
        raise ValueError("session has no model yet")
    return hinge_loss(model, corrupted_positive_embeds, corrupted_negative_embeds, state.margins)


def write_trace(path, trace: SessionTrace, comments: Iterable[str] = ()) -> None:
    """CSV with columns ``slot, new_entities, new_relations, retrained, n_completions,
    completion_acc, slot_distance, cum_distance``."""
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["slot", "new_entities", "new_relations", "retrained", "n_completions",
                    "completion_acc", "slot_distance", "cum_distance"])
        cum = 0.0
        for o in trace.outcomes:
            cum += o.slot_distance
            w.writerow([o.slot, o.new_entities, o.new_relations, int(o.retrained), len(o.completions),
                        repr(o.completion_acc), repr(o.slot_distance), repr(cum)])
