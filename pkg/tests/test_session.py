import csv

import numpy as np
import pytest

import rsc.session as session_mod
from rsc.channel import ChannelConfig, QuantizationSpec
from rsc.embedding import InferenceConfig
from rsc.kg import KnowledgeGraph, MessageStream, PartialTriplet, SlotBatch, Triplet, make_stream, toy_graph
from rsc.session import (
    SessionConfig,
    channel_triplet_embeddings,
    ingest_slot,
    init_session,
    loss_feedback,
    run_session,
    write_trace,
)
from rsc.training import TrainConfig, hinge_loss

CLEAN = ChannelConfig(bit_error_rate=0.0)
SPEC = QuantizationSpec(16)


def fast_cfg(seed=0, epochs=40):
    return TrainConfig(epochs=epochs, batch_size=16, seed=seed, learning_rate=0.05)


def small_session(seed=0, **kw):
    return init_session(seed, fast_cfg(seed), SessionConfig(dim=12, **kw))


def symbol_batch(*triplets, partial=(), truth=()):
    return SlotBatch(tuple(Triplet(*t) for t in triplets), tuple(partial), tuple(Triplet(*t) for t in truth))


def test_fresh_session():
    s = init_session(0)
    assert s.t == 0 and not s.sets.positives and s.model is None and s.objective_history == []


def test_empty_stream_gives_empty_trace():
    s = small_session()
    trace = run_session(s, MessageStream((), 0, (), ()), CLEAN, SPEC)
    assert trace.outcomes == [] and trace.distances == [] and s.objective_history == []


def test_noop_slot():
    s = small_session()
    ingest_slot(s, symbol_batch(("a", "r", "b")), CLEAN, SPEC)
    before = s.model.entities.copy()
    out = ingest_slot(s, symbol_batch(("a", "r", "b")), CLEAN, SPEC)
    assert not out.retrained and out.completions == () and out.train_epochs == 0
    assert np.array_equal(s.model.entities, before)
    assert s.t == 2


def test_new_entity_grows_model():
    s = small_session()
    ingest_slot(s, symbol_batch(("a", "r", "b"), ("b", "r", "c")), CLEAN, SPEC)
    n_rows, n_pos = s.model.n_entities, len(s.sets.positives)
    out = ingest_slot(s, symbol_batch(("c", "r", "d")), CLEAN, SPEC)
    assert out.retrained and out.new_entities == 1 and out.new_relations == 0
    assert s.model.n_entities == n_rows + 1
    assert len(s.sets.positives) == n_pos + 1


def test_eviction_replaces_negative():
    s = small_session()
    ingest_slot(s, symbol_batch(("a", "r", "b"), ("b", "r", "c"), ("c", "r", "d")), CLEAN, SPEC)
    g = s.graph
    x = Triplet(g.entities.id("a"), g.relations.id("r"), g.entities.id("c"))
    assert x not in s.sets.positives and x not in s.sets.negatives
    s.sets.negatives.add(x)
    size = len(s.sets.negatives)
    assert size == len(s.sets.positives) + 1  # already k * |positives| after x is ingested
    out = ingest_slot(s, symbol_batch(("a", "r", "c")), CLEAN, SPEC)
    assert out.retrained and out.new_positives == 1
    assert x in s.sets.positives and x not in s.sets.negatives
    assert len(s.sets.negatives) == size
    s.sets.check_disjoint()


def test_negatives_topped_up_per_new_positive():
    s = small_session()
    ingest_slot(s, symbol_batch(("a", "r", "b"), ("b", "r", "c")), CLEAN, SPEC)
    assert len(s.sets.negatives) == len(s.sets.positives)
    ingest_slot(s, symbol_batch(("c", "r", "a")), CLEAN, SPEC)
    assert len(s.sets.negatives) == len(s.sets.positives) == 3
    s.sets.check_disjoint()


def test_previous_rows_untouched_by_growth(monkeypatch):
    s = small_session()
    ingest_slot(s, symbol_batch(("a", "r", "b")), CLEAN, SPEC)
    ent, rel = s.model.entities.copy(), s.model.relations.copy()
    monkeypatch.setattr(session_mod, "_retrain", lambda state, ch, spec: 0)
    ingest_slot(s, symbol_batch(("b", "q", "c")), CLEAN, SPEC)
    assert np.array_equal(s.model.entities[:2], ent)
    assert np.array_equal(s.model.relations[:1], rel)
    assert s.model.n_entities == 3 and s.model.n_relations == 2


def toy_stream(seed=0, slots=20, replay=30, frac=0.25):
    return make_stream(toy_graph(), slots, incomplete_fraction=frac, seed=seed, replay_slots=replay, replay_size=4)


def test_session_invariants_over_slots():
    stream = toy_stream()
    s = small_session()
    for batch in stream:
        out = ingest_slot(s, batch, ChannelConfig(snr_db=4.0, seed=1), SPEC, stream=stream)
        s.sets.check_disjoint()
        assert s.model.n_entities == s.graph.n_entities and s.model.n_relations == s.graph.n_relations
        assert out.retrained == bool(out.new_entities or out.new_relations or out.new_positives)
        assert len(out.completions) == len(batch.partial)
    assert s.t == len(stream.slots)


def test_replay_quiesces_after_closure():
    s = small_session()
    stream = toy_stream(frac=0.0)
    trace = run_session(s, stream, CLEAN, SPEC)
    late = trace.outcomes[20:]
    assert all(not o.retrained for o in late)
    flags = [o.retrained for o in trace.outcomes]
    last_retrain = max(i for i, f in enumerate(flags) if f)
    assert not any(flags[last_retrain + 1:])


def test_noiseless_replay_distance_is_zero():
    s = small_session()
    trace = run_session(s, toy_stream(frac=0.0), CLEAN, SPEC)
    assert all(d == 0.0 for d in trace.distances[20:])


def test_session_replay_is_bit_identical():
    ch = ChannelConfig(snr_db=2.0, seed=9)
    traces = []
    for _ in range(2):
        s = small_session(seed=4)
        traces.append(run_session(s, toy_stream(seed=4, slots=10, replay=5), ch, SPEC))
    a, b = traces
    assert a.distances == b.distances
    assert [o.correct for o in a.outcomes] == [o.correct for o in b.outcomes]
    assert np.array_equal(a.state.model.entities, b.state.model.entities)


def test_cold_start_runs():
    s = small_session(warm_start=False)
    trace = run_session(s, toy_stream(slots=4, replay=0), CLEAN, SPEC)
    assert trace.retrain_count == 4


def test_partial_completion_in_slot():
    g = toy_graph()
    stream = make_stream(g, 1, seed=0)
    s = init_session(0, TrainConfig(epochs=1000, seed=0), SessionConfig(dim=30))
    ingest_slot(s, stream.slots[0], CLEAN, SPEC, stream=stream)
    q = PartialTriplet(2, 0, None)
    truth = Triplet(2, 0, 3)
    out = ingest_slot(s, SlotBatch((), (q,), (truth,)), CLEAN, SPEC, stream=stream)
    assert not out.retrained
    assert out.completions[0] is not None
    assert out.correct == (True,)
    assert out.slot_distance == 0.0


def test_loss_feedback_examples(trained_toy):
    g, model = trained_toy
    s = small_session()
    s.model = model
    pos = sorted(g)[:4]
    neg = [Triplet(t.head, t.relation, (t.tail + 4) % 8) for t in pos]
    neg = [t for t in neg if t not in g]
    clean_loss = hinge_loss(model, [model.embed(*t) for t in pos], [model.embed(*t) for t in neg])
    fb = loss_feedback(s, channel_triplet_embeddings(model, pos, CLEAN, SPEC),
                       channel_triplet_embeddings(model, neg, CLEAN, SPEC))
    # Each score moves by at most dim*step/2 per entity under L1; a pair by twice that, times pair count.
    bound = 4 * model.dim * SPEC.step / 2 * len(pos) * len(neg)
    assert abs(fb - clean_loss) <= bound
    noisy = ChannelConfig(snr_db=-3.0, seed=2)
    assert loss_feedback(s, channel_triplet_embeddings(model, pos, noisy, SPEC),
                         channel_triplet_embeddings(model, neg, noisy, SPEC)) >= 0.0
    with pytest.raises(ValueError):
        loss_feedback(init_session(0), [], [])


def test_loss_feedback_zero_when_margins_satisfied():
    from rsc.embedding import EmbeddingModel

    m = EmbeddingModel(np.array([[0.0], [1.0], [10.0]]), np.array([[1.0]]), InferenceConfig("additive"))
    s = small_session()
    s.model = m
    pos = channel_triplet_embeddings(m, [Triplet(0, 0, 1)], CLEAN, QuantizationSpec(16, 16.0))
    neg = channel_triplet_embeddings(m, [Triplet(0, 0, 2)], CLEAN, QuantizationSpec(16, 16.0))
    assert loss_feedback(s, pos, neg) == 0.0


def test_feedback_driven_mode_runs():
    s = small_session(feedback_driven=True, feedback_sample=8)
    trace = run_session(s, toy_stream(slots=3, replay=2), ChannelConfig(snr_db=6.0, seed=0), SPEC)
    assert trace.retrain_count >= 1
    s.sets.check_disjoint()


def test_trace_csv(tmp_path):
    s = small_session()
    trace = run_session(s, toy_stream(slots=3, replay=1), CLEAN, SPEC)
    write_trace(tmp_path / "t.csv", trace, ["seed=0"])
    lines = (tmp_path / "t.csv").read_text().splitlines()
    rows = list(csv.DictReader(lines[1:]))
    assert list(rows[0]) == ["slot", "new_entities", "new_relations", "retrained", "n_completions",
                             "completion_acc", "slot_distance", "cum_distance"]
    assert [int(r["slot"]) for r in rows] == [1, 2, 3, 4]
    assert float(rows[-1]["cum_distance"]) == pytest.approx(sum(trace.distances))
