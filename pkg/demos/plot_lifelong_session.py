"""
Life-long updating over a message stream
========================================

The receiver learns slot by slot. Retraining happens only when a slot
brings something new, so once the vocabulary is closed the model stays
put while partial triplets keep being completed.
"""

from rsc import ChannelConfig, QuantizationSpec, SessionConfig, TrainConfig, init_session, make_stream, run_session, toy_graph

stream = make_stream(toy_graph(), 6, incomplete_fraction=0.25, seed=0, replay_slots=10, replay_size=4)
state = init_session(0, TrainConfig(epochs=200, batch_size=16, seed=0), SessionConfig(dim=32))
trace = run_session(state, stream, ChannelConfig(snr_db=10.0, seed=0), QuantizationSpec(16))

for o in trace.outcomes:
    acc = "" if not o.correct else f" acc={o.completion_acc:.2f}"
    print(f"slot {o.slot:2d} new_e={o.new_entities} new_r={o.new_relations} new_t={o.new_positives} "
          f"retrained={str(o.retrained):5s} distance={o.slot_distance:+.3f}{acc}")
print(f"{trace.retrain_count} retrains over {len(trace.outcomes)} slots")
