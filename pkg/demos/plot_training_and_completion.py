"""
Training and missing-entity recovery
====================================

Train a translational model on a synthetic taxonomy, then recover masked
heads and tails of held-out triplets.
"""

from rsc import (
    InferenceConfig,
    PartialTriplet,
    TrainConfig,
    TrainingSets,
    complete,
    evaluate_completion,
    init_model,
    synthetic_taxonomy,
    train,
)

graph, test, _ = synthetic_taxonomy(200, seed=0)
print(f"{graph.n_entities} entities, {graph.n_relations} relations, {len(graph)} train / {len(test)} test")

###############################################################################
# Train the additive and linear models from the same seed.
models = {}
for mode in ("additive", "linear"):
    model = init_model(graph.n_entities, graph.n_relations, 32, seed=0, config=InferenceConfig(mode))
    res = train(model, TrainingSets(set(graph)), TrainConfig(epochs=300, seed=0))
    print(f"{mode:9s} loss {res.history[0]:.3f} -> {res.history[-1]:.3f} in {res.epochs} epochs")
    models[mode] = model

###############################################################################
# Ranking metrics on the held-out triplets, masking heads and tails.
for mode, model in models.items():
    rep = evaluate_completion(model, graph, test, mask="both", filtered=True)
    print(f"{mode:9s} hits@1={rep.hits_at_1:.3f} hits@10={rep.hits_at_10:.3f} mean rank={rep.mean_rank:.1f}")

###############################################################################
# A single query, shown with symbols.
t = test[0]
res = complete(models["additive"], graph, PartialTriplet(t.head, t.relation, None), top_k=5)
print("query:", graph.symbols_of(t)[:2], "?")
for (tail,), s in res.ranked_candidates:
    print(f"  {graph.entities.symbol(tail):10s} {s:.3f}" + ("  <- truth" if tail == t.tail else ""))
