"""
Two categories in embedding space
=================================

Train on the synthetic taxonomy and project two sibling categories onto
their principal components. Writes ``demo_out/category_scatter.svg``.
"""

from rsc import ExperimentSpec, TrainConfig, run_category_scatter, synthetic_taxonomy

graph, _, categories = synthetic_taxonomy(200, seed=0)
names = sorted(set(categories.values()))[:2]
spec = ExperimentSpec(graph=graph, out_dir="demo_out", dim=32, modes=("additive",), train=TrainConfig(epochs=300, seed=0))
out = run_category_scatter(spec, names, mapping=categories)
print(f"categories {names}: intra={out['mean_intra']:.3f} inter={out['mean_inter']:.3f} "
      f"separation={out['separation']:.3f}")
