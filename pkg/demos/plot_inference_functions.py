"""
Inference functions on a toy graph
==================================

Score a handful of triplets under the three named inference functions
and check that the general form reduces to each of them.
"""

import numpy as np

from rsc import EmbeddingModel, GeneralConstants, InferenceConfig, InferenceMode, TripletEmbedding, score

###############################################################################
# A single triplet embedding. Lower scores mean "more plausible".
h = np.array([1.0, 2.0, 3.0])
r = np.array([4.0, 5.0, 6.0])
t = np.array([1.0, 1.0, 1.0])
emb = TripletEmbedding(h, r, t)

for mode in (InferenceMode.ADDITIVE_L1, InferenceMode.LINEAR_L2, InferenceMode.MULTIPLICATIVE):
    model = EmbeddingModel(np.zeros((1, 3)), np.zeros((1, 3)), InferenceConfig(mode))
    print(f"{mode.value:15s} f = {score(model, emb):g}")

###############################################################################
# The general family with only the trilinear coefficient set is the
# multiplicative score.
only_trilinear = GeneralConstants(a_mul=-1.0)
general = EmbeddingModel(np.zeros((1, 3)), np.zeros((1, 3)), InferenceConfig(InferenceMode.GENERAL, only_trilinear))
print("general(a''=-1) =", score(general, emb))
