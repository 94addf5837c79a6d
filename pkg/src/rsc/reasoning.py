"""Triplet completion by argmin of the inference function, ranking metrics, semantic distance."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .embedding import EmbeddingModel, score_vectors
from .kg import KnowledgeGraph, PartialTriplet, Triplet

__all__ = [
    "NoCandidateError",
    "CompletionResult",
    "RankingReport",
    "candidate_scores",
    "complete",
    "evaluate_completion",
    "graph_score",
    "semantic_distance",
    "abs_semantic_distance",
    "write_report",
]

# Elements per scoring chunk; bounds peak memory of cross-product completion.
_CHUNK_ELEMS = 1 << 22


class NoCandidateError(LookupError):
    pass


@dataclass(frozen=True)
class CompletionResult:
    completed: Triplet
    score: float
    ranked_candidates: tuple[tuple[tuple[int, ...], float], ...]


@dataclass(frozen=True)
class RankingReport:
    hits_at_1: float
    hits_at_10: float
    mean_rank: float
    n_queries: int


def _slot_order(query: PartialTriplet) -> tuple[str, ...]:
    """Missing slots in tie-break priority: entity slots (head, tail) before relation."""
    return tuple(s for s in ("head", "tail", "relation") if getattr(query, s) is None)


def candidate_scores(model: EmbeddingModel, query: PartialTriplet) -> tuple[np.ndarray, tuple[str, ...], tuple[int, ...]]:
    """Scores of every fill-in, flattened in lexicographic candidate order.

    Returns ``(scores, missing_slots, sizes)``; flat index ``i`` decodes with
    ``np.unravel_index(i, sizes)`` into ids for ``missing_slots``.
    """
    missing = _slot_order(query)
    sizes = tuple(model.n_relations if s == "relation" else model.n_entities for s in missing)
    if any(n == 0 for n in sizes):
        raise NoCandidateError(f"no candidates for slot(s) {missing}")
    E, R = model.entities, model.relations
    cfg = model.config

    def fixed(slot):
        idx = getattr(query, slot)
        return (R if slot == "relation" else E)[idx]

    if len(missing) == 1:
        (slot,) = missing
        table = R if slot == "relation" else E
        vec = {s: (table if s == slot else fixed(s)[None, :]) for s in ("head", "relation", "tail")}
        return score_vectors(cfg, vec["head"], vec["relation"], vec["tail"]), missing, sizes

    outer, inner = missing
    (present,) = [s for s in ("head", "relation", "tail") if s not in missing]
    outer_table = R if outer == "relation" else E
    inner_table = R if inner == "relation" else E
    rows = max(1, _CHUNK_ELEMS // max(1, inner_table.shape[0] * model.dim))
    p_vec = fixed(present)[None, None, :]
    parts = []
    for start in range(0, outer_table.shape[0], rows):
        chunk = {
            outer: outer_table[start:start + rows][:, None, :],
            inner: inner_table[None, :, :],
            present: p_vec,
        }
        parts.append(score_vectors(cfg, chunk["head"], chunk["relation"], chunk["tail"]).reshape(-1))
    return np.concatenate(parts), missing, sizes


def _fill(query: PartialTriplet, missing, ids) -> Triplet:
    values = {"head": query.head, "relation": query.relation, "tail": query.tail}
    for s, v in zip(missing, ids):
        values[s] = int(v)
    return Triplet(values["head"], values["relation"], values["tail"])


def _top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest scores, ascending, ties by lowest index."""
    k = min(k, scores.size)
    if k < scores.size:
        kth = np.partition(scores, k - 1)[k - 1]
        idx = np.flatnonzero(scores <= kth)
    else:
        idx = np.arange(scores.size)
    return idx[np.argsort(scores[idx], kind="stable")][:k]


def complete(model: EmbeddingModel, graph: KnowledgeGraph | None, query: PartialTriplet, top_k: int = 10) -> CompletionResult:
    """Fill the missing slot(s) of ``query`` with the argmin of the inference function.

    Candidates are every entity (and relation, if missing) known to the
    model; two missing slots search the full cross product. Ties go to the
    lowest entity id, then the lowest relation id.
    """
    if graph is not None and (model.n_entities < graph.n_entities or model.n_relations < graph.n_relations):
        raise ValueError("model does not cover the graph vocabulary")
    scores, missing, sizes = candidate_scores(model, query)
    best = _top_k(scores, max(1, top_k))
    ranked = tuple(
        (tuple(int(v) for v in np.unravel_index(i, sizes)), float(scores[i])) for i in best
    )
    completed = _fill(query, missing, ranked[0][0])
    return CompletionResult(completed, ranked[0][1], ranked)


def _queries(test: Sequence[Triplet], mask: str, seed: int):
    if mask == "head":
        return [(t, "head") for t in test]
    if mask == "tail":
        return [(t, "tail") for t in test]
    if mask == "both":
        return [(t, s) for t in test for s in ("head", "tail")]
    if mask == "alternating":
        rng = np.random.default_rng(seed)
        picks = rng.integers(0, 2, size=len(test))
        return [(t, "head" if p == 0 else "tail") for t, p in zip(test, picks)]
    raise ValueError(f"unknown mask policy {mask!r}")


def evaluate_completion(
    model: EmbeddingModel,
    graph: KnowledgeGraph | None,
    test: Sequence[Triplet],
    mask: str = "both",
    seed: int = 0,
    filtered: bool = False,
    known: Iterable[Triplet] | None = None,
) -> RankingReport:
    """Mask each test triplet's head and/or tail, complete it, and rank the truth.

    ``mask`` is ``head``, ``tail``, ``both`` (two queries per triplet) or
    ``alternating`` (head or tail per triplet, drawn under ``seed``). The rank
    uses the same tie-break as :func:`complete`, so hits@1 means the
    completion returned the masked id. ``filtered`` drops candidates that
    form other known triplets (graph, ``known`` and the test set itself).
    """
    test = list(test)
    if not test:
        raise ValueError("empty test set")
    known_by_query: dict[tuple, set[int]] = {}
    if filtered:
        pool = set(test)
        if graph is not None:
            pool.update(graph)
        if known is not None:
            pool.update(known)
        for h, r, t in pool:
            known_by_query.setdefault(("head", r, t), set()).add(h)
            known_by_query.setdefault(("tail", h, r), set()).add(t)
    ranks = []
    for t, slot in _queries(test, mask, seed):
        query = PartialTriplet(None, t.relation, t.tail) if slot == "head" else PartialTriplet(t.head, t.relation, None)
        scores, _, _ = candidate_scores(model, query)
        truth = t.head if slot == "head" else t.tail
        if filtered:
            key = ("head", t.relation, t.tail) if slot == "head" else ("tail", t.head, t.relation)
            others = [i for i in known_by_query.get(key, ()) if i != truth]
            if others:
                scores = scores.copy()
                scores[others] = np.inf
        s_true = scores[truth]
        rank = 1 + int(np.count_nonzero(scores < s_true)) + int(np.count_nonzero(scores[:truth] == s_true))
        ranks.append(rank)
    ranks = np.array(ranks)
    return RankingReport(
        hits_at_1=float(np.mean(ranks == 1)),
        hits_at_10=float(np.mean(ranks <= 10)),
        mean_rank=float(ranks.mean()),
        n_queries=len(ranks),
    )


def _scores(model: EmbeddingModel, triplets: Iterable[Triplet]) -> list[float]:
    arr = np.array(list(triplets), dtype=np.int64).reshape(-1, 3)
    if len(arr) == 0:
        return []
    E, R = model.entities, model.relations
    return score_vectors(model.config, E[arr[:, 0]], R[arr[:, 1]], E[arr[:, 2]]).tolist()


def graph_score(model: EmbeddingModel, triplets: Iterable[Triplet]) -> float:
    """Sum of inference scores over a triplet set (correctly rounded)."""
    return math.fsum(_scores(model, triplets))


def semantic_distance(model: EmbeddingModel, a: Iterable[Triplet], b: Iterable[Triplet]) -> float:
    """``graph_score(a) - graph_score(b)``, signed.

    Evaluated as one correctly rounded sum of ``a``'s scores and ``b``'s
    negated scores, so shared triplets cancel exactly.
    """
    return math.fsum(_scores(model, a) + [-s for s in _scores(model, b)])


def abs_semantic_distance(model: EmbeddingModel, a: Iterable[Triplet], b: Iterable[Triplet]) -> float:
    return abs(semantic_distance(model, a, b))


def write_report(path, report: RankingReport, mode: str, dim: int, seed: int, comments: Iterable[str] = ()) -> None:
    """CSV with columns ``metric, value, n_queries, mode, dim, seed``."""
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["metric", "value", "n_queries", "mode", "dim", "seed"])
        for metric in ("hits_at_1", "hits_at_10", "mean_rank"):
            w.writerow([metric, repr(getattr(report, metric)), report.n_queries, mode, dim, seed])
