"""Negative sampling, margin-ranking loss and SGD training of the embeddings."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .embedding import EmbeddingModel, TripletEmbedding, gradient_vectors, normalize_entities, score_vectors
from .kg import KnowledgeGraph, Triplet

__all__ = [
    "SamplingExhaustedError",
    "TrainingDivergedError",
    "TrainingSets",
    "MarginSchedule",
    "TrainConfig",
    "TrainResult",
    "encode_keys",
    "corrupt",
    "sample_negatives",
    "hinge_loss",
    "pairwise_hinge",
    "sgd_epoch",
    "has_converged",
    "train",
    "write_training_log",
]

POSITIVE = "positive"
NEGATIVE = "negative"


class SamplingExhaustedError(RuntimeError):
    pass


class TrainingDivergedError(FloatingPointError):
    def __init__(self, batch: int, epoch: int | None = None, mode: str | None = None):
        self.batch = batch
        self.epoch = epoch
        self.mode = mode
        where = f"batch {batch}" + (f" of epoch {epoch}" if epoch is not None else "")
        super().__init__(f"non-finite loss at {where}" + (f" ({mode})" if mode else ""))


@dataclass
class TrainingSets:
    """Positive and negative triplet sets; ``labels`` tags triplets for margin lookup."""

    positives: set[Triplet] = field(default_factory=set)
    negatives: set[Triplet] = field(default_factory=set)
    labels: dict[Triplet, str] = field(default_factory=dict)

    def check_disjoint(self) -> None:
        overlap = self.positives & self.negatives
        if overlap:
            raise ValueError(f"{len(overlap)} triplets are both positive and negative")

    def label(self, t: Triplet, default: str) -> str:
        return self.labels.get(t, default)


@dataclass
class MarginSchedule:
    """Hinge margins; ranked per (positive label, negative label) with a default."""

    default_margin: float = 1.0
    table: dict[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        if self.default_margin <= 0 or any(v <= 0 for v in self.table.values()):
            raise ValueError("margins must be > 0")

    def margin(self, pos_label: str = POSITIVE, neg_label: str = NEGATIVE) -> float:
        return self.table.get((pos_label, neg_label), self.default_margin)

    def margins(self, pos_labels: Iterable[str], neg_labels: Iterable[str]) -> np.ndarray:
        return np.array([self.margin(p, n) for p, n in zip(pos_labels, neg_labels)], dtype=np.float64)


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 128
    epochs: int = 1000
    negatives_per_positive: int = 1
    rel_loss_tolerance: float = 1e-4
    patience: int = 10
    seed: int = 0
    # False pairs each positive with draws from the stored negative set instead.
    fresh_negatives: bool = True
    max_retries: int = 100

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 0 or self.patience < 1:
            raise ValueError("batch_size and patience must be >= 1, epochs >= 0")
        if self.negatives_per_positive < 0:
            raise ValueError("negatives_per_positive must be >= 0")
        if not 0.0 < self.rel_loss_tolerance < 1.0:
            raise ValueError("rel_loss_tolerance must lie in (0, 1)")


def encode_keys(arr: np.ndarray, n_entities: int, n_relations: int) -> np.ndarray:
    """Injective int64 key per ``(h, r, t)`` row."""
    arr = np.asarray(arr, dtype=np.int64).reshape(-1, 3)
    return (arr[:, 0] * n_relations + arr[:, 1]) * n_entities + arr[:, 2]


def _member(keys: np.ndarray, sorted_known: np.ndarray) -> np.ndarray:
    if sorted_known.size == 0:
        return np.zeros(keys.shape, dtype=bool)
    pos = np.searchsorted(sorted_known, keys)
    pos = np.minimum(pos, sorted_known.size - 1)
    return sorted_known[pos] == keys


def corrupt(
    positives: np.ndarray,
    n_entities: int,
    n_relations: int,
    known_keys: np.ndarray,
    rng: np.random.Generator,
    max_retries: int = 100,
) -> np.ndarray:
    """Replace the head or tail (50/50) of each row with a random entity.

    Rows that land on a known triplet, or reproduce their source, are redrawn
    (slot choice included) up to ``max_retries`` times.
    """
    src = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    out = src.copy()
    todo = np.arange(len(src))
    for _ in range(max_retries + 1):
        if todo.size == 0:
            return out
        cand = src[todo].copy()
        slot = np.where(rng.random(todo.size) < 0.5, 0, 2)
        cand[np.arange(todo.size), slot] = rng.integers(0, n_entities, size=todo.size)
        bad = _member(encode_keys(cand, n_entities, n_relations), known_keys)
        bad |= np.all(cand == src[todo], axis=1)
        out[todo] = cand
        todo = todo[bad]
    raise SamplingExhaustedError(f"{todo.size} positives have no valid corruption after {max_retries} retries")


def _sorted_array(triplets: Iterable[Triplet]) -> np.ndarray:
    arr = np.array(list(triplets), dtype=np.int64).reshape(-1, 3)
    if len(arr):
        arr = arr[np.lexsort((arr[:, 2], arr[:, 1], arr[:, 0]))]
    return arr


def sample_negatives(
    graph: KnowledgeGraph,
    positives: Iterable[Triplet],
    k_per_positive: int,
    seed: int = 0,
    max_retries: int = 100,
    exclude: Iterable[Triplet] = (),
) -> set[Triplet]:
    """Corrupt each positive ``k_per_positive`` times into triplets absent from ``graph``."""
    if graph.n_entities == 0:
        raise ValueError("graph has no entities")
    pos = _sorted_array(positives)
    if k_per_positive == 0 or len(pos) == 0:
        return set()
    n_e = graph.n_entities
    n_r = max(graph.n_relations, int(pos[:, 1].max()) + 1)
    known = np.concatenate([graph.as_array(), _sorted_array(exclude)])
    known_keys = np.unique(encode_keys(known, n_e, n_r))
    rng = np.random.default_rng(seed)
    neg = corrupt(np.repeat(pos, k_per_positive, axis=0), n_e, n_r, known_keys, rng, max_retries)
    return {Triplet(*map(int, row)) for row in neg}


def _stack(embeds) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(embeds, TripletEmbedding):
        return tuple(np.atleast_2d(np.asarray(v, dtype=np.float64)) for v in embeds)
    embeds = list(embeds)
    if not embeds:
        raise ValueError("empty triplet embedding set")
    return tuple(np.stack([np.asarray(e[i], dtype=np.float64) for e in embeds]) for i in range(3))


def pairwise_hinge(pos_scores, neg_scores, margins) -> np.ndarray:
    """``max(0, f(pos_i) - f(neg_j) + margin_ij)`` for every pair (i, j)."""
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    return np.maximum(0.0, pos_scores[:, None] - neg_scores[None, :] + margins)


def hinge_loss(
    model: EmbeddingModel,
    positives,
    negatives,
    margins: MarginSchedule | None = None,
    pos_labels: list[str] | None = None,
    neg_labels: list[str] | None = None,
) -> float:
    """Exact double-sum margin-ranking loss over all positive x negative pairs.

    ``positives`` and ``negatives`` are sequences of ``TripletEmbedding`` (or
    a ``TripletEmbedding`` of stacked ``(n, d)`` arrays).
    """
    margins = margins or MarginSchedule()
    ph, pr, pt = _stack(positives)
    nh, nr, nt = _stack(negatives)
    if len(ph) == 0 or len(nh) == 0:
        raise ValueError("hinge_loss needs non-empty positive and negative sets")
    fp = score_vectors(model.config, ph, pr, pt)
    fn = score_vectors(model.config, nh, nr, nt)
    if margins.table and (pos_labels or neg_labels):
        pl = pos_labels or [POSITIVE] * len(fp)
        nl = neg_labels or [NEGATIVE] * len(fn)
        m = np.array([[margins.margin(p, n) for n in nl] for p in pl])
    else:
        m = margins.default_margin
    return float(pairwise_hinge(fp, fn, m).sum())


def _epoch_rng(cfg: TrainConfig, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(epoch,)))


def sgd_epoch(
    model: EmbeddingModel,
    sets: TrainingSets,
    cfg: TrainConfig,
    margins: MarginSchedule | None = None,
    *,
    epoch: int = 0,
    known: np.ndarray | None = None,
    positives_array: np.ndarray | None = None,
) -> float:
    """One pass of minibatch SGD over the positives; updates ``model`` in place.

    Each positive is paired with ``negatives_per_positive`` negatives; only
    pairs with a positive hinge contribute gradient. Entities are
    renormalized at the end. Returns the mean per-pair hinge of the epoch.

    ``known`` (sorted int64 keys) and ``positives_array`` let a training loop
    skip recomputing them every epoch.
    """
    margins = margins or MarginSchedule()
    k = cfg.negatives_per_positive
    pos_all = positives_array if positives_array is not None else _sorted_array(sets.positives)
    if len(pos_all) == 0 or k == 0:
        normalize_entities(model)
        return 0.0
    n_e, n_r = model.n_entities, model.n_relations
    if known is None:
        known = np.unique(encode_keys(pos_all, n_e, n_r))
    stored_neg = None
    if not cfg.fresh_negatives:
        stored_neg = _sorted_array(sets.negatives)
        if len(stored_neg) == 0:
            raise ValueError("fresh_negatives=False needs a non-empty negative set")
    use_table = bool(margins.table)
    rng = _epoch_rng(cfg, epoch)
    order = rng.permutation(len(pos_all))
    lr = cfg.learning_rate
    total, n_pairs = 0.0, 0
    for b, start in enumerate(range(0, len(order), cfg.batch_size)):
        pos = np.repeat(pos_all[order[start:start + cfg.batch_size]], k, axis=0)
        if stored_neg is None:
            neg = corrupt(pos, n_e, n_r, known, rng, cfg.max_retries)
        else:
            neg = stored_neg[rng.integers(0, len(stored_neg), size=len(pos))]
        ph, pr, pt = model.entities[pos[:, 0]], model.relations[pos[:, 1]], model.entities[pos[:, 2]]
        nh, nr, nt = model.entities[neg[:, 0]], model.relations[neg[:, 1]], model.entities[neg[:, 2]]
        fp = score_vectors(model.config, ph, pr, pt)
        fn = score_vectors(model.config, nh, nr, nt)
        if use_table:
            m = margins.margins(
                (sets.label(Triplet(*map(int, row)), POSITIVE) for row in pos),
                (sets.label(Triplet(*map(int, row)), NEGATIVE) for row in neg),
            )
        else:
            m = margins.default_margin
        hinge = fp - fn + m
        batch_loss = float(np.maximum(0.0, hinge).sum())
        if not np.isfinite(batch_loss):
            raise TrainingDivergedError(b, epoch, model.mode.value)
        total += batch_loss
        n_pairs += len(pos)
        active = hinge > 0
        if lr == 0.0 or not np.any(active):
            continue
        a_pos, a_neg = pos[active], neg[active]
        gp = gradient_vectors(model.config, ph[active], pr[active], pt[active])
        gn = gradient_vectors(model.config, nh[active], nr[active], nt[active])
        # Gradients are all taken at the pre-step parameters; scatter-add handles repeated ids.
        ent_idx = np.concatenate([a_pos[:, 0], a_pos[:, 2], a_neg[:, 0], a_neg[:, 2]])
        ent_grad = np.concatenate([gp.head, gp.tail, -gn.head, -gn.tail])
        rel_idx = np.concatenate([a_pos[:, 1], a_neg[:, 1]])
        rel_grad = np.concatenate([gp.relation, -gn.relation])
        np.add.at(model.entities, ent_idx, -lr * ent_grad)
        np.add.at(model.relations, rel_idx, -lr * rel_grad)
    normalize_entities(model)
    return total / n_pairs


def has_converged(loss_history, cfg: TrainConfig) -> bool:
    """True when the last ``patience`` relative loss changes are all below tolerance."""
    hist = np.asarray(list(loss_history), dtype=np.float64)
    if len(hist) < cfg.patience + 1:
        return False
    tail = hist[-(cfg.patience + 1):]
    rel = np.abs(np.diff(tail)) / np.maximum(tail[:-1], 1e-12)
    return bool(np.all(rel < cfg.rel_loss_tolerance))


@dataclass
class TrainResult:
    history: list[float]
    converged: bool
    wall_ms: list[float] = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.history)


def train(
    model: EmbeddingModel,
    sets: TrainingSets,
    cfg: TrainConfig,
    margins: MarginSchedule | None = None,
    *,
    known_triplets: Iterable[Triplet] | None = None,
    stop_on_convergence: bool = True,
    epoch_offset: int = 0,
    callback: Callable[[int, float], None] | None = None,
    convergence_signal: Callable[[EmbeddingModel], float] | None = None,
) -> TrainResult:
    """Run ``sgd_epoch`` until ``has_converged`` fires or ``cfg.epochs`` is reached.

    ``convergence_signal``, when given, is evaluated after every epoch and its
    history (instead of the training loss) feeds the convergence test.
    """
    pos_arr = _sorted_array(sets.positives)
    n_e, n_r = model.n_entities, model.n_relations
    known_src = pos_arr if known_triplets is None else np.concatenate([pos_arr, _sorted_array(known_triplets)])
    known = np.unique(encode_keys(known_src, n_e, n_r)) if len(known_src) else np.zeros(0, dtype=np.int64)
    history: list[float] = []
    signal: list[float] = []
    walls: list[float] = []
    converged = False
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        loss = sgd_epoch(model, sets, cfg, margins, epoch=epoch_offset + epoch, known=known, positives_array=pos_arr)
        walls.append((time.perf_counter() - t0) * 1e3)
        history.append(loss)
        if callback is not None:
            callback(epoch + 1, loss)
        signal.append(convergence_signal(model) if convergence_signal is not None else loss)
        if has_converged(signal, cfg):
            converged = True
            if stop_on_convergence:
                break
    return TrainResult(history, converged, walls)


def write_training_log(path, results: Mapping[str, TrainResult], comments: Iterable[str] = ()) -> None:
    """CSV with columns ``epoch, mean_pair_loss, wall_ms, mode``."""
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_pair_loss", "wall_ms", "mode"])
        for mode, res in results.items():
            walls = res.wall_ms or [0.0] * len(res.history)
            for i, (loss, ms) in enumerate(zip(res.history, walls), start=1):
                w.writerow([i, repr(float(loss)), f"{ms:.3f}", mode])
