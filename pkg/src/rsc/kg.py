"""Knowledge-graph vocabularies, triplet storage, dataset files and message streams."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Optional, Sequence, Union

import numpy as np

__all__ = [
    "DatasetFormatError",
    "Triplet",
    "PartialTriplet",
    "Vocabulary",
    "KnowledgeGraph",
    "SlotBatch",
    "MessageStream",
    "load_dataset",
    "load_graph",
    "save_graph",
    "add_triplet",
    "make_stream",
    "toy_graph",
    "synthetic_taxonomy",
]

SLOTS = ("head", "relation", "tail")


class DatasetFormatError(ValueError):
    """A dataset line did not have exactly three tab-separated fields."""

    def __init__(self, path, lineno, line):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: expected 3 tab-separated fields, got {line!r}")


class Triplet(NamedTuple):
    head: int
    relation: int
    tail: int


@dataclass(frozen=True)
class PartialTriplet:
    """A triplet with one or two slots missing (``None``)."""

    head: Optional[int] = None
    relation: Optional[int] = None
    tail: Optional[int] = None

    def __post_init__(self):
        n_missing = self.missing_count
        if n_missing == 0:
            raise ValueError("PartialTriplet needs at least one missing slot")
        if n_missing == 3:
            raise ValueError("PartialTriplet needs at least one present slot")

    @property
    def missing(self) -> tuple[str, ...]:
        return tuple(s for s in SLOTS if getattr(self, s) is None)

    @property
    def missing_count(self) -> int:
        return sum(getattr(self, s) is None for s in SLOTS)

    def matches(self, t: Triplet) -> bool:
        """True if ``t`` agrees with every present slot."""
        return all(getattr(self, s) is None or getattr(self, s) == getattr(t, s) for s in SLOTS)

    @classmethod
    def mask(cls, t: Triplet, slots: Iterable[str]) -> "PartialTriplet":
        values = t._asdict()
        for s in slots:
            values[s] = None
        return cls(**values)


class Vocabulary:
    """Bidirectional symbol <-> id map; ids are assigned in first-seen order."""

    def __init__(self, symbols: Iterable[str] = ()):
        self._symbols: list[str] = []
        self._index: dict[str, int] = {}
        for s in symbols:
            self.add(s)

    def add(self, symbol: str) -> int:
        idx = self._index.get(symbol)
        if idx is None:
            idx = len(self._symbols)
            self._symbols.append(symbol)
            self._index[symbol] = idx
        return idx

    def id(self, symbol: str) -> int:
        return self._index[symbol]

    def get(self, symbol: str, default=None):
        return self._index.get(symbol, default)

    def symbol(self, idx: int) -> str:
        return self._symbols[idx]

    @property
    def symbols(self) -> list[str]:
        return list(self._symbols)

    def __contains__(self, symbol) -> bool:
        return symbol in self._index

    def __len__(self) -> int:
        return len(self._symbols)

    def __iter__(self) -> Iterator[str]:
        return iter(self._symbols)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._symbols == other._symbols

    def copy(self) -> "Vocabulary":
        return Vocabulary(self._symbols)


TripletLike = Union[Triplet, Sequence[Union[int, str]]]


class KnowledgeGraph:
    """Entity and relation vocabularies plus an insertion-ordered set of triplets.

    Vocabularies only grow. The triplet set rejects duplicates.
    """

    def __init__(self, entities: Vocabulary | None = None, relations: Vocabulary | None = None):
        self.entities = entities if entities is not None else Vocabulary()
        self.relations = relations if relations is not None else Vocabulary()
        self._triplets: dict[Triplet, None] = {}
        self._keys: np.ndarray | None = None

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def triplets(self) -> list[Triplet]:
        return list(self._triplets)

    def __len__(self) -> int:
        return len(self._triplets)

    def __contains__(self, t) -> bool:
        return tuple(t) in self._triplets

    def __iter__(self) -> Iterator[Triplet]:
        return iter(self._triplets)

    def _resolve(self, value, vocab: Vocabulary) -> int:
        if isinstance(value, str):
            return vocab.add(value)
        idx = int(value)
        if idx < 0:
            raise ValueError(f"negative id {idx}")
        # Unknown integer ids grow the vocabulary with anonymous symbols.
        while len(vocab) <= idx:
            vocab.add(f"#{len(vocab)}")
        return idx

    def add_triplet(self, t: TripletLike) -> bool:
        """Insert ``t`` (ids or symbols); returns False if it was already present."""
        h, r, o = t
        trip = Triplet(
            self._resolve(h, self.entities),
            self._resolve(r, self.relations),
            self._resolve(o, self.entities),
        )
        if trip in self._triplets:
            return False
        self._triplets[trip] = None
        self._keys = None
        return True

    def add_symbols(self, head: str, relation: str, tail: str) -> bool:
        return self.add_triplet((head, relation, tail))

    def symbols_of(self, t: Triplet) -> tuple[str, str, str]:
        return (self.entities.symbol(t.head), self.relations.symbol(t.relation), self.entities.symbol(t.tail))

    def as_array(self) -> np.ndarray:
        """Triplets as an ``(n, 3)`` int64 array in insertion order."""
        if not self._triplets:
            return np.zeros((0, 3), dtype=np.int64)
        return np.array(list(self._triplets), dtype=np.int64)

    def copy(self) -> "KnowledgeGraph":
        g = KnowledgeGraph(self.entities.copy(), self.relations.copy())
        g._triplets = dict(self._triplets)
        return g


def add_triplet(graph: KnowledgeGraph, t: TripletLike) -> bool:
    """Module-level form of :meth:`KnowledgeGraph.add_triplet`."""
    return graph.add_triplet(t)


def _read_rows(path) -> Iterator[tuple[str, str, str]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DatasetFormatError(path, lineno, line)
            yield parts[0], parts[1], parts[2]


def load_dataset(train_path, test_path=None) -> tuple[KnowledgeGraph, list[Triplet]]:
    """Read tab-separated ``head relation tail`` files.

    The vocabulary spans train and test symbols (first-seen order, train file
    first). Train triplets populate the graph; test triplets are returned
    separately and are not inserted.
    """
    graph = KnowledgeGraph()
    for row in _read_rows(train_path):
        graph.add_triplet(row)
    test: list[Triplet] = []
    if test_path is not None:
        for h, r, o in _read_rows(test_path):
            test.append(Triplet(graph.entities.add(h), graph.relations.add(r), graph.entities.add(o)))
    return graph, test


def _sidecars(path) -> tuple[str, str]:
    path = os.fspath(path)
    return path + ".entities", path + ".relations"


def save_graph(graph: KnowledgeGraph, path) -> None:
    """Write triplets as TSV plus ``.entities``/``.relations`` sidecars (line number = id)."""
    ent_path, rel_path = _sidecars(path)
    with open(path, "w", encoding="utf-8") as fh:
        for t in graph:
            fh.write("\t".join(graph.symbols_of(t)) + "\n")
    for vocab, p in ((graph.entities, ent_path), (graph.relations, rel_path)):
        with open(p, "w", encoding="utf-8") as fh:
            for s in vocab:
                fh.write(s + "\n")


def load_graph(path) -> KnowledgeGraph:
    """Inverse of :func:`save_graph`. Sidecars are optional."""
    ent_path, rel_path = _sidecars(path)
    vocabs = []
    for p in (ent_path, rel_path):
        v = Vocabulary()
        if os.path.exists(p):
            with open(p, encoding="utf-8") as fh:
                for line in fh:
                    v.add(line.rstrip("\r\n"))
        vocabs.append(v)
    graph = KnowledgeGraph(*vocabs)
    for row in _read_rows(path):
        graph.add_triplet(row)
    return graph


@dataclass(frozen=True)
class SlotBatch:
    """Messages arriving in one time slot.

    ``truth[i]`` is the source triplet that ``partial[i]`` was masked from.
    Ids refer to the stream's source vocabulary.
    """

    complete: tuple[Triplet, ...] = ()
    partial: tuple[PartialTriplet, ...] = ()
    truth: tuple[Triplet, ...] = ()

    def __len__(self) -> int:
        return len(self.complete) + len(self.partial)


@dataclass(frozen=True)
class MessageStream:
    slots: tuple[SlotBatch, ...]
    seed: int
    entity_symbols: tuple[str, ...] = field(default=(), repr=False)
    relation_symbols: tuple[str, ...] = field(default=(), repr=False)

    def __len__(self) -> int:
        return len(self.slots)

    def __iter__(self) -> Iterator[SlotBatch]:
        return iter(self.slots)


def _mask_batch(trips: np.ndarray, fraction: float, mask_slots, rng) -> SlotBatch:
    n = len(trips)
    n_partial = int(np.floor(fraction * n + 0.5))
    chosen = np.zeros(n, dtype=bool)
    if n_partial:
        chosen[rng.choice(n, size=n_partial, replace=False)] = True
    which = rng.integers(0, len(mask_slots), size=n)
    complete, partial, truth = [], [], []
    for i, row in enumerate(trips):
        t = Triplet(int(row[0]), int(row[1]), int(row[2]))
        if chosen[i]:
            partial.append(PartialTriplet.mask(t, [mask_slots[which[i]]]))
            truth.append(t)
        else:
            complete.append(t)
    return SlotBatch(tuple(complete), tuple(partial), tuple(truth))


def make_stream(
    graph: KnowledgeGraph,
    slots: int,
    incomplete_fraction: float = 0.0,
    seed: int = 0,
    mask_slots: Sequence[str] = ("head", "tail"),
    replay_slots: int = 0,
    replay_size: int | None = None,
) -> MessageStream:
    """Split the graph's triplets over ``slots`` time slots.

    Triplets are shuffled under ``seed`` and cut into near-equal contiguous
    chunks. In every slot, ``round(incomplete_fraction * n)`` triplets are
    turned into partial triplets by blanking one slot drawn uniformly from
    ``mask_slots``. ``replay_slots`` extra slots resend random samples of
    already-sent triplets (same masking), which is how a stationary
    vocabulary is simulated.
    """
    if slots < 1:
        raise ValueError("slots must be >= 1")
    if not 0.0 <= incomplete_fraction <= 1.0:
        raise ValueError(f"incomplete_fraction must lie in [0, 1], got {incomplete_fraction}")
    mask_slots = tuple(mask_slots)
    if not mask_slots or any(s not in SLOTS for s in mask_slots):
        raise ValueError(f"mask_slots must be a non-empty subset of {SLOTS}")
    rng = np.random.default_rng(seed)
    arr = graph.as_array()
    arr = arr[rng.permutation(len(arr))]
    batches = [_mask_batch(chunk, incomplete_fraction, mask_slots, rng) for chunk in np.array_split(arr, slots)]
    if replay_slots:
        if len(arr) == 0:
            raise ValueError("cannot replay an empty graph")
        size = replay_size if replay_size is not None else max(1, len(arr) // slots)
        for _ in range(replay_slots):
            idx = rng.choice(len(arr), size=min(size, len(arr)), replace=False)
            batches.append(_mask_batch(arr[np.sort(idx)], incomplete_fraction, mask_slots, rng))
    return MessageStream(
        tuple(batches),
        seed,
        tuple(graph.entities.symbols),
        tuple(graph.relations.symbols),
    )


def toy_graph() -> KnowledgeGraph:
    """Eight entities on a line with ``next`` (i -> i+1) and ``skip3`` (i -> i+3).

    12 triplets, 2 relations; a translational embedding fits it exactly.
    """
    g = KnowledgeGraph()
    for i in range(8):
        g.entities.add(f"e{i}")
    for i in range(7):
        g.add_symbols(f"e{i}", "next", f"e{i + 1}")
    for i in range(5):
        g.add_symbols(f"e{i}", "skip3", f"e{i + 3}")
    return g


def synthetic_taxonomy(
    n_entities: int = 200,
    branching: int = 4,
    test_fraction: float = 0.1,
    seed: int = 0,
) -> tuple[KnowledgeGraph, list[Triplet], dict[str, str]]:
    """A WordNet-flavoured random tree for offline experiments.

    Each node links to its parent with ``_hypernym`` and back with
    ``_hyponym``; siblings are joined by ``_also_see`` with probability 0.3.
    Returns (train graph, held-out test triplets, category map) where the
    category of a node is the root child whose subtree contains it.
    """
    rng = np.random.default_rng(seed)
    parent = [-1]
    for node in range(1, n_entities):
        # Attach preferentially to recent nodes so the tree is not a star.
        lo = max(0, (node - 1) // branching - branching)
        parent.append(int(rng.integers(lo, node)))
    names = [f"n{idx:05d}" for idx in range(n_entities)]
    rows: list[tuple[str, str, str]] = []
    children: dict[int, list[int]] = {}
    for node in range(1, n_entities):
        p = parent[node]
        children.setdefault(p, []).append(node)
        rows.append((names[node], "_hypernym", names[p]))
        rows.append((names[p], "_hyponym", names[node]))
    for kids in children.values():
        for i, a in enumerate(kids):
            for b in kids[i + 1:]:
                if rng.random() < 0.3:
                    rows.append((names[a], "_also_see", names[b]))
    category: dict[str, str] = {}
    for node in range(1, n_entities):
        top = node
        while parent[top] != 0:
            top = parent[top]
        category[names[node]] = f"c{top}"
    order = rng.permutation(len(rows))
    n_test = int(round(test_fraction * len(rows)))
    graph = KnowledgeGraph()
    for s in names:
        graph.entities.add(s)
    for rel in ("_hypernym", "_hyponym", "_also_see"):
        graph.relations.add(rel)
    test_idx = set(order[:n_test].tolist())
    test = []
    for i, (h, r, o) in enumerate(rows):
        if i in test_idx:
            test.append(Triplet(graph.entities.id(h), graph.relations.id(r), graph.entities.id(o)))
        else:
            graph.add_symbols(h, r, o)
    return graph, test, category
