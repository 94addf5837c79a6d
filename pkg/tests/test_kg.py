import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsc.kg import (
    DatasetFormatError,
    KnowledgeGraph,
    PartialTriplet,
    Triplet,
    add_triplet,
    load_dataset,
    load_graph,
    make_stream,
    save_graph,
    synthetic_taxonomy,
)


def write(path, rows):
    path.write_text("".join("\t".join(r) + "\n" for r in rows))
    return path


def test_load_dataset_builds_union_vocabulary(tmp_path):
    train = write(tmp_path / "train.txt", [("a", "r1", "b"), ("b", "r2", "c")])
    test = write(tmp_path / "test.txt", [("c", "r1", "d"), ("a", "r3", "b")])
    g, t = load_dataset(train, test)
    assert g.entities.symbols == ["a", "b", "c", "d"]
    assert g.relations.symbols == ["r1", "r2", "r3"]
    assert len(g) == 2
    assert t == [Triplet(2, 0, 3), Triplet(0, 2, 1)]
    assert Triplet(2, 0, 3) not in g


def test_empty_file_gives_empty_graph(tmp_path):
    p = tmp_path / "empty.txt"
    p.write_text("")
    g, t = load_dataset(p, p)
    assert (g.n_entities, g.n_relations, len(g), t) == (0, 0, 0, [])


def test_malformed_line_reports_line_number(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("a\tr\tb\nonly\ttwo\n")
    with pytest.raises(DatasetFormatError) as exc:
        load_dataset(p)
    assert exc.value.lineno == 2


def test_add_triplet_examples():
    g = KnowledgeGraph()
    assert add_triplet(g, (0, 0, 1))
    assert len(g) == 1
    assert not add_triplet(g, (0, 0, 1))
    assert len(g) == 1
    n_before = g.n_entities
    assert add_triplet(g, (0, 0, 2))
    assert g.n_entities == n_before + 1


@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 2), st.integers(0, 6)), max_size=40))
def test_add_triplet_matches_set_semantics(rows):
    g = KnowledgeGraph()
    oracle = set()
    for row in rows:
        inserted = g.add_triplet(row)
        assert inserted == (row not in oracle)
        oracle.add(row)
    assert set(g) == oracle
    assert len(g) == len(oracle)


def test_vocabulary_only_grows():
    g = KnowledgeGraph()
    sizes = []
    for h, r, t in [("x", "p", "y"), ("y", "q", "z"), ("x", "p", "y"), ("w", "p", "x")]:
        g.add_symbols(h, r, t)
        sizes.append((g.n_entities, g.n_relations))
    assert all(a[0] <= b[0] and a[1] <= b[1] for a, b in zip(sizes, sizes[1:]))


def test_save_load_round_trip(tmp_path):
    g, _, _ = synthetic_taxonomy(40, seed=2)
    g.entities.add("isolated")  # vocabulary entry without triplets survives via the sidecar
    save_graph(g, tmp_path / "g.txt")
    h = load_graph(tmp_path / "g.txt")
    assert h.entities == g.entities and h.relations == g.relations
    assert set(h) == set(g)
    assert h.triplets == g.triplets


def test_partial_triplet_validation():
    with pytest.raises(ValueError):
        PartialTriplet(1, 2, 3)
    with pytest.raises(ValueError):
        PartialTriplet()
    q = PartialTriplet(1, None, None)
    assert q.missing == ("relation", "tail")


def graph_of(n):
    g = KnowledgeGraph()
    for i in range(n):
        g.add_triplet((f"e{i}", f"r{i % 3}", f"e{i + 1}"))
    return g


def test_stream_zero_fraction():
    s = make_stream(graph_of(100), 10, 0.0, seed=1)
    assert len(s) == 10
    assert all(len(b.complete) == 10 and not b.partial for b in s)


def test_stream_full_masking_blanks_one_entity():
    g = graph_of(100)
    s = make_stream(g, 1, 1.0, seed=1)
    (b,) = s.slots
    assert len(b.partial) == 100 and not b.complete
    for q, t in zip(b.partial, b.truth):
        assert q.missing in (("head",), ("tail",))
        assert q.relation == t.relation
        assert q.matches(t)


def test_stream_is_deterministic():
    g = graph_of(100)
    assert make_stream(g, 7, 0.3, seed=5) == make_stream(g, 7, 0.3, seed=5)
    assert make_stream(g, 7, 0.3, seed=5) != make_stream(g, 7, 0.3, seed=6)


def test_stream_rejects_bad_fraction():
    with pytest.raises(ValueError):
        make_stream(graph_of(5), 2, 1.5)
    with pytest.raises(ValueError):
        make_stream(graph_of(5), 0, 0.5)


def test_stream_relation_masking_flag():
    s = make_stream(graph_of(30), 3, 1.0, seed=0, mask_slots=("relation",))
    assert all(q.missing == ("relation",) for b in s for q in b.partial)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 60), slots=st.integers(1, 8), frac=st.floats(0, 1), seed=st.integers(0, 99))
def test_stream_partitions_triplets(n, slots, frac, seed):
    g = graph_of(n)
    s = make_stream(g, slots, frac, seed=seed)
    seen = [t for b in s for t in b.complete] + [t for b in s for t in b.truth]
    assert sorted(seen) == sorted(g)
    for b in s:
        assert len(b.partial) == int(np.floor(frac * len(b) + 0.5))
        for q, t in zip(b.partial, b.truth):
            assert q.missing_count == 1 and q.matches(t)
