import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from rsc.embedding import EmbeddingModel, InferenceConfig
from rsc.experiments import (
    ExperimentSpec,
    UsageError,
    load_category_map,
    pca_2d,
    run_acc_vs_trainsize,
    run_category_scatter,
    run_loss_curves,
    run_per_vs_snr,
    separation_statistic,
)
from rsc.kg import save_graph, toy_graph
from rsc.training import TrainConfig, TrainingDivergedError


def read_csv(path):
    lines = open(path).read().splitlines()
    comments = [l for l in lines if l.startswith("#")]
    return comments, list(csv.DictReader(l for l in lines if not l.startswith("#")))


def assert_svg(path):
    root = ET.parse(path).getroot()
    assert root.tag.endswith("svg")
    text = open(path).read()
    assert "xlink:href=\"http" not in text and "<image" not in text


def config_of(comments):
    (line,) = [c for c in comments if c.startswith("# config: ")]
    return json.loads(line[len("# config: "):])


@pytest.fixture
def toy_spec(tmp_path):
    return ExperimentSpec(name="t", out_dir=str(tmp_path), dim=30, graph=toy_graph(),
                          train=TrainConfig(epochs=300, seed=0), snr_grid=(-4.0, 0.0, 20.0), packets_per_point=200)


def test_per_vs_snr_shape(toy_spec, tmp_path):
    rows = run_per_vs_snr(toy_spec, modes=("additive", "multiplicative", "linear"))
    assert len(rows) == 3 * 4
    by = {(r["snr_db"], r["mode"]): r for r in rows}
    for snr in toy_spec.snr_grid:
        base = by[(snr, "none")]
        assert base["packets"] == 200
        for m in ("additive", "multiplicative", "linear"):
            assert by[(snr, f"reasoning-{m}")]["errors"] <= base["errors"]
    assert all(by[(20.0, m)]["per"] == 0.0 for m in ("none", "reasoning-additive"))
    comments, csv_rows = read_csv(tmp_path / "per_vs_snr.csv")
    cfg = config_of(comments)
    assert cfg["seed"] == 0 and cfg["snr_grid"] == [-4.0, 0.0, 20.0]
    assert {r["mode"] for r in csv_rows} == {"none", "reasoning-additive", "reasoning-multiplicative", "reasoning-linear"}
    assert_svg(tmp_path / "per_vs_snr.svg")


def test_per_rerun_identical(toy_spec, tmp_path):
    run_per_vs_snr(toy_spec, modes=("additive",))
    first_csv = (tmp_path / "per_vs_snr.csv").read_bytes()
    first_svg = (tmp_path / "per_vs_snr.svg").read_bytes()
    run_per_vs_snr(toy_spec, modes=("additive",))
    assert (tmp_path / "per_vs_snr.csv").read_bytes() == first_csv
    assert (tmp_path / "per_vs_snr.svg").read_bytes() == first_svg


def test_per_requires_model_or_train_first(toy_spec):
    toy_spec.train_first = False
    with pytest.raises(UsageError):
        run_per_vs_snr(toy_spec, modes=("additive",))


def test_loss_curves(toy_spec, tmp_path):
    toy_spec.stop_on_convergence = False
    res = run_loss_curves(toy_spec)
    assert set(res) == {"additive", "linear"}
    for r in res.values():
        assert r.history[-1] < r.history[0]
    _, rows = read_csv(tmp_path / "loss_curves.csv")
    assert len(rows) == 600
    assert_svg(tmp_path / "loss_curves.svg")


def test_loss_curves_one_epoch(toy_spec, tmp_path):
    toy_spec.train = TrainConfig(epochs=1)
    run_loss_curves(toy_spec)
    _, rows = read_csv(tmp_path / "loss_curves.csv")
    assert sorted(r["mode"] for r in rows) == ["additive", "linear"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_loss_curves_propagates_divergence(toy_spec):
    toy_spec.train = TrainConfig(epochs=50, learning_rate=1e200)
    toy_spec.modes = ("linear",)
    with pytest.raises(TrainingDivergedError) as exc:
        run_loss_curves(toy_spec)
    assert exc.value.mode == "linear"


def test_acc_vs_trainsize(taxonomy, tmp_path):
    g, test, _ = taxonomy
    spec = ExperimentSpec(out_dir=str(tmp_path), dim=32, graph=g, test=test, fractions=(0.1, 1.0),
                          train=TrainConfig(epochs=200, seed=0))
    rows = run_acc_vs_trainsize(spec)
    assert len(rows) == 4
    for m in spec.modes:
        lo, hi = (r["hits_at_1"] for r in rows if r["mode"] == m)
        assert hi >= lo - 0.03
    assert rows[-1]["n_train"] == len(g)
    assert_svg(tmp_path / "acc_vs_trainsize.svg")
    spec.fractions = (0.0, 1.0)
    with pytest.raises(ValueError):
        run_acc_vs_trainsize(spec)


def test_separation_examples():
    a = np.tile([1.0, 0.0, 0.0], (5, 1)) + 1e-3 * np.arange(5)[:, None]
    b = -a
    stat, intra, inter = separation_statistic(a, b)
    assert stat > 0.9 and inter > intra
    same = np.ones((4, 3))
    assert separation_statistic(same, same) == (0.0, 0.0, 0.0)


def test_pca_projection():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(20, 5))
    proj = pca_2d(pts)
    assert proj.shape == (20, 2)
    np.testing.assert_allclose(proj.mean(axis=0), 0.0, atol=1e-12)
    assert np.var(proj[:, 0]) >= np.var(proj[:, 1])
    assert np.array_equal(pca_2d(pts[:, :2]), pts[:, :2])


def test_category_scatter_constructed(tmp_path):
    g = toy_graph()
    ent = np.zeros((8, 4))
    ent[:4, 0] = 1.0
    ent[4:, 0] = -1.0
    ent[:, 1] = 0.01 * np.arange(8)
    model = EmbeddingModel(ent, np.zeros((2, 4)), InferenceConfig())
    mapping_file = tmp_path / "cats.tsv"
    mapping_file.write_text("".join(f"e{i}\t{'city' if i < 4 else 'drug'}\n" for i in range(8)))
    spec = ExperimentSpec(out_dir=str(tmp_path), graph=g)
    out = run_category_scatter(spec, ["city", "drug"], mapping_path=mapping_file, model=model)
    assert out["separation"] > 0.9
    xs = {c: [p.x for p in out["points"] if p.category == c] for c in ("city", "drug")}
    assert max(xs["city"]) < min(xs["drug"]) or max(xs["drug"]) < min(xs["city"])
    _, rows = read_csv(tmp_path / "category_scatter.csv")
    assert len(rows) == 8 and all(np.isfinite(float(r["x"])) for r in rows)
    assert_svg(tmp_path / "category_scatter.svg")


def test_category_scatter_errors(tmp_path):
    spec = ExperimentSpec(out_dir=str(tmp_path), graph=toy_graph())
    with pytest.raises(ValueError):
        run_category_scatter(spec, ["city", "drug"], mapping={"e0": "city", "e1": "drug", "e2": "drug"})
    with pytest.raises(UsageError):
        run_category_scatter(spec, ["city", "drug"])
    bad = tmp_path / "bad.tsv"
    bad.write_text("e0 city\n")
    with pytest.raises(ValueError):
        load_category_map(bad)


def test_spec_loads_from_files(tmp_path):
    save_graph(toy_graph(), tmp_path / "train.txt")
    spec = ExperimentSpec(train_path=str(tmp_path / "train.txt"), out_dir=str(tmp_path))
    g, test = spec.load()
    assert len(g) == 12 and test == []
    with pytest.raises(UsageError):
        ExperimentSpec(train_path=str(tmp_path / "nope.txt")).load()
