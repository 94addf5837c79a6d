import numpy as np
import pytest

from rsc.embedding import EmbeddingModel, InferenceConfig, init_model
from rsc.kg import synthetic_taxonomy, toy_graph
from rsc.training import TrainConfig, TrainingSets, train


@pytest.fixture
def toy():
    return toy_graph()


@pytest.fixture(scope="session")
def taxonomy():
    return synthetic_taxonomy(120, seed=3)


@pytest.fixture(scope="session")
def trained_toy():
    g = toy_graph()
    model = init_model(g.n_entities, g.n_relations, 50, seed=1)
    train(model, TrainingSets(set(g)), TrainConfig(epochs=300, seed=1), stop_on_convergence=False)
    return g, model


@pytest.fixture(scope="session")
def trained_taxonomy(taxonomy):
    g, test, cat = taxonomy
    model = init_model(g.n_entities, g.n_relations, 32, seed=0)
    train(model, TrainingSets(set(g)), TrainConfig(epochs=300, seed=0), stop_on_convergence=False)
    return g, test, cat, model


def translational_model(n_entities=8, n_relations=2, dim=4, mode="additive", seed=0):
    """Model with integer-valued embeddings; scores are exact and ties are common."""
    rng = np.random.default_rng(seed)
    ent = rng.integers(-2, 3, size=(n_entities, dim)).astype(float)
    rel = rng.integers(-2, 3, size=(n_relations, dim)).astype(float)
    return EmbeddingModel(ent, rel, InferenceConfig(mode))


_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" in report.nodeid and "::test_criterion_" in report.nodeid:
        if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
            name = report.nodeid.split("::")[-1]
            _ACCEPTANCE[name] = report.outcome.upper()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda n: int(n.split("_")[2])):
        terminalreporter.write_line(f"{_ACCEPTANCE[name]:7s} {name}")
