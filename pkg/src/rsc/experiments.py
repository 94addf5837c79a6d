"""Experiment runners: PER vs SNR, loss curves, accuracy vs training-set size, category scatter.

Each runner writes a CSV (with the full configuration as ``#`` header
comments) and a standalone SVG figure into ``spec.out_dir``, and returns
the rows it wrote.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .channel import ChannelConfig, QuantizationSpec, transmit_and_recover, write_per_csv
from .embedding import EmbeddingModel, InferenceConfig, InferenceMode, init_model
from .kg import KnowledgeGraph, Triplet, load_dataset
from .reasoning import evaluate_completion
from .training import MarginSchedule, TrainConfig, TrainingSets, TrainResult, train, write_training_log

__all__ = [
    "ExperimentSpec",
    "ScatterPoint",
    "UsageError",
    "train_model",
    "run_per_vs_snr",
    "run_loss_curves",
    "run_acc_vs_trainsize",
    "run_category_scatter",
    "separation_statistic",
    "pca_2d",
    "load_category_map",
]

log = logging.getLogger(__name__)

DEFAULT_SNR_GRID = tuple(float(s) for s in range(0, 21, 2))


class UsageError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    name: str = "experiment"
    train_path: str | None = None
    test_path: str | None = None
    out_dir: str = "out"
    seed: int = 0
    dim: int = 50
    modes: tuple[str, ...] = ("additive", "linear")
    train: TrainConfig = field(default_factory=TrainConfig)
    margin: float = 1.0
    snr_grid: tuple[float, ...] = DEFAULT_SNR_GRID
    packets_per_point: int = 1000
    bits_per_dim: int = 16
    clip_range: float = 1.0
    fractions: tuple[float, ...] = (0.1, 0.25, 0.5, 0.75, 1.0)
    eval_mask: str = "both"
    filtered: bool = False
    max_test: int | None = None
    train_first: bool = True
    stop_on_convergence: bool = True
    # In-memory data, used instead of the paths when given.
    graph: KnowledgeGraph | None = field(default=None, repr=False)
    test: list[Triplet] | None = field(default=None, repr=False)

    def load(self) -> tuple[KnowledgeGraph, list[Triplet]]:
        if self.graph is not None:
            return self.graph, list(self.test or [])
        if self.train_path is None:
            raise UsageError("no dataset given")
        for p in (self.train_path, self.test_path):
            if p is not None and not os.path.exists(p):
                raise UsageError(f"missing dataset file {p}")
        self.graph, self.test = load_dataset(self.train_path, self.test_path)
        return self.graph, self.test

    def config_comments(self, **extra) -> list[str]:
        cfg = {}
        for f in dataclasses.fields(self):
            if f.name in ("graph", "test"):
                continue
            v = getattr(self, f.name)
            cfg[f.name] = dataclasses.asdict(v) if dataclasses.is_dataclass(v) else v
        cfg.update(extra)
        return ["config: " + json.dumps(cfg, sort_keys=True, default=str)]

    def quantization(self) -> QuantizationSpec:
        return QuantizationSpec(self.bits_per_dim, self.clip_range)

    def path(self, filename: str) -> str:
        os.makedirs(self.out_dir, exist_ok=True)
        return os.path.join(self.out_dir, filename)


@dataclass(frozen=True)
class ScatterPoint:
    symbol: str
    category: str
    x: float
    y: float


def train_model(graph: KnowledgeGraph, mode, spec: ExperimentSpec, positives=None) -> tuple[EmbeddingModel, TrainResult]:
    """Fresh model trained on ``positives`` (default: all graph triplets)."""
    model = init_model(graph.n_entities, graph.n_relations, spec.dim, seed=spec.seed,
                       config=InferenceConfig(InferenceMode.parse(mode)))
    sets = TrainingSets(set(positives) if positives is not None else set(graph))
    res = train(model, sets, spec.train, MarginSchedule(spec.margin),
                known_triplets=graph if positives is not None else None,
                stop_on_convergence=spec.stop_on_convergence)
    return model, res


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.fonttype"] = "path"
    plt.rcParams["svg.hashsalt"] = "rsc"
    return plt


def _save_svg(plt, fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _write_csv(path, header, rows, comments):
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def run_per_vs_snr(spec: ExperimentSpec, models: Mapping[str, EmbeddingModel] | None = None,
                   modes: Sequence[str] = ("additive", "multiplicative", "linear"),
                   triplets: Sequence[Triplet] | None = None) -> list[dict]:
    """Packet error rate with and without reasoning-based recovery across the SNR grid.

    Triplets are drawn (with replacement, under ``spec.seed``) from the
    training graph so that ``packets_per_point`` entity packets are sent per
    SNR. Every mode sees the same bit-flip realizations.
    """
    graph, _ = spec.load()
    models = dict(models or {})
    missing = [m for m in modes if m not in models]
    if missing and not spec.train_first:
        raise UsageError(f"no trained model for {missing}; pass models or enable train_first")
    for m in missing:
        models[m], _ = train_model(graph, m, spec)
    if triplets is None:
        pool = graph.triplets
        rng = np.random.default_rng(spec.seed)
        n = max(1, spec.packets_per_point // 2)
        triplets = [pool[i] for i in rng.integers(0, len(pool), size=n)]
    q = spec.quantization()
    ref = models[modes[0]]
    rows, reports = [], []
    for snr in spec.snr_grid:
        ch = ChannelConfig(snr, seed=spec.seed)
        base = transmit_and_recover(ref, graph, triplets, ch, q, recovery="none")
        reports.append((base, "none"))
        rows.append({"snr_db": snr, "mode": "none", "packets": base.packets, "errors": base.errors, "per": base.per})
        for m in modes:
            rep = transmit_and_recover(models[m], graph, triplets, ch, q, recovery="reasoning")
            label = f"reasoning-{m}"
            reports.append((rep, label))
            rows.append({"snr_db": snr, "mode": label, "packets": rep.packets, "errors": rep.errors, "per": rep.per})
    write_per_csv(spec.path("per_vs_snr.csv"), reports, ref.dim, q.bits_per_dim, spec.seed,
                  spec.config_comments(modes=list(modes), n_triplets=len(triplets)))
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for label in ["none"] + [f"reasoning-{m}" for m in modes]:
        pts = [(r["snr_db"], r["per"]) for r in rows if r["mode"] == label]
        ax.plot(*zip(*pts), marker="o" if label == "none" else "s", label=label)
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("packet error rate")
    ax.legend()
    fig.tight_layout()
    _save_svg(plt, fig, spec.path("per_vs_snr.svg"))
    return rows


def run_loss_curves(spec: ExperimentSpec) -> dict[str, TrainResult]:
    """Train each mode in ``spec.modes`` from identical seeds and log mean pair loss per epoch."""
    graph, _ = spec.load()
    results = {}
    for m in spec.modes:
        _, results[m] = train_model(graph, m, spec)
    if "additive" in results and "linear" in results:
        a, b = results["additive"].history[-1], results["linear"].history[-1]
        if not a < b:
            log.warning("additive final loss %.6g is not below linear final loss %.6g", a, b)
    extra = {m: {"epochs": r.epochs, "converged": r.converged} for m, r in results.items()}
    write_training_log(spec.path("loss_curves.csv"), results, spec.config_comments(results=extra))
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for m, r in results.items():
        ax.plot(np.arange(1, r.epochs + 1), r.history, label=m)
    ax.set_xlabel("training iteration (epoch)")
    ax.set_ylabel("mean pair loss")
    ax.legend()
    fig.tight_layout()
    _save_svg(plt, fig, spec.path("loss_curves.svg"))
    return results


def run_acc_vs_trainsize(spec: ExperimentSpec) -> list[dict]:
    """Hits@1 on the test set after training on nested prefixes of the shuffled positives."""
    graph, test = spec.load()
    if not test:
        raise UsageError("accuracy curve needs a test set")
    if any(not 0.0 < f <= 1.0 for f in spec.fractions):
        raise ValueError("training fractions must lie in (0, 1]")
    rng = np.random.default_rng(spec.seed)
    pool = graph.triplets
    order = rng.permutation(len(pool))
    if spec.max_test is not None and spec.max_test < len(test):
        test = [test[i] for i in np.sort(rng.choice(len(test), size=spec.max_test, replace=False))]
    rows = []
    for frac in sorted(spec.fractions):
        n = int(round(frac * len(pool)))
        if n == 0:
            raise ValueError(f"fraction {frac} selects no training triplets")
        subset = [pool[i] for i in order[:n]]
        for m in spec.modes:
            model, res = train_model(graph, m, spec, positives=subset)
            rep = evaluate_completion(model, graph, test, mask=spec.eval_mask, seed=spec.seed, filtered=spec.filtered)
            rows.append({"fraction": frac, "n_train": n, "mode": m, "hits_at_1": rep.hits_at_1,
                         "hits_at_10": rep.hits_at_10, "mean_rank": rep.mean_rank,
                         "n_queries": rep.n_queries, "epochs": res.epochs})
    header = ["fraction", "n_train", "mode", "hits_at_1", "hits_at_10", "mean_rank", "n_queries", "epochs"]
    _write_csv(spec.path("acc_vs_trainsize.csv"), header, [[r[h] for h in header] for r in rows],
               spec.config_comments(n_test=len(test)))
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for m in spec.modes:
        pts = [(r["n_train"], r["hits_at_1"]) for r in rows if r["mode"] == m]
        ax.plot(*zip(*pts), marker="o", label=m)
    ax.set_xlabel("training triplets")
    ax.set_ylabel("recovery accuracy (hits@1)")
    ax.legend()
    fig.tight_layout()
    _save_svg(plt, fig, spec.path("acc_vs_trainsize.svg"))
    return rows


def load_category_map(path) -> dict[str, str]:
    """``symbol<TAB>category`` per line."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected symbol<TAB>category")
            out[parts[0]] = parts[1]
    return out


def pca_2d(points: np.ndarray) -> np.ndarray:
    """Project rows onto their two leading principal components (identity when d == 2)."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[1] == 2:
        return points.copy()
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    proj = centered @ vt[:2].T
    # Fix the sign of each axis so reruns give identical coordinates.
    for j in range(proj.shape[1]):
        k = np.argmax(np.abs(proj[:, j]))
        if proj[k, j] < 0:
            proj[:, j] = -proj[:, j]
    return proj


def separation_statistic(a: np.ndarray, b: np.ndarray) -> tuple[float, float, float]:
    """Return ``(stat, mean_intra, mean_inter)`` with ``stat = (inter - intra) / max(inter, intra)``.

    Intra pools the within-category pairs of both groups; 0/0 is reported as 0.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)

    def within(x):
        d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
        iu = np.triu_indices(len(x), k=1)
        return d[iu]

    intra = np.concatenate([within(a), within(b)]).mean()
    inter = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1).mean()
    denom = max(intra, inter)
    stat = 0.0 if denom == 0.0 else (inter - intra) / denom
    return float(stat), float(intra), float(inter)


def run_category_scatter(spec: ExperimentSpec, categories: Sequence[str], mapping_path=None,
                         model: EmbeddingModel | None = None, mapping: Mapping[str, str] | None = None) -> dict:
    """Embed two categories of entities, project them to 2-D and measure their separation.

    The separation statistic is computed on the full embeddings; the
    projection is only for the figure.
    """
    if len(categories) != 2:
        raise ValueError("exactly two categories are required")
    graph, _ = spec.load()
    if mapping is None:
        if mapping_path is None:
            raise UsageError("a category mapping file is required")
        mapping = load_category_map(mapping_path)
    groups = {c: [s for s in graph.entities if mapping.get(s) == c] for c in categories}
    for c, members in groups.items():
        if len(members) < 2:
            raise ValueError(f"category {c!r} has {len(members)} member(s) in the graph; need >= 2")
    if model is None:
        model, _ = train_model(graph, spec.modes[0], spec)
    vecs = {c: model.entities[[graph.entities.id(s) for s in groups[c]]] for c in categories}
    stat, intra, inter = separation_statistic(vecs[categories[0]], vecs[categories[1]])
    proj = pca_2d(np.concatenate([vecs[c] for c in categories]))
    points, i = [], 0
    for c in categories:
        for s in groups[c]:
            points.append(ScatterPoint(s, c, float(proj[i, 0]), float(proj[i, 1])))
            i += 1
    _write_csv(spec.path("category_scatter.csv"), ["symbol", "category", "x", "y"],
               [[p.symbol, p.category, repr(p.x), repr(p.y)] for p in points],
               spec.config_comments(categories=list(categories), separation=stat, mean_intra=intra, mean_inter=inter))
    plt = _figure()
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for c, marker in zip(categories, ("o", "^")):
        xs = [p.x for p in points if p.category == c]
        ys = [p.y for p in points if p.category == c]
        ax.scatter(xs, ys, marker=marker, label=c, alpha=0.7)
    ax.set_title(f"separation {stat:.3f}")
    ax.legend()
    fig.tight_layout()
    _save_svg(plt, fig, spec.path("category_scatter.svg"))
    return {"points": points, "separation": stat, "mean_intra": intra, "mean_inter": inter}
