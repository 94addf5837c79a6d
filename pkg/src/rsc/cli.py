"""Command-line entry points (``rsc <subcommand>``)."""

from __future__ import annotations

import argparse
import glob
import os
import sys

from .channel import ChannelConfig, QuantizationSpec
from .embedding import InferenceConfig, InferenceMode, load_checkpoint, save_checkpoint
from .experiments import (
    DEFAULT_SNR_GRID,
    ExperimentSpec,
    UsageError,
    run_acc_vs_trainsize,
    run_category_scatter,
    run_loss_curves,
    run_per_vs_snr,
    train_model,
)
from .kg import PartialTriplet, load_dataset, make_stream
from .reasoning import complete, evaluate_completion, write_report
from .session import SessionConfig, init_session, run_session, write_trace
from .training import TrainConfig, write_training_log


def resolve_dataset(path: str | None, train: str | None = None, test: str | None = None) -> tuple[str, str | None]:
    """Find train/test files in a dataset directory (``*train*.txt``/``*test*.txt``) or take a file."""
    if train:
        return train, test
    if path is None:
        raise UsageError("--dataset or --train is required")
    if os.path.isfile(path):
        return path, test
    def pick(kind):
        hits = sorted(glob.glob(os.path.join(path, f"*{kind}*.txt")) + glob.glob(os.path.join(path, f"*{kind}*.tsv")))
        return hits[0] if hits else None
    tr = pick("train")
    if tr is None:
        raise UsageError(f"no *train*.txt in {path}")
    return tr, test or pick("test")


def _grid(text: str | None):
    if not text:
        return DEFAULT_SNR_GRID
    if ":" in text:
        lo, hi, step = (float(x) for x in text.split(":"))
        n = int(round((hi - lo) / step)) + 1
        return tuple(lo + i * step for i in range(n))
    return tuple(float(x) for x in text.split(","))


def _spec(args) -> ExperimentSpec:
    train, test = resolve_dataset(args.dataset, args.train, args.test)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                      negatives_per_positive=args.negatives, seed=args.seed)
    modes = tuple(m.strip() for m in (getattr(args, "modes", None) or args.mode).split(","))
    return ExperimentSpec(
        name=args.command, train_path=train, test_path=test, out_dir=args.out, seed=args.seed, dim=args.dim,
        modes=modes, train=cfg, margin=args.margin, snr_grid=_grid(args.snr_grid),
        bits_per_dim=args.bits_per_dim, max_test=args.max_test, filtered=args.filtered,
    )


def cmd_train(args):
    spec = _spec(args)
    graph, test = spec.load()
    print(f"loaded {graph.n_entities} entities, {graph.n_relations} relations, {len(graph)} train / {len(test)} test triplets")
    model, res = train_model(graph, spec.modes[0], spec)
    ckpt = args.checkpoint or spec.path("model.rsc")
    save_checkpoint(model, ckpt)
    write_training_log(spec.path("train_log.csv"), {spec.modes[0]: res}, spec.config_comments())
    print(f"{res.epochs} epochs, final mean pair loss {res.history[-1]:.6g}, converged={res.converged}; saved {ckpt}")


def _load_model(args):
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    return load_checkpoint(args.checkpoint)


def cmd_eval(args):
    spec = _spec(args)
    graph, test = spec.load()
    model = _load_model(args)
    if spec.max_test:
        test = test[: spec.max_test]
    rep = evaluate_completion(model, graph, test, mask=args.mask, seed=args.seed, filtered=args.filtered)
    write_report(spec.path("eval.csv"), rep, model.mode.value, model.dim, args.seed, spec.config_comments())
    print(f"hits@1={rep.hits_at_1:.4f} hits@10={rep.hits_at_10:.4f} mean_rank={rep.mean_rank:.1f} n={rep.n_queries}")


def cmd_complete(args):
    spec = _spec(args)
    graph, _ = spec.load()
    model = _load_model(args)
    h, r, t = args.query
    ids = [None if h == "?" else graph.entities.id(h), None if r == "?" else graph.relations.id(r),
           None if t == "?" else graph.entities.id(t)]
    res = complete(model, graph, PartialTriplet(*ids), top_k=args.top_k)
    missing = [s for s in ("head", "tail", "relation") if getattr(PartialTriplet(*ids), s) is None]
    for fill, score in res.ranked_candidates:
        names = [graph.relations.symbol(v) if s == "relation" else graph.entities.symbol(v) for s, v in zip(missing, fill)]
        print("\t".join(names) + f"\t{score:.6g}")


def cmd_per(args):
    spec = _spec(args)
    models = {}
    if args.checkpoint:
        m = load_checkpoint(args.checkpoint)
        models[m.mode.value] = m
    spec.packets_per_point = args.packets
    rows = run_per_vs_snr(spec, models, modes=spec.modes)
    for r in rows:
        print(f"{r['snr_db']:6.1f} {r['mode']:28s} {r['per']:.4f}")


def cmd_loss_curves(args):
    res = run_loss_curves(_spec(args))
    for m, r in res.items():
        print(f"{m}: {r.history[0]:.4g} -> {r.history[-1]:.4g} in {r.epochs} epochs (converged={r.converged})")


def cmd_acc_curve(args):
    spec = _spec(args)
    spec.fractions = tuple(float(x) for x in args.fractions.split(","))
    for r in run_acc_vs_trainsize(spec):
        print(f"{r['fraction']:5.2f} {r['n_train']:7d} {r['mode']:15s} hits@1={r['hits_at_1']:.4f}")


def cmd_scatter(args):
    spec = _spec(args)
    model = load_checkpoint(args.checkpoint) if args.checkpoint else None
    out = run_category_scatter(spec, args.categories.split(","), args.mapping, model=model)
    print(f"separation={out['separation']:.4f} intra={out['mean_intra']:.4f} inter={out['mean_inter']:.4f}")


def cmd_session(args):
    spec = _spec(args)
    graph, _ = spec.load()
    stream = make_stream(graph, args.slots, args.incomplete_fraction, seed=args.seed, replay_slots=args.replay_slots)
    state = init_session(args.seed, spec.train, SessionConfig(dim=spec.dim, inference=InferenceConfig(InferenceMode.parse(spec.modes[0]))))
    ch = ChannelConfig(args.snr, seed=args.seed)
    trace = run_session(state, stream, ch, QuantizationSpec(spec.bits_per_dim))
    write_trace(spec.path("session_trace.csv"), trace, spec.config_comments(slots=args.slots, snr=args.snr))
    print(f"{len(trace.outcomes)} slots, {trace.retrain_count} retrains, cumulative distance {sum(trace.distances):.6g}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dataset", help="dataset directory or train file")
    common.add_argument("--train", help="train TSV (overrides --dataset)")
    common.add_argument("--test", help="test TSV")
    common.add_argument("--dim", type=int, default=50)
    common.add_argument("--mode", default="additive", help="additive | linear | multiplicative | general")
    common.add_argument("--epochs", type=int, default=1000)
    common.add_argument("--lr", type=float, default=0.01)
    common.add_argument("--batch-size", type=int, default=128)
    common.add_argument("--negatives", type=int, default=1)
    common.add_argument("--margin", type=float, default=1.0)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="out")
    common.add_argument("--snr-grid", help="lo:hi:step or comma list (dB)")
    common.add_argument("--bits-per-dim", type=int, default=16)
    common.add_argument("--checkpoint")
    common.add_argument("--max-test", type=int)
    common.add_argument("--filtered", action="store_true")

    p = argparse.ArgumentParser(prog="rsc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common]).set_defaults(func=cmd_train)
    e = sub.add_parser("eval", parents=[common])
    e.add_argument("--mask", default="both", choices=["head", "tail", "both", "alternating"])
    e.set_defaults(func=cmd_eval)
    c = sub.add_parser("complete", parents=[common])
    c.add_argument("query", nargs=3, metavar=("HEAD", "REL", "TAIL"), help="use ? for missing slots")
    c.add_argument("--top-k", type=int, default=10)
    c.set_defaults(func=cmd_complete)
    pr = sub.add_parser("per", parents=[common])
    pr.add_argument("--modes", default="additive,multiplicative,linear")
    pr.add_argument("--packets", type=int, default=1000)
    pr.set_defaults(func=cmd_per)
    lc = sub.add_parser("loss-curves", parents=[common])
    lc.add_argument("--modes", default="additive,linear")
    lc.set_defaults(func=cmd_loss_curves)
    ac = sub.add_parser("acc-curve", parents=[common])
    ac.add_argument("--modes", default="additive,linear")
    ac.add_argument("--fractions", default="0.1,0.25,0.5,0.75,1.0")
    ac.set_defaults(func=cmd_acc_curve)
    sc = sub.add_parser("scatter", parents=[common])
    sc.add_argument("--categories", default="city,drug")
    sc.add_argument("--mapping", required=True, help="symbol<TAB>category file")
    sc.set_defaults(func=cmd_scatter)
    se = sub.add_parser("session", parents=[common])
    se.add_argument("--slots", type=int, default=10)
    se.add_argument("--replay-slots", type=int, default=0)
    se.add_argument("--incomplete-fraction", type=float, default=0.2)
    se.add_argument("--snr", type=float, default=10.0)
    se.set_defaults(func=cmd_session)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"rsc: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
