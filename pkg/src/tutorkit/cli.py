"""Command-line entry points for the whole pipeline.

Every flag has an environment-variable mirror with the TUTORKIT_ prefix
(e.g. --threshold / TUTORKIT_THRESHOLD); flags win over the environment.
All commands are deterministic under --seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


from tutorkit import astseg, evalharness, overlap, train, vectordb
from tutorkit.corpus import CorpusError, load_corpus
from tutorkit.embed import EmbedderConfig, embed_text, write_heatmap_csv
from tutorkit.tutor import SystemPrompt, TutorConfig, advance_turn, new_session

ENV_PREFIX = "TUTORKIT_"


def _env(name: str, fallback, cast=str):
    raw = os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))
    if raw is None:
        return fallback
    if cast is bool:
        return raw.lower() in ("1", "true", "yes")
    return cast(raw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tutorkit",
        description="Data partitioning, staged fine-tuning, retrieval, and guided tutoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split-data", help="partition a corpus into fine-tune and local sets")
    p.add_argument("--corpus", default=_env("corpus", None), required=_env("corpus", None) is None)
    p.add_argument("--threshold", type=float, default=_env("threshold", overlap.DEFAULT_THRESHOLD, float))
    p.add_argument("--seed", type=int, default=_env("seed", 0, int))
    p.add_argument("--dimension", type=int, default=_env("dimension", 256, int))
    p.add_argument("--net-epochs", type=int, default=_env("net_epochs", 150, int))
    p.add_argument("--net-lr", type=float, default=_env("net_lr", 0.5, float))
    p.add_argument("--out-manifest", default=_env("out_manifest", "partition_manifest.json"))
    p.add_argument("--out-heatmap", default=_env("out_heatmap", "heatmap.csv"))

    p = sub.add_parser("train", help="run the three-phase fine-tuning schedule")
    p.add_argument("--corpus", default=_env("corpus", None), required=_env("corpus", None) is None)
    p.add_argument("--epochs", type=int, default=_env("epochs", 150, int))
    p.add_argument("--lr", type=float, default=_env("lr", 0.4, float))
    p.add_argument("--tau", type=float, default=_env("tau", train.DEFAULT_PRUNE_TAU, float))
    p.add_argument("--lambda", dest="lam", type=float, default=_env("lambda", 0.004, float))
    p.add_argument("--reg-lambda", type=float, default=_env("reg_lambda", 0.05, float))
    p.add_argument("--reg-epochs", type=int, default=_env("reg_epochs", 60, int))
    p.add_argument("--seed", type=int, default=_env("seed", 0, int))
    p.add_argument("--window", type=int, default=_env("window", train.DEFAULT_WINDOW, int))
    p.add_argument("--hidden", type=int, default=_env("hidden", train.DEFAULT_HIDDEN, int))
    p.add_argument("--rank", type=int, default=_env("rank", train.DEFAULT_RANK, int))
    p.add_argument("--single-phase", action="store_true", help="merged ablation baseline")
    p.add_argument("--out-dir", default=_env("out_dir", "runs"))

    p = sub.add_parser("eval", help="run the scripted and adversarial session suites")
    p.add_argument(
        "--variant",
        default=_env("variant", "all"),
        help="comma-separated subset of: " + ",".join(evalharness.VARIANTS) + ", or 'all'",
    )
    p.add_argument("--seeds", default=_env("seeds", "0,1,2"))
    p.add_argument("--sessions", type=int, default=_env("sessions", 1, int))
    p.add_argument("--adversarial-turns", type=int, default=_env("adversarial_turns", 8, int))
    p.add_argument("--format", choices=("text", "structured"), default=_env("format", "text"))

    p = sub.add_parser("build-index", help="embed a corpus into a vector index file")
    p.add_argument("--corpus", default=_env("corpus", None), required=_env("corpus", None) is None)
    p.add_argument("--out", default=_env("out", "knowledge.vdb"))
    p.add_argument("--clusters", type=int, default=_env("clusters", 0, int))
    p.add_argument("--iters", type=int, default=_env("iters", 20, int))
    p.add_argument("--seed", type=int, default=_env("seed", 0, int))
    p.add_argument("--dimension", type=int, default=_env("dimension", 256, int))

    p = sub.add_parser("search", help="query a saved vector index")
    p.add_argument("--index", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, default=_env("k", 4, int))
    p.add_argument("--nprobe", type=int, default=_env("nprobe", 0, int), help="0 = exact search")
    p.add_argument("--format", choices=("text", "structured"), default=_env("format", "text"))

    p = sub.add_parser("segment", help="parse a task source into a subtask plan")
    p.add_argument("--source", default=_env("source", None), required=_env("source", None) is None)
    p.add_argument("--format", choices=("text", "structured"), default=_env("format", "text"))

    p = sub.add_parser("session", help="interactive tutoring loop in the terminal")
    p.add_argument("--source", default=_env("source", None), help="task source file (default: bubble sort)")
    p.add_argument("--backend", default=_env("backend", "cooperative"))
    p.add_argument("--backend-url", default=_env("backend_url", None))
    p.add_argument("--knowledge", default=_env("knowledge", None))
    p.add_argument("--k", type=int, default=_env("k", 4, int))
    p.add_argument("--seed", type=int, default=_env("seed", 0, int))

    p = sub.add_parser("serve", help="run the tutoring HTTP service")
    p.add_argument("--host", default=_env("host", "127.0.0.1"))
    p.add_argument("--port", type=int, default=_env("port", 8000, int))
    p.add_argument("--backend", default=_env("backend", "cooperative"))
    p.add_argument("--backend-url", default=_env("backend_url", None))
    p.add_argument("--knowledge", default=_env("knowledge", None))
    p.add_argument("--static-dir", default=_env("static_dir", None))
    return parser


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_split_data(args) -> int:
    dataset = load_corpus(args.corpus)
    embed_cfg = EmbedderConfig(dimension=args.dimension)
    if dataset.n == 0:
        overlap.write_manifest(
            overlap.PartitionResult(mft=dataset, local=dataset, threshold=args.threshold, scores={}),
            args.out_manifest,
        )
        print(f"empty corpus; wrote empty manifest to {args.out_manifest}")
        return 0
    embeddings = [embed_text(r.content_text(), embed_cfg) for r in dataset]
    pairs = overlap.cosine_training_pairs(embeddings, seed=args.seed)
    net = overlap.train_overlap_net(pairs, epochs=args.net_epochs, lr=args.net_lr, seed=args.seed)
    result = overlap.partition_corpus(dataset, net, args.threshold, args.seed, embed_cfg)
    overlap.write_manifest(result, args.out_manifest)
    print(
        f"partitioned {dataset.n} records: {result.mft.n} fine-tune, "
        f"{result.local.n} local ({result.local.n / dataset.n:.2%})"
    )
    if result.local.n >= 1:
        report = overlap.heatmap_report(
            list(result.mft.records[:10]), list(result.local.records[:10]), embed_cfg
        )
        write_heatmap_csv(args.out_heatmap, report.labels, report.matrix)
        print(
            f"heatmap written to {args.out_heatmap} "
            f"(intra max {max(report.intra_mft_max, report.intra_local_max):.3f}, "
            f"cross max {report.cross_max:.3f})"
        )
    else:
        print("local set empty; skipped heatmap", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    dataset = load_corpus(args.corpus)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab = "".join(sorted({ch for r in dataset for ch in train.render_record(r)}))
    model = train.create_tiny_model(
        vocab, window=args.window, hidden=args.hidden, rank=args.rank, seed=args.seed
    )
    reg_epochs = 0 if args.epochs == 0 else args.reg_epochs
    if args.single_phase:
        total = 3 * args.epochs + reg_epochs
        model, report = train.run_single_phase(model, dataset, epochs=total, lr=args.lr)
        payload = {
            "variant": "single_phase",
            "phases": [{"phase": 1, "losses": report.losses, "records": report.record_ids}],
        }
        checkpoint = out_dir / "model_single.bin"
    else:
        plan = train.PhasePlan(
            phases=(
                train.PhaseSpec(1, frozenset({c for c, ph in _phase_table().items() if ph == 1}), args.epochs, args.lr),
                train.PhaseSpec(2, frozenset({c for c, ph in _phase_table().items() if ph == 2}), args.epochs, args.lr),
                train.PhaseSpec(3, frozenset({c for c, ph in _phase_table().items() if ph == 3}), args.epochs, args.lr),
            )
        )
        model, tp_report = train.run_three_phase(
            model,
            plan,
            dataset,
            prune_tau=args.tau,
            srm=train.SrmConfig(lam=args.lam),
            reg_srm=train.SrmConfig(lam=args.reg_lambda),
            reg_epochs=reg_epochs,
            reg_lr=args.lr,
        )
        payload = {
            "variant": "three_phase",
            "phases": [
                {"phase": r.phase, "losses": r.losses, "records": r.record_ids}
                for r in tp_report.phase_reports
            ],
            "prune": {
                "tau": args.tau,
                "pruned": [list(p) for p in tp_report.prune_report.pruned],
                "params_before": tp_report.params_before_prune,
                "params_after": tp_report.params_after_prune,
            },
            "reg_losses": tp_report.reg_losses,
        }
        checkpoint = out_dir / "model_llm3.bin"
    train.save_model(model, str(checkpoint))
    report_path = out_dir / "phase_report.json"
    report_path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(f"checkpoint written to {checkpoint}")
    print(f"report written to {report_path}")
    return 0


def _phase_table():
    from tutorkit.corpus import DEFAULT_PHASE_TABLE

    return DEFAULT_PHASE_TABLE


def cmd_eval(args) -> int:
    names = (
        list(evalharness.VARIANTS)
        if args.variant == "all"
        else [v.strip() for v in args.variant.split(",") if v.strip()]
    )
    for name in names:
        if name not in evalharness.VARIANTS:
            print(f"unknown variant {name!r}", file=sys.stderr)
            return 1
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    report = evalharness.run_eval(
        names, seeds, sessions_per_seed=args.sessions, adversarial_turns=args.adversarial_turns
    )
    if args.format == "structured":
        print(json.dumps(report.to_json(), indent=2))
    else:
        print(evalharness.format_report(report))
    return 0


def cmd_build_index(args) -> int:
    dataset = load_corpus(args.corpus)
    embed_cfg = EmbedderConfig(dimension=args.dimension)
    index = vectordb.VectorIndex(dim=embed_cfg.dimension)
    for record in dataset:
        text = record.content_text()
        vectordb.add(index, record.id, embed_text(text, embed_cfg), text)
    if args.clusters > 0:
        vectordb.build_clusters(index, args.clusters, iters=args.iters, seed=args.seed)
    vectordb.save_index(index, args.out)
    print(f"indexed {len(index)} records into {args.out} ({index.n_clusters} clusters)")
    return 0


def cmd_search(args) -> int:
    index = vectordb.load_index(args.index)
    query = embed_text(args.query, EmbedderConfig(dimension=index.dim))
    if args.nprobe > 0:
        result = vectordb.search_clustered(index, query, args.k, args.nprobe)
    else:
        result = vectordb.search_exact(index, query, args.k)
    if args.format == "structured":
        print(json.dumps([{"id": h.id, "score": h.score, "payload": h.payload} for h in result.hits]))
    else:
        for hit in result.hits:
            print(f"{hit.score:.4f}  {hit.id}  {hit.payload[:60]}")
    return 0


def cmd_segment(args) -> int:
    source = Path(args.source).read_text(encoding="utf-8")
    plan = astseg.segment(astseg.parse_source(source))
    if args.format == "structured":
        print(json.dumps(plan.to_json(), indent=2))
    else:
        for st in plan.subtasks:
            deps = ",".join(str(d) for d in sorted(st.depends_on)) or "-"
            print(f"{st.index}. [{st.tag.value}] (after {deps}) {st.description}")
    return 0


def _session_backend(args, plan):
    from tutorkit import tutor

    if args.backend_url:
        return tutor.RemoteBackend(args.backend_url)
    if args.backend == "cooperative":
        return tutor.CooperativeBackend(plan)
    if args.backend == "adversarial":
        return tutor.AdversarialBackend(evalharness.BUBBLE_SORT_SOURCE)
    raise ValueError(f"unknown backend {args.backend!r}")


def cmd_session(args) -> int:
    source = (
        Path(args.source).read_text(encoding="utf-8")
        if args.source
        else evalharness.BUBBLE_SORT_SOURCE
    )
    plan = astseg.segment(astseg.parse_source(source))
    backend = _session_backend(args, plan)
    cfg = TutorConfig(retrieval_k=args.k)
    index = None
    if args.knowledge:
        dataset = load_corpus(args.knowledge)
        index = vectordb.VectorIndex(dim=cfg.embed_cfg.dimension)
        for record in dataset:
            text = record.content_text()
            vectordb.add(index, record.id, embed_text(text, cfg.embed_cfg), text)
    system = SystemPrompt()
    state = new_session("terminal", plan)
    print(f"plan has {len(plan)} steps; type your question (ctrl-d or 'quit' to stop)")
    for line in sys.stdin:
        message = line.strip()
        if not message:
            continue
        if message in ("quit", "exit"):
            break
        state, reply = advance_turn(state, message, backend, index, system, cfg)
        verdict = state.last_turn.verdict.value if state.last_turn.verdict else "error"
        print(f"[{verdict}] tutor: {reply}")
        if state.completed:
            print("session complete")
            break
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from tutorkit.service import ServeConfig, create_app

    cfg = ServeConfig(
        backend=args.backend_url or args.backend,
        knowledge_path=args.knowledge,
        static_dir=args.static_dir,
    )
    app = create_app(cfg)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


_COMMANDS = {
    "split-data": cmd_split_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "build-index": cmd_build_index,
    "search": cmd_search,
    "segment": cmd_segment,
    "session": cmd_session,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (CorpusError, astseg.LexError, astseg.ParseSyntaxError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
