"""Command-line interface: ingest, segment, summarize, run-matrix, judge, serve."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import embed, judge as judge_mod, kb as kb_mod, retrieve, seglog, summarize
from ._data import data_ref
from .errors import LcragError

BUNDLED_CORPORA = {
    "bundled:corpus": "corpus",
    "bundled:condensed": "condensed",
    "bundled:eval3": "eval3",
}


def _resolve_corpus(value: str) -> Path:
    if value in BUNDLED_CORPORA:
        return Path(str(data_ref(BUNDLED_CORPORA[value])))
    return Path(value)


def _cmd_ingest(args) -> int:
    params = kb_mod.ChunkingParams(
        target_len=args.target_len, overlap=args.overlap,
        boundary_mode=args.boundary_mode)
    kb = kb_mod.ingest_corpus(_resolve_corpus(args.corpus), params, args.embedder)
    kb_mod.save_kb(kb, args.out)
    print(f"ingested {len(kb)} chunks into {args.out} "
          f"(kb_id={kb.kb_id}, embedder={kb.embedder_id}, dim={kb.dim})")
    return 0


def _cmd_embedders_list(_args) -> int:
    for spec in embed.list_embedders():
        name = spec.display_name or spec.embedder_id
        print(f"{spec.embedder_id:36s} dim={spec.dim:<5d} endpoint={spec.endpoint} "
              f"({name})")
    return 0


def _cmd_segment(args) -> int:
    parsed = seglog.parse_log(args.log)
    for warning in parsed.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    utterances = seglog.parse_transcript(args.transcript)
    segments = seglog.segment(parsed.actions, utterances)
    seglog.save_segments(segments, args.out)
    print(f"wrote {len(segments)} segments to {args.out} "
          f"({len(parsed.actions)} actions, {len(utterances)} utterances)")
    return 0


def _cmd_stats(args) -> int:
    segments = seglog.load_segments(args.segments)
    stats = seglog.segment_stats(segments)
    for context, row in stats.items():
        print(f"{context:36s} count={row['count']:<4d} "
              f"mean_discourse_chars={row['mean_discourse_chars']:.1f}")
    return 0


def _cmd_summarize(args) -> int:
    segments = seglog.load_segments(args.segments)
    spec = summarize.load_llm_spec(args.llm)
    summaries = [
        summarize.summarize_segment(seg, spec, template_id=args.template)
        for seg in segments
    ]
    summarize.save_summaries(summaries, args.out)
    print(f"wrote {len(summaries)} summaries to {args.out}")
    return 0


def _cmd_run_matrix(args) -> int:
    segments = seglog.load_segments(args.segments)
    summaries = {s.segment_id: s for s in summarize.load_summaries(args.summaries)}
    specs = [embed.get_spec(e) for e in args.embedders.split(",")]
    kb_dir = Path(args.kb_dir)
    kbs = {}
    for spec in specs:
        path = kb_dir / f"{spec.embedder_id}.kb.jsonl"
        if not path.exists():
            print(f"error: no kb for {spec.embedder_id} at {path}", file=sys.stderr)
            return 2
        kbs[spec.embedder_id] = kb_mod.load_kb(path)
    pairs = retrieve.run_matrix(segments, specs, kbs, summaries, out_path=args.out)
    report = retrieve.unique_chunk_report(pairs)
    print(f"{len(pairs)} retrieval pairs ({2 * len(pairs)} retrievals) in {args.out}")
    print(f"unique chunks: lcrag={report['lcrag_unique']} "
          f"baseline={report['baseline_unique']}")
    return 0


def _cmd_judge(args) -> int:
    pairs = retrieve.load_pairs(args.pairs)
    templates = judge_mod.load_judge_templates(args.templates)
    spec = summarize.load_llm_spec(args.llm)
    chunk_texts = kb_mod.load_kb(args.kb).chunk_texts()
    contexts = {}
    if args.segments:
        contexts = {s.id: s.context for s in seglog.load_segments(args.segments)}
    outcomes = []
    for pair in pairs:
        outcomes.append(judge_mod.judge_pair(
            pair, templates, spec, args.seed, chunk_texts,
            context=contexts.get(pair.segment_id, seglog.TaskContext.UNCLASSIFIED)))
    judge_mod.save_outcomes(outcomes, args.out)
    print(f"judged {len(outcomes)} pairs -> {args.out}")
    return 0


def _cmd_report(args) -> int:
    outcomes = judge_mod.load_outcomes(args.outcomes)
    by_embedder = {}
    for o in outcomes:
        by_embedder.setdefault(o.embedder_id, []).append(o)
    n = len(next(iter(by_embedder.values())))
    report = judge_mod.win_rates(outcomes, n)
    print(judge_mod.render_report(report))
    if args.json:
        Path(args.json).write_text(
            json.dumps(judge_mod.report_to_record(report), indent=2) + "\n",
            encoding="utf-8")
        print(f"wrote machine-readable report to {args.json}")
    return 0


def _cmd_qwk(args) -> int:
    def read_ratings(path):
        return [int(line) for line in Path(path).read_text().split()]

    value = judge_mod.qwk(read_ratings(args.a), read_ratings(args.b), args.k)
    print(f"QWK = {value:.4f}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .copa import CopaService
    from .server import create_app

    kb = kb_mod.load_kb(args.kb)
    service = CopaService(
        kb=kb,
        llm_spec=summarize.load_llm_spec(args.llm),
        embedder_spec=embed.get_spec(args.embedder),
        event_log_path=args.event_log,
        window=args.window,
        top_k=args.k,
        deterministic=args.deterministic,
    )
    app = create_app(service)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lcrag",
        description="Log-contextualized RAG: ingest, segment, evaluate, serve.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="chunk and embed a corpus into a kb store")
    p.add_argument("--corpus", required=True,
                   help="corpus directory (or bundled:corpus / bundled:condensed)")
    p.add_argument("--out", required=True)
    p.add_argument("--embedder", default="hash-64")
    p.add_argument("--target-len", type=int, default=1000, dest="target_len")
    p.add_argument("--overlap", type=int, default=100)
    p.add_argument("--boundary-mode", default="paragraph", dest="boundary_mode",
                   choices=["paragraph", "sentence", "fixed"])
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("embedders", help="embedding model registry")
    emb_sub = p.add_subparsers(dest="embedders_command", required=True)
    pl = emb_sub.add_parser("list", help="print known embedder specs")
    pl.set_defaults(func=_cmd_embedders_list)

    p = sub.add_parser("segment", help="segment an action log + transcript")
    p.add_argument("--log", required=True)
    p.add_argument("--transcript", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("stats", help="per-context segment statistics")
    p.add_argument("segments")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("summarize", help="summarize segments with an LLM")
    p.add_argument("--segments", required=True)
    p.add_argument("--llm", required=True, help="path to an LlmSpec json file")
    p.add_argument("--template", default="segment_v1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("run-matrix", help="run both retrieval arms over embedders")
    p.add_argument("--segments", required=True)
    p.add_argument("--summaries", required=True)
    p.add_argument("--kb-dir", required=True, dest="kb_dir",
                   help="directory holding <embedder_id>.kb.jsonl stores")
    p.add_argument("--embedders", required=True, help="comma-separated embedder ids")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_run_matrix)

    p = sub.add_parser("judge", help="LLM-as-a-judge over retrieval pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--templates", default=None,
                   help="template directory (default: bundled three)")
    p.add_argument("--llm", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kb", required=True, help="kb store used to resolve chunk texts")
    p.add_argument("--segments", default=None,
                   help="segments file to attach task contexts")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_judge)

    p = sub.add_parser("report", help="win/loss/tie table and context breakdown")
    p.add_argument("--outcomes", required=True)
    p.add_argument("--json", default=None, help="also write machine-readable json")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("qwk", help="quadratic weighted kappa between two raters")
    p.add_argument("--a", required=True, help="ratings file, one integer per line")
    p.add_argument("--b", required=True)
    p.add_argument("--k", type=int, default=3, help="category count")
    p.set_defaults(func=_cmd_qwk)

    # flags win over LCRAG_* env vars, which win over the built-in defaults
    env = os.environ
    p = sub.add_parser("serve", help="run the Copa session service")
    p.add_argument("--kb", default=env.get("LCRAG_KB"),
                   required="LCRAG_KB" not in env)
    p.add_argument("--llm", default=env.get("LCRAG_LLM"),
                   required="LCRAG_LLM" not in env)
    p.add_argument("--embedder", default=env.get("LCRAG_EMBEDDER", "hash-64"))
    p.add_argument("--port", type=int, default=int(env.get("LCRAG_PORT", 8470)))
    p.add_argument("--host", default=env.get("LCRAG_HOST", "127.0.0.1"))
    p.add_argument("--window", type=int, default=int(env.get("LCRAG_WINDOW", 6)))
    p.add_argument("--k", type=int, default=int(env.get("LCRAG_K", 1)))
    p.add_argument("--event-log", dest="event_log",
                   default=env.get("LCRAG_EVENT_LOG"))
    p.add_argument("--deterministic", action="store_true",
                   help="logical clock + sequential ids (hermetic runs)")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LcragError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
